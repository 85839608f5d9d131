# SSD-Net Autodiff Core
