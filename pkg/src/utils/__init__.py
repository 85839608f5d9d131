# SSD-Net Utils Package
