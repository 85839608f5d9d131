# SSD-Net Command Handlers
