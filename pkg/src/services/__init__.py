# SSD-Net Services Package
