# SSD-Net Model Package
