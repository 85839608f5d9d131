# SSD-Net Source Package
