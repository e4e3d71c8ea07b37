"""Attention-UNet biomass estimation from raster stacks and sparse lidar footprints."""

__version__ = "0.1.0"
