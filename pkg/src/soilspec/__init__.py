"""Soil-moisture regression from VNIR hyperspectral and LWIR data."""

__version__ = "0.1.0"
