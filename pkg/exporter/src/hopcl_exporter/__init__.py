"""Frozen-encoder embedding exporter writing the HOPD dataset format."""

__version__ = "0.1.0"
