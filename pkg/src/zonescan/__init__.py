"""Body-zone segmentation and threat-zone classification for volumetric body scans."""

__version__ = "0.1.0"
