"""PointNetPGAP place recognition with segment-level consistency training."""

__version__ = "0.1.0"
