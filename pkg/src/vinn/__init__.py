"""Voxel-size independent segmentation networks on a small numpy autograd."""

__version__ = "0.1.0"
