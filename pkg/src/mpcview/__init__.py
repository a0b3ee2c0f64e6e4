"""Multi-layer point cloud volumes for sparse-RGBD novel view synthesis."""

__version__ = "0.1.0"
