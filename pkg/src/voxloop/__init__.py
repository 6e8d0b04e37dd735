"""voxloop: a self-improving voxel-world assistant with a simulated annotation loop."""

__version__ = "0.1.0"
