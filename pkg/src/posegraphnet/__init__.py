"""Joint position and bone orientation lifting with node/edge graph convolutions."""

__version__ = "0.1.0"
