"""Market impact games and the transient impact kernels implied by them."""

__version__ = "0.1.0"
