"""Memory-conditioned diffusion policies with a perceptual-cognitive memory bank."""

__version__ = "0.1.0"
