"""Semi-supervised VAE toolkit with label-conditioned characteristic latents."""

__version__ = "0.1.0"
