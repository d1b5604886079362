"""Visual-aligned text-to-audio latent diffusion at desk scale."""

__version__ = "0.1.0"
