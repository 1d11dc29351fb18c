"""Semi-supervised sequential discrete-latent VAE for event scripts."""

__version__ = "0.1.0"
