"""Latent-space navigation: a VAE map of a toured environment, geodesic
path planning in its latent space, and route matching back to frames."""

__version__ = "0.1.0"
