"""Policy-gradient GAN for discrete limit-order generation."""

__version__ = "0.1.0"
