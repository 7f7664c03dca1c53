"""Residual weight-mask conditional GAN for few-shot augmentation."""
__version__ = "0.1.0"
