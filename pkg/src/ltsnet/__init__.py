"""Lifelong Teacher-Student learning: a WGAN Teacher replays past tasks to a
multi-latent VAE Student, on a small self-contained autodiff core.
"""

__version__ = "0.1.0"
