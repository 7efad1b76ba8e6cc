"""GAN-based adversarial attacks on audio deepfake detectors."""

__version__ = "0.1.0"
