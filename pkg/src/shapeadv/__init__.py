"""Shape-based adversarial point clouds via Gaussian-kernel deformation fields."""

__version__ = "0.1.0"
