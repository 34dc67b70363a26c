"""Learning-augmented MPC path tracking with random-forest leaf-linear residual models."""

__version__ = "0.1.0"
