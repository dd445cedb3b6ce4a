"""Doppler-aware binaural rendering: radial-velocity conditioning, a
physical fractional-delay renderer, a small conditioned warp model and
evaluation metrics."""

__version__ = "0.1.0"
