"""Multi-view hand priors, multi-modal fusion networks and evaluation metrics."""

__version__ = "0.1.0"
