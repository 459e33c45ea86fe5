"""Sample-averaged synchronous Q-learning with online random-scaling inference."""

__version__ = "0.1.0"
