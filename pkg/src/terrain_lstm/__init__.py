"""Semi-supervised stacked-LSTM terrain classification for legged robots."""

__version__ = "0.1.0"
