"""Answer selection with multi-size convolutional encoders and two-way attention."""

__version__ = "0.1.0"
