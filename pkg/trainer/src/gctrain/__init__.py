"""VGG16 transfer-learning trainer for the slide ROI classifier."""

__version__ = "0.1.0"
