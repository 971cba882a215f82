"""Tree GP for symbolic regression with random, informed and outlier-aware informed down-sampling."""

__version__ = "0.1.0"
