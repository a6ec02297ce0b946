"""Novel and explainable matrix factorisation for top-N recommendation."""

__version__ = "0.1.0"
