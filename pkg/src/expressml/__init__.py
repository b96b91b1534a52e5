"""Multi-class cancer-type classification from long-format RNA-seq z-scores."""

__version__ = "0.1.0"
