"""Resolution-progressive wavelet compression and compressed-domain
document classification."""

__version__ = "0.1.0"
