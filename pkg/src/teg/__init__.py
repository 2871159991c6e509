"""TeG: temporal-granularity anomaly detection on per-chunk video features."""

__all__ = ["__version__"]

__version__ = "0.1.0"
