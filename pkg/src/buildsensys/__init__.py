"""Traffic-volume forecasting from building sensing data."""

__version__ = "0.1.0"
