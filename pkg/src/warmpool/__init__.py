"""Proactive warm-pool sizing: demand forecasting, LP schedule optimization, pool simulation."""

__version__ = "0.1.0"
