"""Stock-price forecasting from per-day text features.

Ingest feature tables and prices, align them on the trading calendar,
impute news-free days, select features, fit seven regressors and compare
them with MAPE, NRMSE and Diebold-Mariano tests.
"""

__version__ = "0.1.0"


class NewsforgeError(Exception):
    """Base class for errors raised by this package."""


class DataError(NewsforgeError, ValueError):
    """Input data violates a documented contract."""


class ConfigError(NewsforgeError, ValueError):
    """Experiment configuration is invalid."""


class ConvergenceError(NewsforgeError, RuntimeError):
    """An iterative solver stopped before reaching its tolerance."""
