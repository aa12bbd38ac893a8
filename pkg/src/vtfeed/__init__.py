"""Analytics for multi-engine scan-report feeds: features, clustering, hunting."""

__version__ = "0.1.0"
