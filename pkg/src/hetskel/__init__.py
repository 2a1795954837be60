"""Open-vocabulary action recognition over heterogeneous skeleton formats."""

__version__ = "0.1.0"
