"""Short-horizon log data to long-term outcome prediction."""

__version__ = "0.1.0"
