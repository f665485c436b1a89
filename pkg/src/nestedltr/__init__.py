"""Learning-to-rank with nested (two-level) feed feedback."""

__version__ = "0.1.0"
