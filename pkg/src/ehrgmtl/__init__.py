"""Multi-task graph learning for drug-resistance prediction from binary health records."""

__version__ = "0.1.0"
