"""Cross-evaluation toolkit for machine-learning network intrusion detectors."""

__version__ = "0.1.0"
