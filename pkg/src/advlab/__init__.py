"""Adversarial ML laboratory for traffic-feature malware classifiers."""

__version__ = "0.1.0"
