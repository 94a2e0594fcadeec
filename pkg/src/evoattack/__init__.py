"""Evolutionary, query-efficient black-box adversarial attacks on image classifiers."""

__version__ = "0.1.0"
