"""Counterfactual regression with post-treatment variables."""

__version__ = "0.1.0"
