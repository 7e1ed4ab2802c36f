"""Phishing-email detection workbench."""

__version__ = "0.1.0"
