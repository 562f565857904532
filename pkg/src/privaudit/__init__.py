"""Audit Android app privacy policies against their Play Store Data Safety labels."""

__version__ = "0.1.0"
