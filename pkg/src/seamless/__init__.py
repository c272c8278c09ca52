"""Seamless dose escalation with sequential efficacy evaluation."""

__version__ = "0.1.0"
