"""Desk-scale CNN trainer and exporter for the attack toolkit."""

__version__ = "0.1.0"
