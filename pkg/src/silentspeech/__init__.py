"""Desk-scale silent-speech recognition and articulatory-space analysis."""

__version__ = "0.1.0"
