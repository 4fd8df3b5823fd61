"""Socio-spatial contagion detection in spatio-temporal adoption events."""

__version__ = "0.1.0"
