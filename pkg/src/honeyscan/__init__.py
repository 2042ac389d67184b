"""Thermal-image screening of honey adulteration with a small from-scratch CNN."""

__version__ = "0.1.0"
