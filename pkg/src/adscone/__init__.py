"""Numerical toolkit for maximal germs, Mess pairs and middle points on cone surfaces."""

__version__ = "0.1.0"
