"""Kahler Ricci flow laboratory for symmetric metrics on CP1 and CP2."""
__version__ = "0.1.0"
