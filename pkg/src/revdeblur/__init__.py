"""Reversible multi-column deblurring with adaptive patch exiting."""
__version__ = "0.1.0"
