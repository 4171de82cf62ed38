"""HAM-Net weakly-supervised temporal action localization on snippet features."""

__version__ = "0.1.0"
