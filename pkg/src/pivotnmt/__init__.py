"""Desk-scale pivot-based transfer learning for sequence-to-sequence translation."""

__version__ = "0.1.0"
