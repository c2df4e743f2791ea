"""Cascaded speech enhancement and speaker recognition with multi-stage attention."""

__version__ = "0.1.0"
