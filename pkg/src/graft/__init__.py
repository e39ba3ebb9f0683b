"""Selective graph prompt tuning on frozen GIN backbones."""

__version__ = "0.1.0"
