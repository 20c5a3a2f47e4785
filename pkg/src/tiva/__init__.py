"""tiva: a desk-scale duplex audio-video agent engine."""

__version__ = "0.1.0"
