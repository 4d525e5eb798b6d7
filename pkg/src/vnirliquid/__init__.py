"""Container and content classification from dual-spectrometer VNIR readings."""

__version__ = "0.1.0"
