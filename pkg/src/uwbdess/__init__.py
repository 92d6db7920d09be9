"""Signal-strength distance estimation for UWB transceivers."""

__version__ = "0.1.0"
