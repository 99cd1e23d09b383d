"""School bus routing with an open opt-out offer."""
__version__ = "0.1.0"
