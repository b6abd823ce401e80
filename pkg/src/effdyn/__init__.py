"""Transfer operators, committors and effective dynamics of collective variables."""

__version__ = "0.1.0"
