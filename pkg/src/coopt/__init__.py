"""Joint scheduling of an electric bus fleet and a DC power network."""

__version__ = "0.1.0"
