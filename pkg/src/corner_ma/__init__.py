"""Corner asymptotics for the two-dimensional Monge-Ampère equation."""

__version__ = "0.1.0"
