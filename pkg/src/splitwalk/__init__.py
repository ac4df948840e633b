"""Two-dimensional split-step quantum walks with position-dependent U(2) coins."""

__version__ = "0.1.0"
