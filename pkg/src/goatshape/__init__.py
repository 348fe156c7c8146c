"""goatshape: parametric goat body modeling, registration, and measurement."""

__version__ = "0.1.0"

FORMAT_VERSION = 1
