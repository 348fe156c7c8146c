"""Exception hierarchy shared across the toolkit."""


class GoatshapeError(Exception):
    """Base class for all toolkit errors."""


class MeshError(GoatshapeError):
    """Invalid mesh data (bad indices, degenerate faces, non-manifold edges)."""


class ConfigError(GoatshapeError):
    """Invalid configuration or input parameters."""


class FileFormatError(GoatshapeError):
    """Malformed or unsupported file content."""


class FitError(GoatshapeError):
    """Optimization failure (divergence, singular systems)."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class NaNLossError(FitError):
    """A loss term evaluated to NaN; carries the offending term name."""

    def __init__(self, term, diagnostics=None):
        super().__init__(f"loss term {term!r} evaluated to NaN", diagnostics)
        self.term = term
