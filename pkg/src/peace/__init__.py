"""Adult-to-pediatric ECG transfer at desk scale.

Signal preprocessing, label harmonisation, tri-axial descriptors, a small
reverse-mode autodiff engine, label-query attention, label-specific
contrastive alignment with a curriculum gate, and multi-label metrics.
"""
from .errors import ConfigError, FormatError, ParseError, PeaceError, ValidationError

__version__ = "0.1.0"

__all__ = ["ConfigError", "FormatError", "ParseError", "PeaceError", "ValidationError", "__version__"]
