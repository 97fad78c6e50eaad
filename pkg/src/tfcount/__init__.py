"""Training-free class-agnostic counting with superpixel-prompted segmentation."""
from .config import RunConfig, load_config, mock_config
from .errors import (
    BackendLoadError,
    ConfigError,
    CountingError,
    IngestionError,
    InvalidInputError,
    InvalidParameterError,
    ReferenceFailureError,
)
from .matching import CountResult, Prototype
from .pipeline import Counter
from .proposals import ReferenceSpec
from .structures import Box, MaskProposal, Point

__version__ = "0.1.0"

__all__ = [
    "BackendLoadError", "Box", "ConfigError", "CountResult", "Counter", "CountingError",
    "IngestionError", "InvalidInputError", "InvalidParameterError", "MaskProposal", "Point",
    "Prototype", "ReferenceFailureError", "ReferenceSpec", "RunConfig", "load_config", "mock_config",
]
