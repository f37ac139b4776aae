"""GroupEnc: variational encoders trained with a scale-free group loss.

Also provides the baseline VAE, R_NX structure-preservation scoring,
expression-matrix preprocessing and a benchmark harness.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    ContractError,
    DomainError,
    FormatError,
    GroupEncError,
    NumericError,
    ShapeError,
    StateError,
)
from .models import ModelConfig, embed  # noqa: E402
from .rnx import RnxResult, evaluate  # noqa: E402
from .trainer import TrainConfig, TrainLog, resume, train  # noqa: E402

__all__ = [
    "ConfigError",
    "ContractError",
    "DomainError",
    "FormatError",
    "GroupEncError",
    "NumericError",
    "ShapeError",
    "StateError",
    "ModelConfig",
    "TrainConfig",
    "TrainLog",
    "RnxResult",
    "embed",
    "evaluate",
    "resume",
    "train",
]
