"""Continuous sign-language video classification toolkit.

Frame sequences pass through a per-frame convolutional backbone, a
transformer encoder over time, and a bidirectional LSTM classifier head.
The package covers the full loop: corpus ingest and quality checks,
signer-aware splitting, preprocessing, training with class-weighted
cross-entropy, evaluation, a synthetic gesture generator, and an ablation
harness. ``signflow.estimator`` exposes a scikit-learn style facade.
"""

from .config import (
    BackboneConfig,
    PreprocessConfig,
    RunConfig,
    SeqModelConfig,
    TrainConfig,
)
from .exceptions import (
    ConfigError,
    DataError,
    NumericError,
    SignflowError,
)

__version__ = "0.1.0"

__all__ = [
    "BackboneConfig",
    "ConfigError",
    "DataError",
    "NumericError",
    "PreprocessConfig",
    "RunConfig",
    "SeqModelConfig",
    "SignflowError",
    "TrainConfig",
    "__version__",
]
