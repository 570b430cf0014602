"""CapsuleNet + LSTM deepfake detector."""

from ._core import (
    Error,
    Model,
    ModelConfig,
    gradcam_map,
    roc_auc,
    routing,
    run_cli,
    squash,
)

__all__ = [
    "Error",
    "Model",
    "ModelConfig",
    "gradcam_map",
    "roc_auc",
    "routing",
    "run_cli",
    "squash",
]
