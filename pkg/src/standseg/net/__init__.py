"""Compact U-Net, focal Tversky loss, Adam, and the training loop.

Everything here is plain numpy. Arrays are (batch, channels, height, width);
float32 is the working precision and float64 is available end to end for
gradient verification. All randomness comes in through seeded generators.
"""

from .loss import LossConfig, focal_tversky_loss, focal_tversky_grad, tversky_counts, tversky_index
from .optim import AdamState, TrainConfig, adam_step
from .train import HistoryEntry, history_to_csv, train
from .unet import (
    ModelParams,
    UNetConfig,
    init_params,
    parameter_count,
    predict,
    read_model,
    read_model_file,
    unet_backward,
    unet_forward,
    write_model,
    write_model_file,
)

__all__ = [
    "AdamState",
    "HistoryEntry",
    "LossConfig",
    "ModelParams",
    "TrainConfig",
    "UNetConfig",
    "adam_step",
    "focal_tversky_grad",
    "focal_tversky_loss",
    "history_to_csv",
    "init_params",
    "parameter_count",
    "predict",
    "read_model",
    "read_model_file",
    "train",
    "tversky_counts",
    "tversky_index",
    "unet_backward",
    "unet_forward",
    "write_model",
    "write_model_file",
]
