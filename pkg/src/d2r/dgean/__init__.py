"""Slice interpolation network and its training/inference loops."""

from .model import DGEAN, DGEANConfig, GEAB, count_conv_layers, depth_features
from .ops import (LossConfig, SliceWindow, TrainConfig, baseline_interp, build_model, cubic_axial,
                  forward, infer_axial, predict_gap, reflect_index, train_dgean, window_indices)

__all__ = [
    "DGEAN", "DGEANConfig", "GEAB", "LossConfig", "SliceWindow", "TrainConfig", "baseline_interp",
    "build_model", "count_conv_layers", "cubic_axial", "depth_features", "forward", "infer_axial",
    "predict_gap", "reflect_index", "train_dgean", "window_indices",
]
