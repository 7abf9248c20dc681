"""Mean-reverting SDE diffusion for lateral slice restoration."""

from .model import NoisePredictor, PredictorConfig
from .schedule import SDESchedule
from .sde import (
    diffusion_loss,
    forward_sample,
    ideal_prev_state,
    posterior_coefficients,
    predicted_prev_mean,
    reverse_sample,
    state_mean,
    state_var,
    terminal_state,
)
from .train import OptimizerConfig, restore_slice, restore_slices, train_diffusion

__all__ = [
    "NoisePredictor", "PredictorConfig", "SDESchedule", "OptimizerConfig",
    "diffusion_loss", "forward_sample", "ideal_prev_state", "posterior_coefficients",
    "predicted_prev_mean", "reverse_sample", "state_mean", "state_var", "terminal_state",
    "restore_slice", "restore_slices", "train_diffusion",
]
