"""Window sampling, training and axial inference for the interpolation network."""

from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch

from ..interp import window_interp
from ..losses import ExtractorConfig, LossWeights, build_extractor, total_loss
from ..volume import Plane, SliceImage, Volume
from .model import DGEAN, DGEANConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SliceWindow:
    """2n equally spaced slices and the relative depth d of the wanted slice."""

    slices: tuple[SliceImage, ...]
    d: float

    def __post_init__(self):
        object.__setattr__(self, "slices", tuple(self.slices))
        if len(self.slices) < 2 or len(self.slices) % 2:
            raise ValueError(f"window needs an even number >= 2 of slices, got {len(self.slices)}")
        if len({s.data.shape for s in self.slices}) != 1:
            raise ValueError("window slices must share dimensions")
        if not 0.0 < self.d < 1.0:
            raise ValueError(f"relative depth must lie in (0, 1), got {self.d}")

    def tensor(self) -> torch.Tensor:
        return torch.from_numpy(np.stack([s.data for s in self.slices]).astype(np.float32))[None]


@dataclass(frozen=True)
class LossConfig:
    weights: LossWeights = field(default_factory=LossWeights)
    extractor: ExtractorConfig = field(default_factory=ExtractorConfig)

    def to_dict(self) -> dict:
        return {"weights": self.weights.to_dict(), "extractor": asdict(self.extractor)}


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 2e-4
    betas: tuple[float, float] = (0.9, 0.99)
    steps: int = 2000
    batch_size: int = 4
    patch: tuple[int, int] = (32, 32)
    val_windows: int = 16
    val_every: int = 100
    # halve the learning rate after this many evaluations without improvement
    plateau_patience: int = 3
    grad_clip: float = 1.0
    augment: bool = True

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"], d["patch"] = list(self.betas), list(self.patch)
        return d


def build_model(config: DGEANConfig = DGEANConfig(), seed: int = 0) -> DGEAN:
    return DGEAN(config, seed)


def baseline_interp(window: SliceWindow) -> SliceImage:
    """Catmull-Rom interpolation between the two central slices at depth d."""
    out = window_interp(torch.from_numpy(np.stack([s.data for s in window.slices]).astype(np.float64))[None],
                        window.d)[0].numpy()
    ref = window.slices[len(window.slices) // 2 - 1]
    return SliceImage(np.clip(out, 0.0, 1.0), ref.source_plane, ref.source_index)


def forward(model: DGEAN, window: SliceWindow) -> SliceImage:
    model.eval()
    with torch.no_grad():
        out = model(window.tensor(), window.d)[0].numpy()
    ref = window.slices[len(window.slices) // 2 - 1]
    return SliceImage(np.clip(out, 0.0, 1.0), ref.source_plane, ref.source_index)


def predict_gap(model: DGEAN, window_slices: Sequence[SliceImage], r: int) -> list[SliceImage]:
    """The r-1 slices between the central pair, at d = j/r for j = 1..r-1."""
    if r < 2:
        raise ValueError("r must be >= 2")
    win = SliceWindow(tuple(window_slices), 0.5)
    x = win.tensor().expand(r - 1, -1, -1, -1)
    d = torch.arange(1, r, dtype=torch.float32) / r
    model.eval()
    with torch.no_grad():
        out = model(x, d).clamp_(0.0, 1.0).numpy()
    ref = window_slices[len(window_slices) // 2 - 1]
    return [SliceImage(o, ref.source_plane, ref.source_index) for o in out]


# -- sampling ---------------------------------------------------------------

def reflect_index(idx, n: int) -> np.ndarray:
    """Mirror indices into [0, n) without repeating the edge sample."""
    idx = np.asarray(idx, dtype=np.int64)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.abs(idx) % period
    return np.where(idx >= n, period - idx, idx)


def window_indices(anchor: int, r: int, n_context: int, n: int) -> np.ndarray:
    """Context positions anchor + k*r for k = -(n-1)..n, reflected into range."""
    half = n_context // 2
    return reflect_index(anchor + r * np.arange(-(half - 1), half + 1), n)


def sample_window(rng: np.random.Generator, length: int, r: int, n_context: int):
    """Random anchor and its (context, target) indices along an axis of ``length``."""
    anchor = int(rng.integers(0, length - r))
    ctx = window_indices(anchor, r, n_context, length)
    targets = anchor + np.arange(1, r)
    return anchor, ctx, targets


def min_extent(r: int, n_context: int) -> int:
    return (n_context - 1) * r + 1


class _WindowSampler:
    """Draws (context, targets) patches along the given volume axes."""

    def __init__(self, data: np.ndarray, axes: Sequence[int], r: int, n_context: int,
                 patch: tuple[int, int], augment: bool):
        self.data, self.axes, self.r, self.n = data, list(axes), r, n_context
        self.patch, self.augment = patch, augment

    def draw(self, rng: np.random.Generator):
        axis = self.axes[int(rng.integers(len(self.axes)))]
        length = self.data.shape[axis]
        _, ctx, tgt = sample_window(rng, length, self.r, self.n)
        idx = np.concatenate([ctx, tgt])
        stack = np.take(self.data, idx, axis=axis)
        stack = np.moveaxis(stack, axis, 0)  # (n_ctx + r - 1, A, B)
        a, b = stack.shape[1:]
        ph, pw = min(self.patch[0], a), min(self.patch[1], b)
        y0 = int(rng.integers(a - ph + 1))
        x0 = int(rng.integers(b - pw + 1))
        stack = stack[:, y0:y0 + ph, x0:x0 + pw]
        if self.augment:
            if rng.random() < 0.5:
                stack = stack[:, ::-1]
            if rng.random() < 0.5:
                stack = stack[:, :, ::-1]
            if ph == pw and rng.random() < 0.5:
                stack = stack.transpose(0, 2, 1)
        stack = np.ascontiguousarray(stack, dtype=np.float32)
        return stack[:self.n], stack[self.n:]

    def batch(self, rng, size):
        ctx, tgt = zip(*(self.draw(rng) for _ in range(size)))
        return torch.from_numpy(np.stack(ctx)), torch.from_numpy(np.stack(tgt))


def _predict_all(model: DGEAN, ctx: torch.Tensor, r: int) -> torch.Tensor:
    """(B, 2n, H, W) -> (B, r-1, H, W) predictions at d = j/r."""
    b = ctx.shape[0]
    d = (torch.arange(1, r, dtype=ctx.dtype) / r).repeat(b)
    x = ctx.repeat_interleave(r - 1, dim=0)
    return model(x, d).view(b, r - 1, *ctx.shape[-2:])


def window_loss(model, ctx, tgt, r, weights: LossWeights, P) -> torch.Tensor:
    pred = _predict_all(model, ctx, r)
    n = ctx.shape[1] // 2
    preds = [pred[:, j:j + 1] for j in range(r - 1)]
    targets = [tgt[:, j:j + 1] for j in range(r - 1)]
    anchors = (ctx[:, n - 1:n], ctx[:, n:n + 1])
    return total_loss(preds, targets, anchors, weights, P)


def train_dgean(model: DGEAN, training_volume: Volume, r: int,
                losses_config: LossConfig | None = LossConfig(),
                optimizer_config: TrainConfig = TrainConfig(), seed: int = 0,
                axes: Sequence[int] = (2, 1)) -> DGEAN:
    """Fit the network on windows drawn along ``axes`` of the training volume.

    The default axes are X then Y (lateral sequences). Each window supervises
    all r-1 intermediate slices; the checkpoint with the best validation
    PSNR is returned with the loss history attached as ``model.history``.
    """
    if losses_config is None:
        raise ValueError("a loss configuration is required")
    oc = optimizer_config
    n_ctx = model.config.n_context
    data = training_volume.data
    need = min_extent(r, n_ctx)
    for ax in axes:
        if data.shape[ax] < need:
            raise ValueError(f"axis {ax} has extent {data.shape[ax]}; windows at r={r} need >= {need}")
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    sampler = _WindowSampler(data, axes, r, n_ctx, oc.patch, oc.augment)
    val_ctx, val_tgt = sampler.batch(np.random.default_rng(seed + 104_729), oc.val_windows)
    P = build_extractor(losses_config.extractor) if losses_config.weights.lambda_cont else None
    weights = losses_config.weights

    def validate():
        model.eval()
        with torch.no_grad():
            pred = _predict_all(model, val_ctx, r)
            mse = float(((pred - val_tgt) ** 2).mean())
            loss = float(window_loss(model, val_ctx, val_tgt, r, weights, P))
        return mse, loss

    opt = torch.optim.Adam(model.parameters(), lr=oc.lr, betas=oc.betas)
    best_mse, val_loss = validate()
    best_state = copy.deepcopy(model.state_dict())
    history = {"train": [], "val_mse": [(0, best_mse)], "val_loss": [(0, val_loss)],
               "initial_val_loss": val_loss, "initial_val_mse": best_mse}
    stale = 0
    for step in range(1, oc.steps + 1):
        model.train()
        ctx, tgt = sampler.batch(rng, oc.batch_size)
        loss = window_loss(model, ctx, tgt, r, weights, P)
        opt.zero_grad()
        loss.backward()
        if oc.grad_clip:
            torch.nn.utils.clip_grad_norm_(model.parameters(), oc.grad_clip)
        opt.step()
        history["train"].append(float(loss.detach()))
        if step % oc.val_every == 0 or step == oc.steps:
            mse, vloss = validate()
            history["val_mse"].append((step, mse))
            history["val_loss"].append((step, vloss))
            log.info("dgean step %d loss %.5f val mse %.6f val loss %.5f", step, float(loss.detach()), mse, vloss)
            if mse < best_mse:
                best_mse, stale = mse, 0
                best_state = copy.deepcopy(model.state_dict())
            else:
                stale += 1
                if stale >= oc.plateau_patience:
                    for group in opt.param_groups:
                        group["lr"] *= 0.5
                    stale = 0
    model.load_state_dict(best_state)
    model.eval()
    history["best_val_mse"] = best_mse
    history["trained_r"] = r
    model.history = history
    return model


def infer_axial(model: DGEAN, v_low: Volume, r: int, batch_size: int = 8) -> Volume:
    """Fill r-1 slices between every pair of axial slices.

    Output depth is r*(Z-1)+1 with input slice k copied verbatim to k*r.
    """
    if r < 2:
        raise ValueError("r must be >= 2")
    n_ctx = model.config.n_context
    zl = v_low.shape[0]
    if zl < n_ctx:
        raise ValueError(f"need at least {n_ctx} axial slices, got {zl}")
    data = v_low.data
    out = np.empty((r * (zl - 1) + 1, *v_low.shape[1:]), dtype=np.float32)
    out[::r] = data
    d = torch.arange(1, r, dtype=torch.float32) / r
    model.eval()
    gaps = list(range(zl - 1))
    per = max(1, batch_size // (r - 1))
    with torch.no_grad():
        for s in range(0, len(gaps), per):
            chunk = gaps[s:s + per]
            ctx = torch.from_numpy(np.stack([data[window_indices(k, 1, n_ctx, zl)] for k in chunk]))
            pred = model(ctx.repeat_interleave(r - 1, dim=0), d.repeat(len(chunk)))
            pred = pred.clamp_(0.0, 1.0).view(len(chunk), r - 1, *data.shape[1:]).numpy()
            for k, p in zip(chunk, pred):
                out[k * r + 1:(k + 1) * r] = p
    z, y, x = v_low.voxel_size_nm
    return Volume(out, (z / r, y, x))


def cubic_axial(v_low: Volume, r: int) -> Volume:
    """Classical baseline: Catmull-Rom upsampling along Z on the same grid."""
    from ..interp import upsample_axis
    data = np.clip(upsample_axis(v_low.data, 0, r), 0.0, 1.0)
    z, y, x = v_low.voxel_size_nm
    return Volume(data, (z / r, y, x))
