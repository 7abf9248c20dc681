"""Fitting the noise predictor and restoring laterally degraded slices."""

from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import torch

from ..degradation import upsample_rows
from ..volume import SliceImage
from .model import NoisePredictor, PredictorConfig
from .schedule import SDESchedule
from .sde import diffusion_loss, reverse_sample

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 2e-4
    betas: tuple[float, float] = (0.9, 0.99)
    steps: int = 1000
    batch_size: int = 8
    val_fraction: float = 0.1
    val_every: int = 50
    grad_clip: float = 1.0
    # None keeps the learning rate constant
    lr_decay_at: float | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


def _stack(pairs) -> tuple[torch.Tensor, torch.Tensor]:
    clean = torch.stack([torch.from_numpy(np.array(c.data, dtype=np.float32)) for _, c in pairs])
    degraded = torch.stack([torch.from_numpy(np.array(d.data, dtype=np.float32)) for d, _ in pairs])
    return clean[:, None], degraded[:, None]


def evaluate_loss(model, clean, degraded, sched, seed: int, batch_size: int = 32) -> float:
    """Seeded diffusion loss averaged over a fixed set of pairs."""
    total, n = 0.0, clean.shape[0]
    with torch.no_grad():
        for k, s in enumerate(range(0, n, batch_size)):
            sl = slice(s, s + batch_size)
            loss = diffusion_loss(model, (clean[sl], degraded[sl]), sched, seed + k)
            total += float(loss) * clean[sl].shape[0]
    return total / n


def train_diffusion(pairs: Sequence[tuple[SliceImage, SliceImage]], sched: SDESchedule,
                    predictor_config: PredictorConfig = PredictorConfig(),
                    optimizer_config: OptimizerConfig = OptimizerConfig(),
                    seed: int = 0, model: NoisePredictor | None = None) -> NoisePredictor:
    """Maximum-likelihood training on (degraded, clean) pairs.

    Returns the weights with the lowest seeded validation loss; the loss
    history is attached as ``model.history``.
    """
    if len(pairs) == 0:
        raise ValueError("empty training set")
    oc = optimizer_config
    torch.manual_seed(seed)
    if model is None:
        model = NoisePredictor(predictor_config, sched)
    clean, degraded = _stack(pairs)
    n = clean.shape[0]
    g = torch.Generator().manual_seed(seed)
    perm = torch.randperm(n, generator=g)
    n_val = int(round(oc.val_fraction * n)) if n > 1 else 0
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if n_val == 0:
        val_idx = train_idx
    vc, vd = clean[val_idx], degraded[val_idx]
    val_seed = seed + 7_919

    opt = torch.optim.Adam(model.parameters(), lr=oc.lr, betas=oc.betas)
    model.eval()
    best = evaluate_loss(model, vc, vd, sched, val_seed)
    best_state = copy.deepcopy(model.state_dict())
    history = {"train": [], "val": [(0, best)], "initial_val": best}
    for step in range(1, oc.steps + 1):
        if oc.lr_decay_at is not None and step == int(oc.lr_decay_at * oc.steps):
            for group in opt.param_groups:
                group["lr"] *= 0.5
        model.train()
        idx = train_idx[torch.randint(len(train_idx), (min(oc.batch_size, len(train_idx)),), generator=g)]
        loss = diffusion_loss(model, (clean[idx], degraded[idx]), sched, seed * 1_000_003 + step)
        opt.zero_grad()
        loss.backward()
        if oc.grad_clip:
            torch.nn.utils.clip_grad_norm_(model.parameters(), oc.grad_clip)
        opt.step()
        history["train"].append(float(loss.detach()))
        if step % oc.val_every == 0 or step == oc.steps:
            model.eval()
            val = evaluate_loss(model, vc, vd, sched, val_seed)
            history["val"].append((step, val))
            log.info("diffusion step %d loss %.5f val %.5f", step, float(loss.detach()), val)
            if val < best:
                best = val
                best_state = copy.deepcopy(model.state_dict())
    model.load_state_dict(best_state)
    model.eval()
    model.mark_trained()
    history["best_val"] = best
    model.history = history
    return model


def _check_ready(predictor: NoisePredictor) -> None:
    if not getattr(predictor, "is_trained", True):
        raise RuntimeError("noise predictor is untrained; fit it with train_diffusion first")


def restore_slices(predictor: NoisePredictor, degraded: Sequence[SliceImage], sched: SDESchedule,
                   seeds: Sequence[int], r: int, batch_size: int = 16) -> list[SliceImage]:
    """Restore row-degraded slices to r*(H-1)+1 rows, one seed per slice."""
    _check_ready(predictor)
    if len(seeds) != len(degraded):
        raise ValueError("need one seed per slice")
    predictor.eval()
    out: list[SliceImage] = []
    for s in range(0, len(degraded), batch_size):
        chunk = degraded[s:s + batch_size]
        shapes = {c.data.shape for c in chunk}
        if len(shapes) != 1:
            raise ValueError(f"slices in a batch must share dims, got {sorted(shapes)}")
        mu = torch.stack([torch.from_numpy(upsample_rows(c, r)) for c in chunk])[:, None]
        gens = [torch.Generator().manual_seed(int(sd)) for sd in seeds[s:s + batch_size]]
        x0 = reverse_sample(predictor, mu, sched, gens, clip_x0=(0.0, 1.0)).clamp_(0.0, 1.0)
        for c, img in zip(chunk, x0[:, 0].numpy()):
            out.append(SliceImage(img, c.source_plane, c.source_index))
    return out


def restore_slice(predictor: NoisePredictor, degraded: SliceImage, sched: SDESchedule,
                  seed: int, r: int) -> SliceImage:
    """Reverse-SDE restoration of one slice from upsample(degraded) + N(0, delta^2)."""
    return restore_slices(predictor, [degraded], sched, [seed], r, batch_size=1)[0]
