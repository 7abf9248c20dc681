"""Conditional U-Net estimating diffusion noise from (x_t, mu, t)."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass(frozen=True)
class PredictorConfig:
    base_channels: int = 32
    n_scales: int = 4
    time_dim: int = 64
    groups: int = 8
    # "x0": the head estimates the clean slice, converted to noise via the forward marginal
    parameterization: str = "x0"

    def __post_init__(self):
        if self.base_channels < 1 or self.n_scales < 1 or self.time_dim < 2:
            raise ValueError(f"invalid predictor config {self}")
        if self.parameterization not in ("x0", "eps"):
            raise ValueError(f"parameterization must be 'x0' or 'eps', got {self.parameterization!r}")

    def to_dict(self) -> dict:
        return asdict(self)


def sinusoidal_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float32) / half)
    args = t.float()[:, None] * freqs[None].to(t.device)
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


class ResBlock(nn.Module):
    def __init__(self, cin, cout, time_dim, groups):
        super().__init__()
        self.norm1 = nn.GroupNorm(min(groups, cin), cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.time = nn.Linear(time_dim, cout)
        self.norm2 = nn.GroupNorm(min(groups, cout), cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, temb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time(temb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class NoisePredictor(nn.Module):
    """Light U-Net f(x_t, mu, t) -> noise; inputs are concatenated channel-wise.

    Arbitrary image sizes are handled by reflect-padding to a multiple of
    2**(n_scales-1) and cropping the output back.

    With the ``x0`` parameterization the U-Net output is a clean-slice
    residual over mu, and the returned noise is
    (x_t - mu - (x0_hat - mu) exp(-lambda_bar_t)) / sqrt(n_t). This needs the
    schedule's marginal coefficients, stored as buffers.
    """

    def __init__(self, config: PredictorConfig = PredictorConfig(), schedule=None):
        super().__init__()
        self.config = config
        self.schedule = schedule
        if config.parameterization == "x0":
            if schedule is None:
                raise ValueError("x0 parameterization needs the SDE schedule")
            lb = torch.tensor(np.array(schedule.lambda_bar, dtype=np.float64))
            self.register_buffer("decay", torch.exp(-lb))
            self.register_buffer("std", torch.sqrt(schedule.delta_sq * -torch.expm1(-2 * lb)))
        c, td = config.base_channels, config.time_dim
        chans = [c * min(2 ** i, 4) for i in range(config.n_scales)]
        self.time_mlp = nn.Sequential(nn.Linear(td, td * 2), nn.SiLU(), nn.Linear(td * 2, td))
        self.inp = nn.Conv2d(2, chans[0], 3, padding=1)
        self.down = nn.ModuleList()
        self.pool = nn.ModuleList()
        for i, ch in enumerate(chans):
            prev = chans[max(i - 1, 0)]
            self.down.append(ResBlock(prev, ch, td, config.groups))
            if i < len(chans) - 1:
                self.pool.append(nn.Conv2d(ch, ch, 3, stride=2, padding=1))
        self.mid = ResBlock(chans[-1], chans[-1], td, config.groups)
        self.up = nn.ModuleList()
        self.upsample = nn.ModuleList()
        for i in reversed(range(len(chans) - 1)):
            self.upsample.append(nn.ConvTranspose2d(chans[i + 1], chans[i], 2, stride=2))
            self.up.append(ResBlock(2 * chans[i], chans[i], td, config.groups))
        self.out_norm = nn.GroupNorm(min(config.groups, chans[0]), chans[0])
        self.out = nn.Conv2d(chans[0], 1, 3, padding=1)
        if config.parameterization == "x0":
            # start from x0_hat = mu, i.e. the plain bicubic estimate
            nn.init.zeros_(self.out.weight)
            nn.init.zeros_(self.out.bias)
        # flagged once fitted; sampling refuses untrained weights
        self.register_buffer("trained", torch.tensor(False))

    def forward(self, x_t: torch.Tensor, mu: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        h0, w0 = x_t.shape[-2:]
        m = 2 ** (self.config.n_scales - 1)
        ph, pw = (-h0) % m, (-w0) % m
        inp = torch.cat([x_t - mu, mu], dim=1)
        if ph or pw:
            mode = "reflect" if ph < h0 and pw < w0 else "replicate"
            inp = F.pad(inp, (0, pw, 0, ph), mode=mode)
        temb = self.time_mlp(sinusoidal_embedding(t, self.config.time_dim))
        h = self.inp(inp)
        skips = []
        for i, block in enumerate(self.down):
            h = block(h, temb)
            if i < len(self.pool):
                skips.append(h)
                h = self.pool[i](h)
        h = self.mid(h, temb)
        for up, block in zip(self.upsample, self.up):
            h = up(h)
            h = block(torch.cat([h, skips.pop()], dim=1), temb)
        out = self.out(F.silu(self.out_norm(h)))[..., :h0, :w0]
        if self.config.parameterization == "eps":
            return out
        decay = self.decay[t].to(x_t.dtype).view(-1, 1, 1, 1)
        std = self.std[t].to(x_t.dtype).view(-1, 1, 1, 1)
        return (x_t - mu - out * decay) / std

    def mark_trained(self, flag: bool = True) -> None:
        self.trained.fill_(flag)

    @property
    def is_trained(self) -> bool:
        return bool(self.trained)
