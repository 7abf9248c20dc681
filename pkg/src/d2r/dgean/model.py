"""3D interpolation network predicting one intermediate slice from a 2n-slice window."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..interp import window_interp


@dataclass(frozen=True)
class DGEANConfig:
    n_context: int = 4
    encoder_channels: tuple[int, ...] = (32, 64, 128, 256, 256)
    gaussian_embed_dim: int = 32
    gaussian_sigma: float = 10.0
    depth_embed_dim: int = 32
    attention_reduction: int = 8
    # voxels spanned by a unit of the normalized in-plane coordinate
    position_scale: float = 64.0

    def __post_init__(self):
        object.__setattr__(self, "encoder_channels", tuple(int(c) for c in self.encoder_channels))
        if len(self.encoder_channels) != 5:
            raise ValueError(f"DGEAN needs exactly 5 encoder stages, got {len(self.encoder_channels)}")
        if any(c < 1 for c in self.encoder_channels):
            raise ValueError("encoder channels must be positive")
        if self.n_context < 2 or self.n_context % 2:
            raise ValueError(f"n_context must be even and >= 2, got {self.n_context}")
        if self.gaussian_embed_dim < 2 or self.gaussian_embed_dim % 2:
            raise ValueError("gaussian_embed_dim must be even and >= 2")
        if self.depth_embed_dim < 2 or self.depth_embed_dim % 2:
            raise ValueError("depth_embed_dim must be even and >= 2")
        if self.gaussian_sigma <= 0 or self.attention_reduction < 1 or self.position_scale <= 0:
            raise ValueError(f"invalid DGEAN config {self}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_channels"] = list(self.encoder_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DGEANConfig":
        return cls(**{**d, "encoder_channels": tuple(d["encoder_channels"])})


class GaussianPositionEmbedding(nn.Module):
    """Frozen random Fourier features of (z, y, x) grid coordinates."""

    def __init__(self, dim: int, sigma: float, scale: float, generator: torch.Generator):
        super().__init__()
        self.scale = scale
        self.register_buffer("freqs", torch.randn(dim // 2, 3, generator=generator) * sigma)

    def forward(self, depth: int, h: int, w: int, stride: int, dtype, device) -> torch.Tensor:
        z = (torch.arange(depth, dtype=dtype, device=device) - (depth - 1) / 2) / depth
        y = torch.arange(h, dtype=dtype, device=device) * stride / self.scale
        x = torch.arange(w, dtype=dtype, device=device) * stride / self.scale
        grid = torch.stack(torch.meshgrid(z, y, x, indexing="ij"), dim=-1)
        proj = 2 * math.pi * grid @ self.freqs.to(dtype).T
        emb = torch.cat([proj.cos(), proj.sin()], dim=-1)
        return emb.permute(3, 0, 1, 2)[None]  # (1, dim, D, H, W)


class ChannelAttention3d(nn.Module):
    """Squeeze-excitation gating over 3D feature channels."""

    def __init__(self, channels: int, reduction: int):
        super().__init__()
        hidden = max(channels // reduction, 4)
        self.fc1 = nn.Linear(channels, hidden)
        self.fc2 = nn.Linear(hidden, channels)

    def forward(self, x):
        s = x.mean(dim=(2, 3, 4))
        s = torch.sigmoid(self.fc2(F.relu(self.fc1(s))))
        return x * s[:, :, None, None, None]


def depth_features(d: torch.Tensor, dim: int) -> torch.Tensor:
    k = torch.arange(1, dim // 2 + 1, dtype=d.dtype, device=d.device)
    arg = math.pi * d[:, None] * k[None]
    return torch.cat([arg.sin(), arg.cos()], dim=-1)


class ResBlock3d(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.conv1 = nn.Conv3d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv3d(channels, channels, 3, padding=1)

    def forward(self, x):
        return F.relu(x + self.conv2(F.relu(self.conv1(x))))


class GEAB(nn.Module):
    """Gaussian embedding attention block.

    position-encoding conv (+ projected Gaussian embedding) -> channel
    attention -> relative-depth scale/shift, followed by residual 3D conv
    blocks. The first conv of the first residual block is the position conv
    itself, so a stage with ``n_blocks`` blocks holds 2 * n_blocks convs.
    """

    def __init__(self, cin, cout, stride, n_blocks, cfg: DGEANConfig, generator):
        super().__init__()
        self.stride = stride
        self.pos_conv = nn.Conv3d(cin, cout, 3, stride=(1, stride, stride), padding=1)
        self.pos = GaussianPositionEmbedding(cfg.gaussian_embed_dim, cfg.gaussian_sigma,
                                             cfg.position_scale, generator)
        self.pos_proj = nn.Conv3d(cfg.gaussian_embed_dim, cout, 1, bias=False)
        self.attn = ChannelAttention3d(cout, cfg.attention_reduction)
        self.film = nn.Linear(cfg.depth_embed_dim, 2 * cout)
        if n_blocks > 0:
            self.conv2 = nn.Conv3d(cout, cout, 3, padding=1)
            self.skip = (nn.Conv3d(cin, cout, 1, stride=(1, stride, stride))
                         if (cin != cout or stride != 1) else nn.Identity())
        else:
            self.conv2 = None
        self.blocks = nn.Sequential(*[ResBlock3d(cout) for _ in range(max(n_blocks - 1, 0))])

    def forward(self, x, demb, in_stride: int):
        h = self.pos_conv(x)
        _, _, dd, hh, ww = h.shape
        pe = self.pos(dd, hh, ww, in_stride * self.stride, h.dtype, h.device)
        h = self.attn(h + self.pos_proj(pe))
        gamma, beta = self.film(demb).chunk(2, dim=-1)
        h = h * (1 + gamma[:, :, None, None, None]) + beta[:, :, None, None, None]
        h = F.relu(h)
        if self.conv2 is not None:
            h = F.relu(self.conv2(h) + self.skip(x))
        return self.blocks(h)


class DGEAN(nn.Module):
    """g(window, d): cubic baseline plus a learned residual slice.

    ``window`` is ``(B, 2n, H, W)`` ordered by position; ``d`` in (0, 1) is the
    relative depth between slices n and n+1.
    """

    def __init__(self, config: DGEANConfig = DGEANConfig(), seed: int = 0):
        super().__init__()
        self.config = config
        torch.manual_seed(seed)
        gen = torch.Generator().manual_seed(seed)
        ch = config.encoder_channels
        self.depth_mlp = nn.Sequential(nn.Linear(config.depth_embed_dim, config.depth_embed_dim),
                                       nn.ReLU(), nn.Linear(config.depth_embed_dim, config.depth_embed_dim))
        self.encoders = nn.ModuleList()
        cin = 1
        for i, c in enumerate(ch):
            # stage 1 is the stem: one conv at full resolution
            self.encoders.append(GEAB(cin, c, 1 if i == 0 else 2, 0 if i == 0 else 2, config, gen))
            cin = c
        self.decoders = nn.ModuleList(
            nn.ConvTranspose3d(ch[i], ch[i - 1], (1, 2, 2), stride=(1, 2, 2))
            for i in range(len(ch) - 1, 0, -1))
        self.depth_logits = nn.Parameter(torch.zeros(config.n_context))
        self.head = nn.Conv2d(ch[0], 1, 7, padding=3, padding_mode="replicate")
        self._init_weights()

    def _init_weights(self):
        # He init keeps activations alive through the 3D stack; the position
        # projection and the head start at zero so the untrained network is
        # exactly the cubic baseline and the embedding is learned from there
        for mod in self.modules():
            if isinstance(mod, (nn.Conv3d, nn.ConvTranspose3d)):
                nn.init.kaiming_normal_(mod.weight, nonlinearity="relu")
                if mod.bias is not None:
                    nn.init.zeros_(mod.bias)
        for enc in self.encoders:
            nn.init.zeros_(enc.pos_proj.weight)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    @property
    def multiple(self) -> int:
        return 2 ** (len(self.config.encoder_channels) - 1)

    def residual(self, window: torch.Tensor, d: torch.Tensor) -> torch.Tensor:
        b, m, h0, w0 = window.shape
        k = self.multiple
        ph, pw = (-h0) % k, (-w0) % k
        x = window
        if ph or pw:
            mode = "reflect" if ph < h0 and pw < w0 else "replicate"
            x = F.pad(x, (0, pw, 0, ph), mode=mode)
        x = x[:, None]  # (B, 1, 2n, H, W)
        demb = self.depth_mlp(depth_features(d.to(x.dtype), self.config.depth_embed_dim))
        skips, stride = [], 1
        for enc in self.encoders:
            x = enc(x, demb, stride)
            stride *= enc.stride
            skips.append(x)
        skips.pop()
        for dec in self.decoders:
            x = F.relu(dec(x)) + skips.pop()
        wts = torch.softmax(self.depth_logits, dim=0).to(x.dtype)
        x = (x * wts[None, None, :, None, None]).sum(dim=2)
        return self.head(x)[:, 0, :h0, :w0]

    def forward(self, window: torch.Tensor, d) -> torch.Tensor:
        if window.ndim != 4 or window.shape[1] != self.config.n_context:
            raise ValueError(f"expected window (B, {self.config.n_context}, H, W), got {tuple(window.shape)}")
        if not torch.isfinite(window).all():
            raise ValueError("window contains NaN or inf")
        d = torch.as_tensor(d, dtype=window.dtype, device=window.device)
        if d.ndim == 0:
            d = d.expand(window.shape[0])
        if torch.any((d <= 0) | (d >= 1)):
            raise ValueError("relative depth d must lie strictly inside (0, 1)")
        return window_interp(window, d) + self.residual(window, d)


def count_conv_layers(model: DGEAN) -> int:
    """Weight layers on the main path (stem, residual convs, output head)."""
    n = 0
    for enc in model.encoders:
        n += 1 + (enc.conv2 is not None) + 2 * len(enc.blocks)
    return n + 1
