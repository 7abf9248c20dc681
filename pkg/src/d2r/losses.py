"""Slice-interpolation training losses.

All functions take torch tensors shaped ``(H, W)``, ``(B, H, W)`` or
``(B, 1, H, W)`` and return scalar tensors, so they are differentiable
end to end.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass(frozen=True)
class LossWeights:
    lambda_ffl: float = 100.0
    lambda_cont: float = 0.1
    lambda_ssim: float = 1.0

    def __post_init__(self):
        if min(self.lambda_ffl, self.lambda_cont, self.lambda_ssim) < 0:
            raise ValueError("loss weights must be nonnegative")

    def to_dict(self) -> dict:
        return asdict(self)


def _bchw(x: torch.Tensor) -> torch.Tensor:
    if x.ndim == 2:
        return x[None, None]
    if x.ndim == 3:
        return x[:, None]
    if x.ndim == 4:
        return x
    raise ValueError(f"expected a 2D, 3D or 4D tensor, got shape {tuple(x.shape)}")


def l1_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return (pred - target).abs().mean()


# -- SSIM -------------------------------------------------------------------

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA,
                    dtype=torch.float32) -> torch.Tensor:
    x = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-x ** 2 / (2 * sigma ** 2))
    g = g / g.sum()
    return g.to(dtype)


def _blur(x: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
    # separable Gaussian with edge replication, output keeps the input size
    p = len(g) // 2
    x = F.pad(x, (p, p, p, p), mode="replicate")
    x = F.conv2d(x, g.view(1, 1, 1, -1))
    return F.conv2d(x, g.view(1, 1, -1, 1))


def ssim_map(pred: torch.Tensor, target: torch.Tensor, data_range: float = 1.0) -> torch.Tensor:
    """Per-pixel SSIM with an 11x11 Gaussian window (sigma 1.5)."""
    x, y = _bchw(pred), _bchw(target)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {tuple(x.shape)} vs {tuple(y.shape)}")
    b, c, h, w = x.shape
    x = x.reshape(b * c, 1, h, w)
    y = y.reshape(b * c, 1, h, w)
    g = gaussian_window(dtype=x.dtype).to(x.device)
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mx, my = _blur(x, g), _blur(y, g)
    sxx = _blur(x * x, g) - mx * mx
    syy = _blur(y * y, g) - my * my
    sxy = _blur(x * y, g) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return (num / den).reshape(b, c, h, w)


def ssim(pred: torch.Tensor, target: torch.Tensor, data_range: float = 1.0) -> torch.Tensor:
    return ssim_map(pred, target, data_range).mean()


def ssim_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return 1.0 - ssim(pred, target)


# -- focal frequency --------------------------------------------------------

def focal_frequency_loss(pred: torch.Tensor, target: torch.Tensor, alpha: float = 1.0,
                         detach_weights: bool = False) -> torch.Tensor:
    """Spectrum-weighted squared DFT error.

    Per image, with D = F(pred) - F(target) (orthonormal 2D DFT) and
    w = (|D| / max|D|)**alpha, the loss is mean(w * |D|**2), averaged over the
    batch.
    """
    x, y = _bchw(pred), _bchw(target)
    diff = torch.fft.fft2(x - y, norm="ortho")
    dist = diff.real ** 2 + diff.imag ** 2
    mag = torch.sqrt(dist + 1e-30)
    peak = mag.flatten(1).max(dim=1).values.view(-1, 1, 1, 1)
    w = (mag / peak.clamp_min(1e-30)) ** alpha
    if detach_weights:
        w = w.detach()
    return (w * dist).mean()


# -- continuity -------------------------------------------------------------

def gini_coefficient(x) -> torch.Tensor:
    """sum_ij |x_i - x_j| / (2 r^2 mean(x)); zero when the mean is zero."""
    if not isinstance(x, torch.Tensor):
        x = torch.as_tensor(x, dtype=torch.float64)
    if not x.is_floating_point():
        x = x.double()
    x = x.flatten()
    r = x.numel()
    if r < 2:
        raise ValueError("Gini coefficient needs at least 2 values")
    mean = x.mean()
    pair = (x[:, None] - x[None, :]).abs().sum()
    if float(mean.detach()) == 0.0:
        return pair * 0.0
    return pair / (2 * r * r * mean)


def _adjacent(seq, P) -> torch.Tensor:
    if len(seq) < 2:
        raise ValueError("need at least 2 slices")
    return torch.stack([P(seq[i], seq[i + 1]) for i in range(len(seq) - 1)])


def consistency_loss(slices: Sequence[torch.Tensor], P: Callable) -> torch.Tensor:
    """Mean perceptual distance over adjacent pairs."""
    return _adjacent(slices, P).mean()


def smoothness_loss(slices: Sequence[torch.Tensor], P: Callable) -> torch.Tensor:
    """1 - Gini of the adjacent perceptual distances."""
    return 1.0 - gini_coefficient(_adjacent(slices, P))


def continuity_loss(slices: Sequence[torch.Tensor], P: Callable) -> torch.Tensor:
    d = _adjacent(slices, P)
    return d.mean() + 1.0 - gini_coefficient(d)


# -- perceptual extractor ---------------------------------------------------

@dataclass(frozen=True)
class ExtractorConfig:
    levels: int = 3
    channels: int = 16
    seed: int = 0


class PerceptualExtractor(nn.Module):
    """Fixed random convolutional pyramid with unit-normalized channel features.

    ``P(a, b)`` is the mean squared difference of normalized features,
    averaged over levels. Weights are frozen; any module with the same call
    signature can stand in for it.
    """

    def __init__(self, config: ExtractorConfig = ExtractorConfig()):
        super().__init__()
        self.config = config
        g = torch.Generator().manual_seed(config.seed)
        convs = []
        cin = 1
        for _ in range(config.levels):
            conv = nn.Conv2d(cin, config.channels, 3, padding=1, padding_mode="replicate")
            with torch.no_grad():
                fan_in = cin * 9
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=g) * (2.0 / fan_in) ** 0.5)
                conv.bias.copy_(torch.randn(conv.bias.shape, generator=g) * 0.1)
            conv.requires_grad_(False)
            convs.append(conv)
            cin = config.channels
        self.convs = nn.ModuleList(convs)

    def features(self, x: torch.Tensor) -> list[torch.Tensor]:
        h = _bchw(x)
        feats = []
        for i, conv in enumerate(self.convs):
            if i:
                h = F.avg_pool2d(h, 2) if min(h.shape[-2:]) >= 2 else h
            h = F.softplus(conv(h))
            feats.append(h / torch.sqrt((h * h).sum(dim=1, keepdim=True) + 1e-10))
        return feats

    def forward(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        fa, fb = self.features(a.to(self.convs[0].weight.dtype)), self.features(b.to(self.convs[0].weight.dtype))
        return torch.stack([((x - y) ** 2).mean() for x, y in zip(fa, fb)]).mean()


def build_extractor(config: ExtractorConfig = ExtractorConfig(), seed: int | None = None,
                    dtype=torch.float32) -> PerceptualExtractor:
    if seed is not None:
        config = ExtractorConfig(config.levels, config.channels, seed)
    return PerceptualExtractor(config).to(dtype).eval()


# -- total ------------------------------------------------------------------

def total_loss(pred_seq: Sequence[torch.Tensor], target_seq: Sequence[torch.Tensor],
               anchors: tuple[torch.Tensor, torch.Tensor], weights: LossWeights,
               P: Callable | None) -> torch.Tensor:
    """L1 + lambda_ssim * SSIM + lambda_ffl * FFL averaged over predicted slices, plus
    lambda_cont * (consistency + smoothness) on [anchor_lo, *pred, anchor_hi].
    """
    if len(pred_seq) == 0 or len(pred_seq) != len(target_seq):
        raise ValueError("pred and target sequences must be nonempty and of equal length")
    sup = []
    for p, t in zip(pred_seq, target_seq):
        term = l1_loss(p, t)
        if weights.lambda_ssim:
            term = term + weights.lambda_ssim * ssim_loss(p, t)
        if weights.lambda_ffl:
            term = term + weights.lambda_ffl * focal_frequency_loss(p, t)
        sup.append(term)
    loss = torch.stack(sup).mean()
    if weights.lambda_cont:
        if P is None:
            raise ValueError("continuity term needs a perceptual extractor")
        seq = [anchors[0], *pred_seq, anchors[1]]
        loss = loss + weights.lambda_cont * continuity_loss(seq, P)
    return loss
