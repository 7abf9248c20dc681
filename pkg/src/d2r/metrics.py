"""Slice-wise similarity, Fourier shell correlation and mask overlap metrics."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .losses import ssim_map
from .volume import Plane, Volume

PSNR_CAP_DB = 100.0


def _arr(v) -> np.ndarray:
    return v.data if isinstance(v, Volume) else np.asarray(v)


def _check_pair(pred, gt):
    p, g = _arr(pred), _arr(gt)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: pred {p.shape} vs gt {g.shape}")
    return p.astype(np.float64), g.astype(np.float64)


def psnr_slices(pred, gt, plane: Plane) -> np.ndarray:
    p, g = _check_pair(pred, gt)
    axes = tuple(a for a in range(3) if a != plane.axis)
    mse = ((p - g) ** 2).mean(axis=axes)
    with np.errstate(divide="ignore"):
        vals = np.where(mse > 0, 10.0 * np.log10(1.0 / np.where(mse > 0, mse, 1.0)), PSNR_CAP_DB)
    return np.minimum(vals, PSNR_CAP_DB)


def psnr_plane(pred, gt, plane: Plane) -> tuple[float, float]:
    """Mean and std of per-slice PSNR (dB, peak 1) over slices of ``plane``."""
    vals = psnr_slices(pred, gt, plane)
    return float(vals.mean()), float(vals.std())


def ssim_slices(pred, gt, plane: Plane, batch: int = 64) -> np.ndarray:
    p, g = _check_pair(pred, gt)
    p = np.moveaxis(p, plane.axis, 0)
    g = np.moveaxis(g, plane.axis, 0)
    out = []
    for s in range(0, p.shape[0], batch):
        a = torch.from_numpy(np.ascontiguousarray(p[s:s + batch]))
        b = torch.from_numpy(np.ascontiguousarray(g[s:s + batch]))
        out.append(ssim_map(a, b).mean(dim=(1, 2, 3)).numpy())
    return np.concatenate(out)


def ssim_plane(pred, gt, plane: Plane) -> tuple[float, float]:
    vals = ssim_slices(pred, gt, plane)
    return float(vals.mean()), float(vals.std())


# -- FSC --------------------------------------------------------------------

@dataclass
class FSCCurve:
    shell_freq: np.ndarray  # cycles per voxel
    correlation: np.ndarray
    voxel_size_nm: float = 1.0
    counts: np.ndarray | None = None

    def __post_init__(self):
        self.shell_freq = np.asarray(self.shell_freq, dtype=np.float64)
        self.correlation = np.asarray(self.correlation, dtype=np.float64)
        if self.shell_freq.shape != self.correlation.shape:
            raise ValueError("shell_freq and correlation must have equal lengths")
        if self.shell_freq.size and (self.shell_freq.min() <= 0 or self.shell_freq.max() > 0.5):
            raise ValueError("shell frequencies must lie in (0, 0.5]")
        if not np.all(np.isfinite(self.correlation)):
            raise ValueError("correlation must be finite")


def center_crop_cube(a: np.ndarray) -> np.ndarray:
    n = min(a.shape)
    starts = [(s - n) // 2 for s in a.shape]
    return a[tuple(slice(s, s + n) for s in starts)]


def fsc(v_gt, v_pred, voxel_size_nm: float | None = None, crop: bool = False) -> FSCCurve:
    """Fourier shell correlation over integer-radius shells, DC excluded.

    Shell i collects frequencies with round(|k|) == i for i = 1..N//2 and
    reports q_i = i / N cycles per voxel.
    """
    a, b = _check_pair(v_gt, v_pred)
    if crop:
        a, b = center_crop_cube(a), center_crop_cube(b)
    n = a.shape[0]
    if a.shape != (n, n, n):
        raise ValueError(f"FSC needs cubic volumes, got {a.shape}")
    if voxel_size_nm is None:
        voxel_size_nm = v_gt.voxel_size_nm[0] if isinstance(v_gt, Volume) else 1.0
    fa, fb = np.fft.fftn(a), np.fft.fftn(b)
    k = np.fft.fftfreq(n) * n
    kz, ky, kx = np.meshgrid(k, k, k, indexing="ij")
    shell = np.rint(np.sqrt(kz ** 2 + ky ** 2 + kx ** 2)).astype(np.int64).ravel()
    n_shells = n // 2
    num = np.bincount(shell, (fa * np.conj(fb)).real.ravel(), minlength=n_shells + 1)
    ea = np.bincount(shell, (np.abs(fa) ** 2).ravel(), minlength=n_shells + 1)
    eb = np.bincount(shell, (np.abs(fb) ** 2).ravel(), minlength=n_shells + 1)
    counts = np.bincount(shell, minlength=n_shells + 1)
    sl = slice(1, n_shells + 1)
    den = np.sqrt(ea[sl] * eb[sl])
    corr = np.divide(num[sl], den, out=np.zeros(n_shells), where=den > 0)
    return FSCCurve(np.arange(1, n_shells + 1) / n, np.clip(corr, -1.0, 1.0),
                    float(voxel_size_nm), counts[sl])


def crossing_frequency(curve: FSCCurve, threshold: float = 0.5) -> float | None:
    """First frequency where the curve falls below ``threshold`` (linear interpolation)."""
    q = np.concatenate([[0.0], curve.shell_freq])
    c = np.concatenate([[1.0], curve.correlation])
    below = np.nonzero(c < threshold)[0]
    if below.size == 0:
        return None
    i = below[0]
    q0, q1, c0, c1 = q[i - 1], q[i], c[i - 1], c[i]
    return float(q0 + (c0 - threshold) * (q1 - q0) / (c0 - c1))


def resolution_at_half(curve: FSCCurve) -> float:
    """FSC-0.5 resolution in nm; 2 voxels (Nyquist) when the curve never drops below 0.5."""
    q = crossing_frequency(curve, 0.5)
    if q is None:
        return 2.0 * curve.voxel_size_nm
    return curve.voxel_size_nm / q


def write_fsc_csv(curve: FSCCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["shell_freq", "correlation", "resolution_nm_at_this_freq"])
        for q, c in zip(curve.shell_freq, curve.correlation):
            w.writerow([repr(float(q)), repr(float(c)), repr(curve.voxel_size_nm / float(q))])


def plot_fsc(curves: dict, path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, curve in curves.items():
        ax.plot(curve.shell_freq, curve.correlation, label=name)
    ax.axhline(0.5, color="k", ls=":", lw=1)
    ax.set_xlabel("spatial frequency (1/voxel)")
    ax.set_ylabel("FSC")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# -- masks ------------------------------------------------------------------

def _masks(a, b):
    a, b = np.asarray(a, dtype=bool), np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return a, b


def iou(mask_gt, mask_pred) -> float:
    a, b = _masks(mask_gt, mask_pred)
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def dice(mask_gt, mask_pred) -> float:
    a, b = _masks(mask_gt, mask_pred)
    total = a.sum() + b.sum()
    if total == 0:
        return 1.0
    return float(2.0 * np.logical_and(a, b).sum() / total)


# -- report -----------------------------------------------------------------

@dataclass
class MetricsReport:
    psnr_xy: tuple[float, float]
    psnr_xz: tuple[float, float]
    psnr_yz: tuple[float, float]
    ssim_xy: tuple[float, float]
    ssim_xz: tuple[float, float]
    ssim_yz: tuple[float, float]
    resolution_nm: float | None = None
    iou: float | None = None
    dice: float | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = {"mean": v[0], "std": v[1]}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        kw = {}
        for k, v in d.items():
            kw[k] = (v["mean"], v["std"]) if isinstance(v, dict) else v
        return cls(**kw)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def from_json(cls, path) -> "MetricsReport":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class EvalOptions:
    fsc: bool = True
    mask_threshold: float | None = None
    masks: tuple | None = None  # (gt_mask, pred_mask) produced externally
    report_path: str | None = None
    fsc_csv_path: str | None = None
    fsc_plot_path: str | None = None


def crop_gt(gt: Volume, depth: int) -> Volume:
    if gt.shape[0] < depth:
        raise ValueError(f"ground truth depth {gt.shape[0]} shorter than prediction depth {depth}")
    return gt.replace(data=gt.data[:depth])


def evaluate(pred: Volume, gt: Volume, opts: EvalOptions = EvalOptions()):
    """Full metric report; the ground truth is cropped axially to the prediction depth.

    Returns ``(report, fsc_curve_or_None)``.
    """
    gt = crop_gt(gt, pred.shape[0])
    if gt.shape != pred.shape:
        raise ValueError(f"shape mismatch after cropping: pred {pred.shape} vs gt {gt.shape}")
    kw = {}
    for plane in Plane:
        kw[f"psnr_{plane.name.lower()}"] = psnr_plane(pred, gt, plane)
        kw[f"ssim_{plane.name.lower()}"] = ssim_plane(pred, gt, plane)
    curve = None
    if opts.fsc:
        curve = fsc(gt, pred, voxel_size_nm=pred.voxel_size_nm[0], crop=True)
        kw["resolution_nm"] = resolution_at_half(curve)
    if opts.masks is not None:
        mg, mp = opts.masks
        kw["iou"], kw["dice"] = iou(mg, mp), dice(mg, mp)
    elif opts.mask_threshold is not None:
        mg, mp = gt.data < opts.mask_threshold, pred.data < opts.mask_threshold
        kw["iou"], kw["dice"] = iou(mg, mp), dice(mg, mp)
    report = MetricsReport(**kw)
    if opts.report_path:
        report.to_json(opts.report_path)
    if curve is not None and opts.fsc_csv_path:
        write_fsc_csv(curve, opts.fsc_csv_path)
    if curve is not None and opts.fsc_plot_path:
        plot_fsc({"prediction": curve}, opts.fsc_plot_path)
    return report, curve
