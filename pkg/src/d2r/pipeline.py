"""Three-stage axial super-resolution: lateral diffusion restoration, then slice interpolation.

Stage I fits a 2D noise predictor on XY slices degraded along one axis.
Stage II restores every XZ and YZ slice of the low-resolution volume and
averages the two stacks into a pseudo high-resolution training volume.
Stage III fits the interpolation network along X and Y of that volume and
then fills the axial gaps of the original input.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import artifacts
from .degradation import DegradationConfig, NoiseParams, make_stage1_pairs
from .dgean import DGEAN, DGEANConfig, LossConfig, TrainConfig, build_model, infer_axial, train_dgean
from .irsde import NoisePredictor, OptimizerConfig, PredictorConfig, SDESchedule, restore_slices, train_diffusion
from .volume import Plane, SliceImage, Volume, concat_slices, get_slice, load_volume, save_volume

log = logging.getLogger(__name__)

PLANE_SEED_STRIDE = 1_000_000


@dataclass(frozen=True)
class SDEParams:
    T: int = 50
    lambda_min: float = 0.005
    lambda_max: float = 0.1
    delta: float = 0.05
    horizon: float = 100.0

    def schedule(self) -> SDESchedule:
        return SDESchedule.cosine(self.T, self.lambda_min, self.lambda_max, self.delta, self.horizon)


@dataclass(frozen=True)
class Stage1Config:
    n_pairs: int = 2048
    # None picks (8r+1, 32): an interior-gap height for the training factor
    patch: tuple[int, int] | None = None
    noise: NoiseParams = field(default_factory=NoiseParams)
    noisy_inputs: bool = True
    predictor: PredictorConfig = field(default_factory=lambda: PredictorConfig(base_channels=16))
    optimizer: OptimizerConfig = field(default_factory=lambda: OptimizerConfig(steps=1500, batch_size=16,
                                                                              lr=1e-3, lr_decay_at=0.6))

    def patch_for(self, r: int) -> tuple[int, int]:
        return tuple(self.patch) if self.patch is not None else (8 * r + 1, 32)


@dataclass(frozen=True)
class Seeds:
    stage1: int = 0
    stage2: int = 1
    stage3: int = 2
    infer: int = 3


@dataclass(frozen=True)
class PipelineConfig:
    r: int = 4
    sde: SDEParams = field(default_factory=SDEParams)
    stage1: Stage1Config = field(default_factory=Stage1Config)
    stage2_batch: int = 16
    workers: int = 1
    dgean: DGEANConfig = field(default_factory=lambda: DGEANConfig(encoder_channels=(16, 32, 48, 64, 64)))
    losses: LossConfig = field(default_factory=LossConfig)
    dgean_train: TrainConfig = field(default_factory=TrainConfig)
    seeds: Seeds = field(default_factory=Seeds)
    workspace: str | None = None

    def __post_init__(self):
        if int(self.r) != self.r or self.r < 2:
            raise ValueError(f"r must be an integer >= 2, got {self.r}")
        if self.workers < 1 or self.stage2_batch < 1:
            raise ValueError("workers and stage2_batch must be positive")

    def to_dict(self) -> dict:
        s1 = self.stage1
        return {
            "r": self.r,
            "sde": asdict(self.sde),
            "stage1": {"n_pairs": s1.n_pairs, "patch": list(s1.patch_for(self.r)),
                       "noise": {"alpha": s1.noise.alpha, "sigma": s1.noise.sigma},
                       "noisy_inputs": s1.noisy_inputs, "predictor": s1.predictor.to_dict(),
                       "optimizer": s1.optimizer.to_dict()},
            "stage2_batch": self.stage2_batch,
            "dgean": self.dgean.to_dict(),
            "losses": self.losses.to_dict(),
            "dgean_train": self.dgean_train.to_dict(),
            "seeds": asdict(self.seeds),
        }

    def hash(self, *sections: str) -> str:
        d = self.to_dict()
        if sections:
            d = {k: d[k] for k in ("r", *sections)}
        return artifacts.config_hash(d)


def _as_list(volumes) -> list[Volume]:
    if isinstance(volumes, Volume):
        return [volumes]
    vols = list(volumes)
    if not vols:
        raise ValueError("no training volumes given")
    return vols


def _stage_dir(config: PipelineConfig, name: str) -> Path | None:
    if config.workspace is None:
        return None
    return Path(config.workspace) / name


def _digest_inputs(vols: Sequence[Volume]) -> dict:
    return {f"volume{i}": artifacts.array_digest(v.data) for i, v in enumerate(vols)}


# -- Stage I ------------------------------------------------------------------

def stage1_pairs(train_volumes, config: PipelineConfig):
    s1 = config.stage1
    deg = DegradationConfig(r=config.r, noise=s1.noise, noisy_inputs=s1.noisy_inputs)
    vols = _as_list(train_volumes)
    pairs = []
    for i, v in enumerate(vols):
        n = s1.n_pairs // len(vols) + (i < s1.n_pairs % len(vols))
        pairs += make_stage1_pairs(v, deg, n, s1.patch_for(config.r), config.seeds.stage1 + 7 * i)
    return pairs


def stage1(train_volumes, config: PipelineConfig) -> NoisePredictor:
    """Fit the noise predictor on synthetic XY (degraded, clean) pairs."""
    vols = _as_list(train_volumes)
    sdir = _stage_dir(config, "stage1")
    chash = config.hash("sde", "stage1", "seeds")
    inputs = _digest_inputs(vols)
    if sdir is not None and artifacts.manifest_matches(sdir, chash, inputs):
        log.info("stage1: reusing %s", sdir)
        return artifacts.load_checkpoint(sdir / "predictor.pt", expect="noise_predictor")
    pairs = stage1_pairs(vols, config)
    model = train_diffusion(pairs, config.sde.schedule(), config.stage1.predictor,
                            config.stage1.optimizer, seed=config.seeds.stage1)
    if sdir is not None:
        artifacts.save_checkpoint(model, sdir / "predictor.pt")
        artifacts.write_manifest(sdir, chash, {"stage1": config.seeds.stage1}, inputs,
                                 {"predictor.pt": artifacts.file_digest(sdir / "predictor.pt")})
    return model


# -- Stage II -----------------------------------------------------------------

def slice_seed(base: int, plane: Plane, index: int) -> int:
    return base + plane.value * PLANE_SEED_STRIDE + index


def recover_plane(predictor: NoisePredictor, v_low: Volume, plane: Plane, config: PipelineConfig,
                  indices: Sequence[int] | None = None) -> list[SliceImage]:
    """Restore lateral slices of one plane; slice i is an (Z_L, W) image degraded along rows."""
    if plane is Plane.XY:
        raise ValueError("only XZ and YZ slices are restored")
    sched = config.sde.schedule()
    if indices is None:
        indices = range(v_low.shape[plane.axis])
    slices = [get_slice(v_low, plane, int(i)) for i in indices]
    seeds = [slice_seed(config.seeds.stage2, plane, s.source_index) for s in slices]
    bs = config.stage2_batch
    chunks = [(slices[s:s + bs], seeds[s:s + bs]) for s in range(0, len(slices), bs)]

    def run(chunk):
        return restore_slices(predictor, chunk[0], sched, chunk[1], config.r, batch_size=bs)

    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as ex:
            parts = list(ex.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    return [s for part in parts for s in part]


def stage2(predictor: NoisePredictor, v_low: Volume, config: PipelineConfig) -> Volume:
    """Average of the restored XZ and YZ stacks, shape (r(Z_L-1)+1, Y, X)."""
    sdir = _stage_dir(config, "stage2")
    chash = config.hash("sde", "stage1", "seeds", "stage2_batch")
    inputs = {"v_low": artifacts.array_digest(v_low.data),
              "predictor": artifacts.config_hash(
                  {k: artifacts.array_digest(t.detach().numpy()) for k, t in predictor.state_dict().items()})}
    if sdir is not None and artifacts.manifest_matches(sdir, chash, inputs):
        log.info("stage2: reusing %s", sdir)
        return load_volume(sdir / "recovered.f32")
    z, y, x = v_low.voxel_size_nm
    vox = (z / config.r, y, x)
    xz = concat_slices(Plane.XZ, recover_plane(predictor, v_low, Plane.XZ, config), vox)
    yz = concat_slices(Plane.YZ, recover_plane(predictor, v_low, Plane.YZ, config), vox)
    if xz.shape != yz.shape:
        raise RuntimeError(f"recovered stacks disagree in shape: {xz.shape} vs {yz.shape}")
    avg = (xz.data.astype(np.float32) + yz.data.astype(np.float32)) * np.float32(0.5)
    out = Volume(np.clip(avg, 0.0, 1.0), vox)
    if sdir is not None:
        sdir.mkdir(parents=True, exist_ok=True)
        save_volume(out, sdir / "recovered.f32")
        artifacts.write_manifest(sdir, chash, {"stage2": config.seeds.stage2}, inputs, {
            "recovered.f32": artifacts.file_digest(sdir / "recovered.f32"),
            "recovered.json": artifacts.file_digest(sdir / "recovered.json")})
    return out


# -- Stage III ----------------------------------------------------------------

def _train_vsr(volume: Volume, config: PipelineConfig, axes, name: str) -> DGEAN:
    sdir = _stage_dir(config, name)
    chash = config.hash("dgean", "losses", "dgean_train", "seeds")
    inputs = {"volume": artifacts.array_digest(volume.data), "axes": list(axes)}
    if sdir is not None and artifacts.manifest_matches(sdir, chash, inputs):
        log.info("%s: reusing %s", name, sdir)
        return artifacts.load_checkpoint(sdir / "dgean.pt", expect="dgean")
    model = build_model(config.dgean, seed=config.seeds.stage3)
    model = train_dgean(model, volume, config.r, config.losses, config.dgean_train,
                        seed=config.seeds.stage3, axes=axes)
    if sdir is not None:
        artifacts.save_checkpoint(model, sdir / "dgean.pt")
        artifacts.write_manifest(sdir, chash, {"stage3": config.seeds.stage3}, inputs,
                                 {"dgean.pt": artifacts.file_digest(sdir / "dgean.pt")})
    return model


def stage3(recovered: Volume, config: PipelineConfig) -> DGEAN:
    """Fit the interpolation network on lateral (X and Y) sequences of the recovered volume."""
    return _train_vsr(recovered, config, (2, 1), "stage3")


def infer(model: DGEAN, v_low: Volume, r: int, config: PipelineConfig | None = None) -> Volume:
    torch.manual_seed(config.seeds.infer if config is not None else 0)
    return infer_axial(model, v_low, r)


@dataclass
class D2RResult:
    volume: Volume
    predictor: NoisePredictor
    recovered: Volume
    model: DGEAN
    provenance: dict


def run_d2r(v_low: Volume, config: PipelineConfig, train_volumes=None,
            return_all: bool = False):
    """Full workflow on a low-resolution volume; ``train_volumes`` defaults to ``v_low``."""
    if v_low.shape[0] < 2:
        raise ValueError("v_low needs at least 2 axial slices")
    predictor = stage1(train_volumes if train_volumes is not None else v_low, config)
    recovered = stage2(predictor, v_low, config)
    model = stage3(recovered, config)
    out = infer(model, v_low, config.r, config)
    provenance = {"config_hash": config.hash(), "seeds": asdict(config.seeds),
                  "input": artifacts.array_digest(v_low.data),
                  "recovered": artifacts.array_digest(recovered.data),
                  "output": artifacts.array_digest(out.data)}
    wdir = _stage_dir(config, "infer")
    if wdir is not None:
        wdir.mkdir(parents=True, exist_ok=True)
        save_volume(out, wdir / "output.f32")
        stages = {}
        for name in ("stage1", "stage2", "stage3"):
            m = artifacts.read_manifest(Path(config.workspace) / name)
            stages[name] = m["outputs"] if m else None
        artifacts.write_manifest(wdir, config.hash(), asdict(config.seeds),
                                 {"v_low": provenance["input"]},
                                 {"output.f32": artifacts.file_digest(wdir / "output.f32")},
                                 extra={"stages": stages, "config": config.to_dict()})
    if return_all:
        return D2RResult(out, predictor, recovered, model, provenance)
    return out


def run_supervised(v_low: Volume, v_high: Volume, config: PipelineConfig) -> Volume:
    """Comparator trained directly on a high-resolution volume along Z."""
    model = _train_vsr(v_high, config, (0,), "supervised")
    return infer(model, v_low, config.r, config)
