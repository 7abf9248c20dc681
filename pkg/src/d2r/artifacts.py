"""Checkpoints, digests and stage manifests."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import torch

from .dgean.model import DGEAN, DGEANConfig
from .irsde.model import NoisePredictor, PredictorConfig
from .irsde.schedule import SDESchedule

MANIFEST_NAME = "manifest.json"


class CheckpointError(RuntimeError):
    pass


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def array_digest(a: np.ndarray) -> str:
    a = np.ascontiguousarray(a)
    h = hashlib.sha256(str((a.dtype.str, a.shape)).encode())
    h.update(a.tobytes())
    return h.hexdigest()


def write_manifest(directory, config_hash_: str, seeds: dict, inputs: dict, outputs: dict,
                   extra: dict | None = None) -> Path:
    """Stage manifest {config_hash, seeds, input digests, output digests}."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    doc = {"config_hash": config_hash_, "seeds": seeds, "inputs": inputs, "outputs": outputs}
    if extra:
        doc.update(extra)
    path = d / MANIFEST_NAME
    path.write_text(json.dumps(doc, indent=2, sort_keys=True))
    return path


def read_manifest(directory) -> dict | None:
    path = Path(directory) / MANIFEST_NAME
    if not path.exists():
        return None
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError:
        return None


def manifest_matches(directory, config_hash_: str, inputs: dict) -> bool:
    """True when a completed stage in ``directory`` was produced from the same config and inputs
    and its outputs are still intact on disk."""
    m = read_manifest(directory)
    if m is None or m.get("config_hash") != config_hash_ or m.get("inputs") != inputs:
        return False
    for name, digest in m.get("outputs", {}).items():
        p = Path(directory) / name
        if not p.exists() or file_digest(p) != digest:
            return False
    return True


# -- model checkpoints --------------------------------------------------------

def save_checkpoint(model: torch.nn.Module, path) -> None:
    schedule = None
    if isinstance(model, NoisePredictor):
        kind, cfg = "noise_predictor", model.config.to_dict()
        if model.schedule is not None:
            schedule = model.schedule.to_dict()
    elif isinstance(model, DGEAN):
        kind, cfg = "dgean", model.config.to_dict()
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")
    blob = {"kind": kind, "config": cfg, "state_dict": model.state_dict(),
            "schedule": schedule, "history": getattr(model, "history", None)}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(blob, path)


def load_checkpoint(path, expect: str | None = None):
    p = Path(path)
    if not p.exists():
        hint = {"noise_predictor": "run `d2r train-diffusion` first",
                "dgean": "run `d2r train-vsr` first"}.get(expect, "check the path")
        raise CheckpointError(f"checkpoint {p} not found; {hint}")
    try:
        blob = torch.load(p, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"could not read checkpoint {p}: {exc}") from exc
    kind = blob.get("kind")
    if expect is not None and kind != expect:
        raise CheckpointError(f"{p} holds a {kind} checkpoint, expected {expect}")
    if kind == "noise_predictor":
        sched = SDESchedule.from_dict(blob["schedule"]) if blob.get("schedule") else None
        model = NoisePredictor(PredictorConfig(**blob["config"]), sched)
    elif kind == "dgean":
        model = DGEAN(DGEANConfig.from_dict(blob["config"]))
    else:
        raise CheckpointError(f"unknown checkpoint kind {kind!r} in {p}")
    model.load_state_dict(blob["state_dict"])
    model.history = blob.get("history")
    model.eval()
    return model
