"""JSON run configuration: schema, defaults and conversion to pipeline settings."""

from __future__ import annotations

import copy
import json
from pathlib import Path

import jsonschema

from .degradation import NoiseParams
from .dgean import DGEANConfig, LossConfig, TrainConfig
from .irsde import OptimizerConfig, PredictorConfig
from .losses import ExtractorConfig, LossWeights
from .pipeline import PipelineConfig, SDEParams, Seeds, Stage1Config


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False,
            "required": list(required)}


_INT = {"type": "integer"}
_NUM = {"type": "number"}
_POS_INT = {"type": "integer", "minimum": 1}
_NONNEG = {"type": "number", "minimum": 0}
_PAIR_INT = {"type": "array", "items": _POS_INT, "minItems": 2, "maxItems": 2}
_PAIR_NUM = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}

SEED_KEYS = ("phantom", "degrade", "stage1", "stage2", "stage3", "infer")

RUN_CONFIG_SCHEMA = _obj({
    "degrade": _obj({
        "factor": {"type": "integer", "minimum": 2},
        "keep_phase": {"type": "integer", "minimum": 0},
        "alpha": _NONNEG,
        "sigma": _NONNEG,
        "noisy_inputs": {"type": "boolean"},
    }),
    "sde": _obj({
        "T": {"type": "integer", "minimum": 2},
        "lambda_min": {"type": "number", "exclusiveMinimum": 0},
        "lambda_max": {"type": "number", "exclusiveMinimum": 0},
        "delta": {"type": "number", "exclusiveMinimum": 0},
        "horizon": {"type": "number", "exclusiveMinimum": 0},
    }),
    "dgean": _obj({
        "n_context": {"type": "integer", "minimum": 2, "multipleOf": 2},
        "encoder_channels": {"type": "array", "items": _POS_INT, "minItems": 5, "maxItems": 5},
        "gaussian_embed_dim": _POS_INT,
        "gaussian_sigma": {"type": "number", "exclusiveMinimum": 0},
        "depth_embed_dim": _POS_INT,
        "attention_reduction": _POS_INT,
        "position_scale": {"type": "number", "exclusiveMinimum": 0},
    }),
    "losses": _obj({
        "lambda_ffl": _NONNEG,
        "lambda_cont": _NONNEG,
        "lambda_ssim": _NONNEG,
        "extractor": _obj({"levels": _POS_INT, "channels": _POS_INT, "seed": _INT}),
    }),
    "train": _obj({
        "diffusion": _obj({
            "n_pairs": _POS_INT,
            "patch": _PAIR_INT,
            "predictor": _obj({"base_channels": _POS_INT, "n_scales": _POS_INT, "time_dim": _POS_INT,
                               "groups": _POS_INT, "parameterization": {"enum": ["x0", "eps"]}}),
            "optimizer": _obj({"lr": {"type": "number", "exclusiveMinimum": 0}, "betas": _PAIR_NUM,
                               "steps": _POS_INT, "batch_size": _POS_INT,
                               "val_fraction": {"type": "number", "minimum": 0, "maximum": 0.5},
                               "val_every": _POS_INT, "grad_clip": _NONNEG,
                               "lr_decay_at": {"type": ["number", "null"], "minimum": 0, "maximum": 1}}),
        }),
        "vsr": _obj({"lr": {"type": "number", "exclusiveMinimum": 0}, "betas": _PAIR_NUM,
                     "steps": _POS_INT, "batch_size": _POS_INT, "patch": _PAIR_INT,
                     "val_windows": _POS_INT, "val_every": _POS_INT, "plateau_patience": _POS_INT,
                     "grad_clip": _NONNEG, "augment": {"type": "boolean"}}),
        "stage2_batch": _POS_INT,
    }),
    "eval": _obj({"fsc": {"type": "boolean"}, "mask_threshold": {"type": ["number", "null"]},
                  "plot": {"type": "boolean"}}),
    "seeds": _obj({k: _INT for k in SEED_KEYS}, required=SEED_KEYS),
    "paths": _obj({"workspace": {"type": "string"}}),
})

DEFAULT_SEEDS = {"phantom": 0, "degrade": 1, "stage1": 2, "stage2": 3, "stage3": 4, "infer": 5}


class ConfigError(ValueError):
    pass


def validate(doc: dict) -> dict:
    try:
        jsonschema.validate(doc, RUN_CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid run config at {where}: {exc.message}") from None
    deg = doc.get("degrade", {})
    if deg.get("keep_phase", 0) >= deg.get("factor", 4):
        raise ConfigError("degrade.keep_phase must be smaller than degrade.factor")
    return doc


def load_run_config(path=None) -> dict:
    """Validated config document; an absent path gives the defaults."""
    if path is None:
        doc = {}
    else:
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("run config must be a JSON object")
    validate(doc)
    doc = copy.deepcopy(doc)
    doc.setdefault("seeds", dict(DEFAULT_SEEDS))
    return doc


def noise_params(doc: dict, seed: int) -> NoiseParams:
    deg = doc.get("degrade", {})
    return NoiseParams(deg.get("alpha", 0.0), deg.get("sigma", 0.0), seed)


def pipeline_config(doc: dict, workspace: str | None = None, workers: int = 1,
                    factor: int | None = None) -> PipelineConfig:
    deg = doc.get("degrade", {})
    tr = doc.get("train", {})
    diff = tr.get("diffusion", {})
    base = PipelineConfig()
    opt = dict(diff.get("optimizer", {}))
    if "betas" in opt:
        opt["betas"] = tuple(opt["betas"])
    s1_default = base.stage1
    stage1 = Stage1Config(
        n_pairs=diff.get("n_pairs", s1_default.n_pairs),
        patch=tuple(diff["patch"]) if "patch" in diff else None,
        noise=NoiseParams(deg.get("alpha", 0.0), deg.get("sigma", 0.0)),
        noisy_inputs=deg.get("noisy_inputs", True),
        predictor=PredictorConfig(**{**s1_default.predictor.to_dict(), **diff.get("predictor", {})}),
        optimizer=OptimizerConfig(**{**s1_default.optimizer.to_dict(), "betas": s1_default.optimizer.betas,
                                     **opt}),
    )
    vsr = dict(tr.get("vsr", {}))
    for k in ("betas", "patch"):
        if k in vsr:
            vsr[k] = tuple(vsr[k])
    losses = doc.get("losses", {})
    weights = LossWeights(losses.get("lambda_ffl", LossWeights.lambda_ffl),
                          losses.get("lambda_cont", LossWeights.lambda_cont),
                          losses.get("lambda_ssim", LossWeights.lambda_ssim))
    dg = {**base.dgean.to_dict(), **doc.get("dgean", {})}
    seeds = doc["seeds"]
    return PipelineConfig(
        r=factor if factor is not None else deg.get("factor", base.r),
        sde=SDEParams(**doc.get("sde", {})),
        stage1=stage1,
        stage2_batch=tr.get("stage2_batch", base.stage2_batch),
        workers=workers,
        dgean=DGEANConfig.from_dict(dg),
        losses=LossConfig(weights, ExtractorConfig(**losses.get("extractor", {}))),
        dgean_train=TrainConfig(**vsr),
        seeds=Seeds(seeds["stage1"], seeds["stage2"], seeds["stage3"], seeds["infer"]),
        workspace=workspace,
    )
