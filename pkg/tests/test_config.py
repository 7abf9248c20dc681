import json
from pathlib import Path

import pytest

from d2r.config import ConfigError, load_run_config, pipeline_config, validate
from d2r.losses import LossWeights

DESK = Path(__file__).resolve().parents[1] / "configs" / "desk.json"


def test_defaults_when_no_file():
    doc = load_run_config(None)
    cfg = pipeline_config(doc)
    assert cfg.r == 4
    assert cfg.losses.weights == LossWeights()
    assert set(doc["seeds"]) == {"phantom", "degrade", "stage1", "stage2", "stage3", "infer"}


def test_desk_config_loads():
    doc = load_run_config(DESK)
    cfg = pipeline_config(doc, factor=4)
    assert cfg.sde.T == 50
    assert cfg.stage1.patch == (33, 32)
    assert cfg.dgean.encoder_channels == (16, 32, 48, 64, 64)
    assert cfg.losses.weights == LossWeights(0.0, 0.0, 0.0)


@pytest.mark.parametrize("doc", [
    {"degrade": {"factor": 1}},
    {"degrade": {"factor": 4, "keep_phase": 4}},
    {"sde": {"T": 10, "delta": 0}},
    {"dgean": {"n_context": 3}},
    {"unknown": 1},
    {"train": {"diffusion": {"patch": [33]}}},
    {"seeds": {"phantom": 0}},
])
def test_invalid_documents(doc):
    with pytest.raises(ConfigError):
        validate(doc)


def test_file_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_run_config(tmp_path / "missing.json")
    p = tmp_path / "broken.json"
    p.write_text("{")
    with pytest.raises(ConfigError, match="valid JSON"):
        load_run_config(p)
    p.write_text("[]")
    with pytest.raises(ConfigError):
        load_run_config(p)


def test_factor_override_and_hash():
    doc = load_run_config(DESK)
    a, b = pipeline_config(doc, factor=4), pipeline_config(doc, factor=8)
    assert b.r == 8
    assert a.hash("sde") != b.hash("sde")
    assert a.hash("sde") == pipeline_config(doc, factor=4, workers=3).hash("sde")
    doc2 = json.loads(json.dumps(doc))
    doc2["seeds"]["stage1"] += 1
    assert pipeline_config(doc2).hash("seeds") != a.hash("seeds")
