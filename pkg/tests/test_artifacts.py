import numpy as np
import pytest
import torch

from d2r.artifacts import (
    CheckpointError,
    array_digest,
    config_hash,
    load_checkpoint,
    manifest_matches,
    save_checkpoint,
    write_manifest,
    file_digest,
)
from d2r.dgean import DGEAN, DGEANConfig
from d2r.irsde import NoisePredictor, PredictorConfig, SDESchedule


def test_config_hash_is_key_order_free():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


def test_array_digest_sees_dtype_and_shape():
    a = np.zeros((2, 3), np.float32)
    assert array_digest(a) != array_digest(a.reshape(3, 2))
    assert array_digest(a) != array_digest(a.astype(np.float64))
    assert array_digest(a) == array_digest(a.copy())


def _same_params(m1, m2):
    for (k, a), (_, b) in zip(m1.state_dict().items(), m2.state_dict().items()):
        assert torch.equal(a, b), k


def test_noise_predictor_roundtrip(tmp_path):
    torch.manual_seed(0)
    sched = SDESchedule.cosine(T=5)
    m = NoisePredictor(PredictorConfig(base_channels=4, n_scales=2, time_dim=8, groups=2), sched)
    m.history = {"best_val": 0.1}
    save_checkpoint(m, tmp_path / "p.pt")
    back = load_checkpoint(tmp_path / "p.pt", expect="noise_predictor")
    _same_params(m, back)
    assert back.schedule.to_dict() == sched.to_dict()
    assert back.history == {"best_val": 0.1}
    assert not back.training


def test_dgean_roundtrip(tmp_path):
    torch.manual_seed(0)
    m = DGEAN(DGEANConfig(encoder_channels=(4, 4, 4, 4, 4), gaussian_embed_dim=4, depth_embed_dim=4))
    save_checkpoint(m, tmp_path / "d.pt")
    back = load_checkpoint(tmp_path / "d.pt")
    _same_params(m, back)
    assert back.config == m.config
    with pytest.raises(CheckpointError, match="expected noise_predictor"):
        load_checkpoint(tmp_path / "d.pt", expect="noise_predictor")


def test_checkpoint_errors(tmp_path):
    with pytest.raises(CheckpointError, match="train-vsr"):
        load_checkpoint(tmp_path / "none.pt", expect="dgean")
    (tmp_path / "junk.pt").write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "junk.pt")
    with pytest.raises(TypeError):
        save_checkpoint(torch.nn.Linear(2, 2), tmp_path / "x.pt")


def test_manifest_detects_tampering(tmp_path):
    out = tmp_path / "result.bin"
    out.write_bytes(b"abc")
    write_manifest(tmp_path, "h1", {"s": 1}, {"in": "d0"}, {"result.bin": file_digest(out)})
    assert manifest_matches(tmp_path, "h1", {"in": "d0"})
    assert not manifest_matches(tmp_path, "h2", {"in": "d0"})
    assert not manifest_matches(tmp_path, "h1", {"in": "d1"})
    out.write_bytes(b"abd")
    assert not manifest_matches(tmp_path, "h1", {"in": "d0"})
    out.unlink()
    assert not manifest_matches(tmp_path, "h1", {"in": "d0"})
    (tmp_path / "manifest.json").write_text("{")
    assert not manifest_matches(tmp_path, "h1", {"in": "d0"})
