import csv
import json

import numpy as np
import pytest

from d2r.artifacts import file_digest
from d2r.cli import main
from d2r.volume import load_volume, save_volume, Volume

TINY_DOC = {
    "degrade": {"factor": 4, "alpha": 0.004, "sigma": 0.05},
    "sde": {"T": 3},
    "dgean": {"encoder_channels": [4, 4, 4, 4, 4], "gaussian_embed_dim": 4, "depth_embed_dim": 4},
    "losses": {"lambda_ffl": 0, "lambda_cont": 0, "lambda_ssim": 0},
    "train": {
        "diffusion": {"n_pairs": 8, "patch": [9, 16],
                      "predictor": {"base_channels": 4, "n_scales": 2, "time_dim": 8, "groups": 2},
                      "optimizer": {"steps": 2, "batch_size": 4, "val_every": 2}},
        "vsr": {"steps": 2, "batch_size": 2, "patch": [16, 16], "val_windows": 2, "val_every": 2},
        "stage2_batch": 64,
    },
    "seeds": {"phantom": 0, "degrade": 1, "stage1": 2, "stage2": 3, "stage3": 4, "infer": 5},
}


@pytest.fixture
def ws(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps(TINY_DOC))
    return tmp_path, ["--config", str(cfg), "--workspace", str(tmp_path)]


def run(*argv):
    return main([str(a) for a in argv])


def test_phantom_and_degrade(ws, capsys):
    d, common = ws
    assert run("phantom", *common, "--shape", 32, 24, 20, "--structures", 6) == 0
    v = load_volume(d / "phantom.f32")
    assert v.shape == (32, 24, 20)
    assert run("degrade", *common) == 0
    low = load_volume(d / "degraded.f32")
    assert low.shape == (8, 24, 20)
    assert low.voxel_size_nm == (40.0, 10.0, 10.0)
    m = json.loads((d / "degraded.f32.manifest.json").read_text())
    assert m["seeds"] == {"degrade": 1} and m["inputs"]["volume"] == file_digest(d / "phantom.f32")


def test_degrade_factor8_depth512(tmp_path):
    src = tmp_path / "deep.f32"
    save_volume(Volume(np.random.default_rng(0).random((512, 8, 8), dtype=np.float32)), src)
    out = tmp_path / "low.f32"
    assert run("degrade", "--input", src, "--out", out, "--factor", 8) == 0
    assert load_volume(out).shape == (64, 8, 8)
    first = file_digest(out)
    out.unlink()
    assert run("degrade", "--input", src, "--out", out, "--factor", 8) == 0
    assert file_digest(out) == first


def test_rerun_skips_when_up_to_date(ws, capsys):
    d, common = ws
    run("phantom", *common, "--shape", 16, 16, 16)
    mtime = (d / "phantom.f32").stat().st_mtime_ns
    run("phantom", *common, "--shape", 16, 16, 16)
    assert (d / "phantom.f32").stat().st_mtime_ns == mtime
    run("phantom", *common, "--shape", 16, 16, 16, "--seed", 9)
    assert json.loads((d / "phantom.f32.manifest.json").read_text())["seeds"] == {"phantom": 9}


def test_factor_one_is_validation_error(ws, capsys):
    d, common = ws
    run("phantom", *common, "--shape", 16, 16, 16)
    assert run("degrade", *common, "--factor", 1) == 2
    assert "error" in capsys.readouterr().err


def test_missing_checkpoint_is_runtime_error(ws, capsys):
    d, common = ws
    run("phantom", *common, "--shape", 16, 16, 16)
    run("degrade", *common)
    capsys.readouterr()
    assert run("recover", *common, "--json-errors") == 3
    err = json.loads(capsys.readouterr().err)
    assert err["exit_code"] == 3 and err["error"] == "CheckpointError"
    assert "train-diffusion" in err["message"]


def test_bad_arguments_and_config(tmp_path, capsys):
    assert run("nonsense") == 2
    capsys.readouterr()
    assert run("phantom", "--shape", 1, "--json-errors") == 2
    assert json.loads(capsys.readouterr().err)["exit_code"] == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"degrade": {"factr": 4}}))
    assert run("phantom", "--config", bad, "--workspace", tmp_path) == 2
    assert "factr" in capsys.readouterr().err
    assert run("infer", "--workspace", tmp_path) == 2


def test_workspace_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("D2R_WORKSPACE", str(tmp_path))
    assert run("phantom", "--shape", 16, 16, 16) == 0
    assert (tmp_path / "phantom.f32").exists()


def test_full_chain_and_eval(ws, capsys):
    d, common = ws
    assert run("phantom", *common, "--shape", 32, 32, 32, "--structures", 6) == 0
    assert run("degrade", *common) == 0
    assert run("train-diffusion", *common) == 0
    assert run("recover", *common, "--workers", 2) == 0
    assert load_volume(d / "stage2/recovered.f32").shape == (29, 32, 32)
    assert run("train-vsr", *common) == 0
    assert run("infer", *common, "--factor", 4) == 0
    out = load_volume(d / "infer/output.f32")
    low = load_volume(d / "degraded.f32")
    assert out.shape == (29, 32, 32)
    assert out.data[::4].tobytes() == low.data.tobytes()
    assert run("infer", *common, "--factor", 3, "--out", d / "x3.f32") == 0
    assert load_volume(d / "x3.f32").shape == (22, 32, 32)
    capsys.readouterr()

    assert run("eval", *common, "--pred", d / "phantom.f32", "--gt", d / "phantom.f32", "--fsc") == 0
    report = json.loads((d / "eval/report.json").read_text())
    assert report["ssim_xz"]["mean"] == pytest.approx(1.0, abs=1e-9)
    assert report["resolution_nm"] == pytest.approx(20.0)
    with open(d / "eval/fsc.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["shell_freq", "correlation", "resolution_nm_at_this_freq"]
    assert len(rows) - 1 == 16

    assert run("eval", *common, "--fsc", "--plot", "--out-dir", d / "ev1") == 0
    assert (d / "ev1/fsc.png").stat().st_size > 0
    assert run("eval", *common, "--mask-threshold", 0.5, "--out-dir", d / "ev2") == 0
    report = json.loads((d / "ev2/report.json").read_text())
    assert report["resolution_nm"] is None
    assert 0.0 <= report["iou"] <= report["dice"] <= 1.0


def test_wrong_checkpoint_kind(ws, capsys):
    d, common = ws
    run("phantom", *common, "--shape", 32, 32, 32)
    run("degrade", *common)
    run("train-diffusion", *common)
    capsys.readouterr()
    assert run("infer", *common, "--factor", 4, "--checkpoint", d / "stage1/predictor.pt", "--json-errors") == 3
    assert "expected dgean" in json.loads(capsys.readouterr().err)["message"]
