"""``d2r`` command-line entry point.

Exit codes: 0 success, 2 validation error, 3 runtime failure. With
``--json-errors`` failures are also reported as one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__, artifacts
from .config import ConfigError, load_run_config, noise_params, pipeline_config
from .degradation import DegradationConfig, add_poisson_gaussian_noise, downsample_discard, downsample_mean
from .metrics import EvalOptions, evaluate
from .volume import VolumeFormatError, generate_phantom, load_volume, save_volume

log = logging.getLogger("d2r")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3

# default file names inside the workspace
DEFAULTS = {
    "phantom": "phantom.f32",
    "degraded": "degraded.f32",
    "predictor": "stage1/predictor.pt",
    "recovered": "stage2/recovered.f32",
    "dgean": "stage3/dgean.pt",
    "output": "infer/output.f32",
    "eval": "eval",
}


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def workspace(args) -> Path:
    ws = args.workspace or os.environ.get("D2R_WORKSPACE") or "."
    return Path(ws)


def _path(args, value, default_key: str) -> Path:
    if value is not None:
        return Path(value)
    return workspace(args) / DEFAULTS[default_key]


def manifest_path(out: Path) -> Path:
    return out.with_name(out.name + ".manifest.json")


def _outputs(out: Path) -> dict:
    files = [out]
    side = out.with_suffix(".json")
    if out.suffix != ".json" and side.exists():
        files.append(side)
    return {f.name: artifacts.file_digest(f) for f in files}


def _up_to_date(out: Path, chash: str, inputs: dict) -> bool:
    mp = manifest_path(out)
    if not mp.exists() or not out.exists():
        return False
    try:
        m = json.loads(mp.read_text())
    except json.JSONDecodeError:
        return False
    if m.get("config_hash") != chash or m.get("inputs") != inputs:
        return False
    return m.get("outputs") == _outputs(out)


def _record(out: Path, command: str, chash: str, seeds: dict, inputs: dict, extra=None) -> None:
    doc = {"command": command, "config_hash": chash, "seeds": seeds, "inputs": inputs,
           "outputs": _outputs(out), "version": __version__}
    if extra:
        doc.update(extra)
    manifest_path(out).write_text(json.dumps(doc, indent=2, sort_keys=True))


def _input_digests(**paths) -> dict:
    out = {}
    for name, p in paths.items():
        p = Path(p)
        if not p.exists():
            raise FileNotFoundError(f"{name} input {p} does not exist")
        out[name] = artifacts.file_digest(p)
    return out


def _skip(out: Path) -> int:
    log.info("%s is up to date; skipping", out)
    print(str(out))
    return EXIT_OK


# -- commands -----------------------------------------------------------------

def cmd_phantom(args, doc) -> int:
    out = _path(args, args.out, "phantom")
    seed = doc["seeds"]["phantom"] if args.seed is None else args.seed
    params = {"seed": seed, "shape": list(args.shape), "structures": args.structures,
              "voxel_size_nm": list(args.voxel_size), "dtype": args.dtype}
    chash = artifacts.config_hash(params)
    if _up_to_date(out, chash, {}):
        return _skip(out)
    v = generate_phantom(seed, tuple(args.shape), args.structures, tuple(args.voxel_size))
    out.parent.mkdir(parents=True, exist_ok=True)
    save_volume(v, out, dtype=args.dtype)
    _record(out, "phantom", chash, {"phantom": seed}, {}, {"params": params})
    print(str(out))
    return EXIT_OK


def cmd_degrade(args, doc) -> int:
    src = _path(args, args.input, "phantom")
    out = _path(args, args.out, "degraded")
    deg = doc.get("degrade", {})
    r = args.factor if args.factor is not None else deg.get("factor", 4)
    phase = args.phase if args.phase is not None else deg.get("keep_phase", 0)
    seed = doc["seeds"]["degrade"] if args.seed is None else args.seed
    noise = noise_params(doc, seed)
    if args.alpha is not None or args.sigma is not None:
        noise = type(noise)(args.alpha if args.alpha is not None else noise.alpha,
                            args.sigma if args.sigma is not None else noise.sigma, seed)
    cfg = DegradationConfig(r=r, keep_phase=phase, noise=noise)
    params = {"factor": r, "keep_phase": phase, "alpha": noise.alpha, "sigma": noise.sigma,
              "mode": args.mode, "seed": seed}
    chash = artifacts.config_hash(params)
    inputs = _input_digests(volume=src)
    if _up_to_date(out, chash, inputs):
        return _skip(out)
    v = load_volume(src)
    noisy = add_poisson_gaussian_noise(v, noise)
    low = downsample_discard(noisy, cfg) if args.mode == "discard" else downsample_mean(noisy, r)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_volume(low, out)
    _record(out, "degrade", chash, {"degrade": seed}, inputs, {"params": params})
    print(str(out))
    return EXIT_OK


def cmd_train_diffusion(args, doc) -> int:
    from .pipeline import stage1

    src = _path(args, args.input, "degraded")
    out = _path(args, args.out, "predictor")
    cfg = pipeline_config(doc, factor=args.factor)
    chash = cfg.hash("sde", "stage1", "seeds")
    inputs = _input_digests(volume=src)
    if _up_to_date(out, chash, inputs):
        return _skip(out)
    model = stage1(load_volume(src), cfg)
    artifacts.save_checkpoint(model, out)
    _record(out, "train-diffusion", chash, {"stage1": cfg.seeds.stage1}, inputs,
            {"schedule": cfg.sde.schedule().to_dict(), "config": cfg.to_dict()})
    print(str(out))
    return EXIT_OK


def cmd_recover(args, doc) -> int:
    from .pipeline import stage2

    src = _path(args, args.input, "degraded")
    ckpt = _path(args, args.checkpoint, "predictor")
    out = _path(args, args.out, "recovered")
    cfg = pipeline_config(doc, workers=args.workers, factor=args.factor)
    chash = cfg.hash("sde", "stage1", "seeds", "stage2_batch")
    model = artifacts.load_checkpoint(ckpt, expect="noise_predictor")
    inputs = _input_digests(volume=src, checkpoint=ckpt)
    if _up_to_date(out, chash, inputs):
        return _skip(out)
    rec = stage2(model, load_volume(src), cfg)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_volume(rec, out)
    _record(out, "recover", chash, {"stage2": cfg.seeds.stage2}, inputs)
    print(str(out))
    return EXIT_OK


def cmd_train_vsr(args, doc) -> int:
    from .pipeline import _train_vsr

    src = _path(args, args.input, "recovered")
    out = _path(args, args.out, "dgean")
    cfg = pipeline_config(doc, factor=args.factor)
    axes = (0,) if args.supervised else (2, 1)
    chash = cfg.hash("dgean", "losses", "dgean_train", "seeds")
    inputs = _input_digests(volume=src)
    inputs["axes"] = list(axes)
    if _up_to_date(out, chash, inputs):
        return _skip(out)
    model = _train_vsr(load_volume(src), cfg, axes, "stage3")
    artifacts.save_checkpoint(model, out)
    _record(out, "train-vsr", chash, {"stage3": cfg.seeds.stage3}, inputs, {"config": cfg.to_dict()})
    print(str(out))
    return EXIT_OK


def cmd_infer(args, doc) -> int:
    from .dgean import infer_axial

    src = _path(args, args.input, "degraded")
    ckpt = _path(args, args.checkpoint, "dgean")
    out = _path(args, args.out, "output")
    if args.factor is None:
        raise UsageError("infer needs --factor (any integer >= 2)")
    if args.factor < 2:
        raise UsageError(f"--factor must be >= 2, got {args.factor}")
    model = artifacts.load_checkpoint(ckpt, expect="dgean")
    chash = artifacts.config_hash({"factor": args.factor, "seed": doc["seeds"]["infer"]})
    inputs = _input_digests(volume=src, checkpoint=ckpt)
    if _up_to_date(out, chash, inputs):
        return _skip(out)
    pred = infer_axial(model, load_volume(src), args.factor)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_volume(pred, out)
    _record(out, "infer", chash, {"infer": doc["seeds"]["infer"]}, inputs, {"factor": args.factor})
    print(str(out))
    return EXIT_OK


def cmd_eval(args, doc) -> int:
    pred_path = _path(args, args.pred, "output")
    gt_path = _path(args, args.gt, "phantom")
    out_dir = _path(args, args.out_dir, "eval")
    ev = doc.get("eval", {})
    use_fsc = args.fsc or ev.get("fsc", False)
    plot = args.plot or ev.get("plot", False)
    out_dir.mkdir(parents=True, exist_ok=True)
    opts = EvalOptions(fsc=use_fsc,
                       mask_threshold=args.mask_threshold if args.mask_threshold is not None
                       else ev.get("mask_threshold"),
                       report_path=str(out_dir / "report.json"),
                       fsc_csv_path=str(out_dir / "fsc.csv") if use_fsc else None,
                       fsc_plot_path=str(out_dir / "fsc.png") if use_fsc and plot else None)
    report, _ = evaluate(load_volume(pred_path), load_volume(gt_path), opts)
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK


COMMANDS = {
    "phantom": cmd_phantom,
    "degrade": cmd_degrade,
    "train-diffusion": cmd_train_diffusion,
    "recover": cmd_recover,
    "train-vsr": cmd_train_vsr,
    "infer": cmd_infer,
    "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON run config (defaults apply when omitted)")
    common.add_argument("--workspace", help="default location for inputs/outputs (env D2R_WORKSPACE)")
    common.add_argument("--json-errors", action="store_true", help="report failures as JSON on stderr")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="d2r", description="Axial super-resolution of anisotropic volumes.")
    p.add_argument("--version", action="version", version=f"d2r {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("phantom", parents=[common], help="generate a synthetic isotropic volume")
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    s.add_argument("--shape", type=int, nargs=3, default=(64, 64, 64), metavar=("Z", "Y", "X"))
    s.add_argument("--structures", type=int, default=24)
    s.add_argument("--voxel-size", type=float, nargs=3, default=(10.0, 10.0, 10.0), metavar=("Z", "Y", "X"))
    s.add_argument("--dtype", choices=("f32", "u8"), default="f32")

    s = sub.add_parser("degrade", parents=[common], help="add acquisition noise and drop axial slices")
    s.add_argument("--input")
    s.add_argument("--out")
    s.add_argument("--factor", type=int)
    s.add_argument("--phase", type=int)
    s.add_argument("--alpha", type=float)
    s.add_argument("--sigma", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--mode", choices=("discard", "mean"), default="discard")

    s = sub.add_parser("train-diffusion", parents=[common], help="stage I: fit the lateral restorer")
    s.add_argument("--input")
    s.add_argument("--out")
    s.add_argument("--factor", type=int)

    s = sub.add_parser("recover", parents=[common], help="stage II: restore XZ/YZ slices and fuse")
    s.add_argument("--input")
    s.add_argument("--checkpoint")
    s.add_argument("--out")
    s.add_argument("--factor", type=int)
    s.add_argument("--workers", type=int, default=1)

    s = sub.add_parser("train-vsr", parents=[common], help="stage III: fit the slice interpolator")
    s.add_argument("--input")
    s.add_argument("--out")
    s.add_argument("--factor", type=int)
    s.add_argument("--supervised", action="store_true", help="sample along Z of a high-resolution volume")

    s = sub.add_parser("infer", parents=[common], help="fill axial gaps at any integer factor")
    s.add_argument("--input")
    s.add_argument("--checkpoint")
    s.add_argument("--out")
    s.add_argument("--factor", type=int)

    s = sub.add_parser("eval", parents=[common], help="PSNR/SSIM per plane, FSC and mask overlap")
    s.add_argument("--pred")
    s.add_argument("--gt")
    s.add_argument("--out-dir")
    s.add_argument("--fsc", action="store_true")
    s.add_argument("--plot", action="store_true", help="also render the FSC curve to fsc.png")
    s.add_argument("--mask-threshold", type=float)
    return p


def _fail(args_json: bool, code: int, exc: BaseException) -> int:
    msg = str(exc)
    if args_json:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": msg, "exit_code": code}) + "\n")
    else:
        sys.stderr.write(f"d2r: error: {msg}\n")
    return code


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    json_errors = "--json-errors" in argv
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail(json_errors, EXIT_VALIDATION, exc)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "workers", 1) < 1:
            raise UsageError("--workers must be >= 1")
        doc = load_run_config(args.config)
        ws = doc.get("paths", {}).get("workspace")
        if args.workspace is None and ws is not None and "D2R_WORKSPACE" not in os.environ:
            args.workspace = ws
        return COMMANDS[args.command](args, doc)
    except (UsageError, ConfigError, VolumeFormatError, ValueError, FileNotFoundError) as exc:
        return _fail(args.json_errors, EXIT_VALIDATION, exc)
    except Exception as exc:  # noqa: BLE001 - surfaced as exit code 3
        log.debug("failure", exc_info=True)
        return _fail(args.json_errors, EXIT_RUNTIME, exc)


if __name__ == "__main__":
    sys.exit(main())
