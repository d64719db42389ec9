"""Command-line interface: ``qfm <command> ...``.

Every command resolves its parameters as defaults < ``--config`` JSON file <
explicit flags (the seed falls back to ``$QFM_SEED`` before the default) and
writes the resolved values to ``<output>.run.json``. Failures exit nonzero
and print ``{"error": <category>, "message": ...}`` on stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ImageFormatError, ParameterError, QFMError
from .flow_model import MlpField, TrainConfig, load_field, train
from .image_core import add_gaussian_noise, psnr, ssim, SSIM_WINDOW
from .imageio import IMAGE_SUFFIXES, read_image, write_image
from .noise_estimator import (
    DEFAULT_CONSTANTS,
    CalibrationConstants,
    RatioClampedWarning,
    calibrate_constants,
    estimate_sigma,
)
from .schedule import DEFAULT_COARSE_INTERVAL, DEFAULT_GRID_SIZE, build_grid
from .solver import denoise_adaptive, denoise_fixed
from .synthetic import TOY_HIDDEN, TOY_LEARNING_RATE, TOY_RESOLUTION, toy_images

log = logging.getLogger("qfm")

EXIT_CODES = {"parameter": 2, "shape": 3, "io": 4, "divergence": 5, "error": 1}

EVAL_COLUMNS = (
    "image", "sigma", "sigma_hat", "mode", "nfe",
    "psnr_in", "psnr_out", "ssim_in", "ssim_out", "note",
)

DEFAULTS = {
    "calibrate": {"samples": 10**6, "seed": 0},
    "add-noise": {"sigma": 0.1, "seed": 0, "clip": False, "bits": 8},
    "estimate-noise": {"seed": 0, "constants": None, "repeats": 1},
    "train": {
        "toy": None,
        "resolution": list(TOY_RESOLUTION),
        "hidden": list(TOY_HIDDEN),
        "learning_rate": 1e-4,
        "batch_size": 4,
        "epochs": 100,
        "sigma_max": 1.0,
        "noise_range": [0.05, 1.0],
        "seed": 0,
    },
    "denoise": {
        "fixed": False,
        "sigma_max": 1.0,
        "grid_size": DEFAULT_GRID_SIZE,
        "coarse_interval": DEFAULT_COARSE_INTERVAL,
        "seed": 0,
        "constants": None,
        "clip": False,
        "traj": None,
        "reference": None,
    },
    "evaluate": {
        "sigmas": None,
        "fixed": False,
        "sigma_max": 1.0,
        "grid_size": DEFAULT_GRID_SIZE,
        "coarse_interval": DEFAULT_COARSE_INTERVAL,
        "seed": 0,
        "constants": None,
    },
}


def _float_list(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _int_list(text):
    try:
        return [int(x) for x in text.replace("x", ",").split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qfm", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"qfm {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", type=Path, help="JSON file with parameter values")
        if seed:
            sp.add_argument("--seed", type=int, default=None)
        return sp

    sp = common(sub.add_parser("calibrate", help="Monte-Carlo calibration constants"))
    sp.add_argument("--samples", type=int, default=None)
    sp.add_argument("--out", type=Path, required=True)

    sp = common(sub.add_parser("add-noise", help="inject Gaussian noise"))
    sp.add_argument("input", type=Path)
    sp.add_argument("output", type=Path)
    sp.add_argument("--sigma", type=float, default=None)
    sp.add_argument("--clip", action="store_true", default=None,
                    help="clip to [0, 1] (needed for .png/.pgm output)")
    sp.add_argument("--bits", type=int, choices=(8, 16), default=None)

    sp = common(sub.add_parser("estimate-noise", help="blind global noise estimate"))
    sp.add_argument("image", type=Path)
    sp.add_argument("--constants", type=Path, default=None)
    sp.add_argument("--repeats", type=int, default=None,
                    help="average over this many random block partitions")
    sp.add_argument("--out", type=Path, default=None, help="write the estimate as JSON")

    sp = common(sub.add_parser("train", help="train the MLP vector field"))
    sp.add_argument("data", type=Path, nargs="?", help="directory of clean images")
    sp.add_argument("--toy", type=int, default=None, help="use N synthetic toy images instead")
    sp.add_argument("--out", type=Path, required=True, help="checkpoint JSON path")
    sp.add_argument("--resolution", type=_int_list, default=None, help="e.g. 8x8")
    sp.add_argument("--hidden", type=_int_list, default=None, help="e.g. 256,256")
    sp.add_argument("--learning-rate", "--lr", dest="learning_rate", type=float, default=None)
    sp.add_argument("--batch-size", type=int, default=None)
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--sigma-max", type=float, default=None)
    sp.add_argument("--noise-range", type=_float_list, default=None, help="low,high")

    for name, helptext in (("denoise", "denoise one image"), ("evaluate", "noise/denoise sweep")):
        sp = common(sub.add_parser(name, help=helptext))
        if name == "denoise":
            sp.add_argument("noisy", type=Path)
            sp.add_argument("--out", type=Path, required=True)
            sp.add_argument("--traj", type=Path, default=None, help="trajectory CSV")
            sp.add_argument("--reference", type=Path, default=None, help="clean image for metrics")
            sp.add_argument("--clip", action="store_true", default=None)
        else:
            sp.add_argument("clean_dir", type=Path)
            sp.add_argument("--sigmas", type=_float_list, default=None, help="e.g. 0,0.1,0.3")
            sp.add_argument("--out", type=Path, required=True, help="metrics CSV")
        sp.add_argument("--model", type=Path, required=True, help="checkpoint JSON")
        sp.add_argument("--fixed", action="store_true", default=None)
        sp.add_argument("--sigma-max", type=float, default=None)
        sp.add_argument("--grid-size", type=int, default=None)
        sp.add_argument("--coarse-interval", type=int, default=None)
        sp.add_argument("--constants", type=Path, default=None)
    return p


def resolve(args) -> dict:
    """Merge defaults, the optional config file, $QFM_SEED and explicit flags."""
    cfg = dict(DEFAULTS[args.command])
    file_cfg = {}
    if getattr(args, "config", None):
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            raise ParameterError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise ParameterError("config file must contain a JSON object")
        file_cfg = {k.replace("-", "_"): v for k, v in file_cfg.items()}
        cfg.update(file_cfg)
    env_seed = os.environ.get("QFM_SEED")
    if "seed" in cfg and "seed" not in file_cfg and env_seed is not None:
        try:
            cfg["seed"] = int(env_seed)
        except ValueError as exc:
            raise ParameterError(f"QFM_SEED must be an integer: {exc}") from exc
    for key, value in vars(args).items():
        if key in ("command", "config", "verbose") or value is None:
            continue
        cfg[key] = value
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in cfg.items()}


def _write_run(out_path, cmd, cfg, extra=None):
    record = {"command": cmd, "version": __version__, "config": cfg}
    if extra:
        record.update(extra)
    path = Path(str(out_path) + ".run.json")
    path.write_text(json.dumps(record, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(value):
    if isinstance(value, float) and math.isinf(value):
        return "inf"
    if isinstance(value, (np.integer, np.floating)):
        return value.item()
    raise TypeError(f"not JSON serialisable: {type(value)}")


def _constants(path):
    return CalibrationConstants.load(path) if path else DEFAULT_CONSTANTS


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return "inf" if math.isinf(value) else repr(value)
    return str(value)


def cmd_calibrate(cfg):
    consts = calibrate_constants(cfg["samples"], cfg["seed"])
    consts.save(cfg["out"])
    _write_run(cfg["out"], "calibrate", cfg)
    print(f"c1={consts.c1:.6f} c2={consts.c2:.6f}")


def cmd_add_noise(cfg):
    img = read_image(cfg["input"])
    noisy = add_gaussian_noise(img, cfg["sigma"], cfg["seed"], clip=cfg["clip"])
    write_image(cfg["output"], noisy, bits=cfg["bits"], clip=cfg["clip"])
    _write_run(cfg["output"], "add-noise", cfg)


def cmd_estimate(cfg):
    img = read_image(cfg["image"])
    est = estimate_sigma(img, _constants(cfg["constants"]), cfg["seed"], repeats=cfg["repeats"])
    print(repr(est.sigma_hat))
    if est.clipped:
        log.warning("input looks clipped; the estimate is biased low")
    if cfg.get("out"):
        result = {
            "sigma_hat": est.sigma_hat,
            "block_count": est.block_count,
            "partition_seed": est.partition_seed,
            "repeats": est.repeats,
            "clipped": est.clipped,
        }
        Path(cfg["out"]).write_text(json.dumps(result, indent=2) + "\n")
        _write_run(cfg["out"], "estimate-noise", cfg)


def _load_dir(directory):
    paths = sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    return paths


def cmd_train(cfg):
    res = tuple(cfg["resolution"])
    if len(res) != 2:
        raise ParameterError(f"resolution needs two values, got {res}")
    if cfg["toy"]:
        data = toy_images(cfg["toy"], res, seed=cfg["seed"])
    elif cfg.get("data"):
        data = [read_image(p) for p in _load_dir(cfg["data"])]
    else:
        raise ParameterError("give a data directory or --toy N")
    tc = TrainConfig(
        learning_rate=cfg["learning_rate"],
        batch_size=cfg["batch_size"],
        epochs=cfg["epochs"],
        sigma_max=cfg["sigma_max"],
        noise_level_range=tuple(cfg["noise_range"]),
        seed=cfg["seed"],
    )
    net = MlpField.init(res, tuple(cfg["hidden"]), seed=cfg["seed"], sigma_max=cfg["sigma_max"])
    result = train(net, data, tc)
    out = Path(cfg["out"])
    result.field.save(out)
    loss_path = out.with_suffix(".loss.csv")
    with open(loss_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mean_loss"])
        for i, loss in enumerate(result.history, 1):
            w.writerow([i, repr(loss)])
    _write_run(out, "train", cfg, {"final_loss": result.history[-1]})
    print(f"epochs={len(result.history)} first_loss={result.history[0]:.6g} "
          f"final_loss={result.history[-1]:.6g}")


def _denoise(noisy, field, cfg, fixed, seed, reference=None):
    grid = build_grid(cfg["grid_size"])
    if fixed:
        return denoise_fixed(noisy, field, grid, cfg["coarse_interval"], cfg["sigma_max"],
                             reference=reference)
    return denoise_adaptive(noisy, field, _constants(cfg["constants"]), cfg["sigma_max"],
                            grid, cfg["coarse_interval"], seed, reference=reference)


def cmd_denoise(cfg):
    field = load_field(cfg["model"])
    noisy = read_image(cfg["noisy"])
    reference = read_image(cfg["reference"]) if cfg.get("reference") else None
    res = _denoise(noisy, field, cfg, cfg["fixed"], cfg["seed"], reference)
    write_image(cfg["out"], res.output, clip=cfg["clip"])
    if cfg.get("traj"):
        res.trajectory.write_csv(cfg["traj"])
    extra = {"schedule": res.schedule.to_dict(), "total_nfe": res.total_nfe,
             "sigma_hat": res.estimate.sigma_hat if res.estimate else None}
    _write_run(cfg["out"], "denoise", cfg, extra)
    print(f"nfe={res.total_nfe} t_start={res.schedule.t_start:.6f}")


def cmd_evaluate(cfg):
    sigmas = cfg["sigmas"]
    if not sigmas:
        raise ParameterError("give at least one noise level with --sigmas")
    for s in sigmas:
        if not 0 <= s <= cfg["sigma_max"]:
            raise ParameterError(f"sigma {s} outside [0, sigma_max={cfg['sigma_max']}]")
    field = load_field(cfg["model"])
    rows = []
    for i, path in enumerate(_load_dir(cfg["clean_dir"])):
        try:
            clean = read_image(path)
            if clean.shape != field.resolution:
                raise ImageFormatError(f"shape {clean.shape} differs from model {field.resolution}")
        except (ImageFormatError, OSError) as exc:
            log.warning("skipping %s: %s", path.name, exc)
            rows.append({"image": path.name, "mode": "skipped", "note": str(exc)})
            continue
        metric_ssim = min(clean.shape) >= SSIM_WINDOW
        for j, sigma in enumerate(sigmas):
            seed = int(np.random.SeedSequence([cfg["seed"], i, j]).generate_state(1)[0])
            noisy = add_gaussian_noise(clean, sigma, seed)
            base = {
                "image": path.name,
                "sigma": sigma,
                "psnr_in": psnr(noisy, clean),
                "ssim_in": ssim(noisy, clean) if metric_ssim else None,
            }
            modes = [False, True] if cfg["fixed"] else [False]
            for fixed in modes:
                res = _denoise(noisy, field, cfg, fixed, seed)
                rows.append(dict(
                    base,
                    sigma_hat=res.estimate.sigma_hat if res.estimate else None,
                    mode="fixed" if fixed else "adaptive",
                    nfe=res.total_nfe,
                    psnr_out=psnr(res.output, clean),
                    ssim_out=ssim(res.output, clean) if metric_ssim else None,
                ))
    with open(cfg["out"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EVAL_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in EVAL_COLUMNS])
    _write_run(cfg["out"], "evaluate", cfg)
    print(f"rows={len(rows)}")


COMMANDS = {
    "calibrate": cmd_calibrate,
    "add-noise": cmd_add_noise,
    "estimate-noise": cmd_estimate,
    "train": cmd_train,
    "denoise": cmd_denoise,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RatioClampedWarning)
            COMMANDS[args.command](cfg)
    except QFMError as exc:
        print(json.dumps({"error": exc.category, "message": str(exc)}), file=sys.stderr)
        return EXIT_CODES.get(exc.category, 1)
    except OSError as exc:
        print(json.dumps({"error": "io", "message": str(exc)}), file=sys.stderr)
        return EXIT_CODES["io"]
    return 0


if __name__ == "__main__":
    sys.exit(main())
