import csv
import json
import math

import numpy as np
import pytest

from qfm.cli import main
from qfm.flow_model import MlpField, make_path_sample, oracle_field
from qfm.imageio import read_image, write_image


def run(*argv):
    return main([str(a) for a in argv])


def error_of(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_calibrate_byte_identical(tmp_path):
    assert run("calibrate", "--samples", 200000, "--seed", 4, "--out", tmp_path / "a.json") == 0
    assert run("calibrate", "--samples", 200000, "--seed", 4, "--out", tmp_path / "b.json") == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    obj = json.loads((tmp_path / "a.json").read_text())
    assert set(obj) == {"c1", "c2", "samples", "seed"}
    assert abs(obj["c1"] - 2.06) < 0.02 and abs(obj["c2"] - 0.59) < 0.02
    run_cfg = json.loads((tmp_path / "a.json.run.json").read_text())
    assert run_cfg["config"]["samples"] == 200000


def test_calibrate_rejects_tiny_sample(tmp_path, capsys):
    assert run("calibrate", "--samples", 10, "--out", tmp_path / "c.json") == 2
    assert error_of(capsys)["error"] == "parameter"


def test_estimate_constant_image(tmp_path, capsys):
    write_image(tmp_path / "flat.pgm", np.full((32, 32), 0.5))
    assert run("estimate-noise", tmp_path / "flat.pgm") == 0
    assert float(capsys.readouterr().out.strip()) == 0.0


def test_add_noise_then_estimate(tmp_path, capsys):
    write_image(tmp_path / "flat.png", np.full((256, 256), 0.5), bits=16)
    assert run("add-noise", tmp_path / "flat.png", tmp_path / "noisy.npy", "--sigma", 0.2, "--seed", 1) == 0
    noisy = read_image(tmp_path / "noisy.npy")
    assert abs(np.std(noisy) - 0.2) < 0.005
    capsys.readouterr()
    assert run("estimate-noise", tmp_path / "noisy.npy", "--seed", 3, "--out", tmp_path / "e.json") == 0
    printed = float(capsys.readouterr().out.strip())
    assert abs(printed - 0.2) < 0.01
    assert json.loads((tmp_path / "e.json").read_text())["sigma_hat"] == printed


def test_add_noise_to_png_needs_clip(tmp_path, capsys):
    write_image(tmp_path / "flat.png", np.full((16, 16), 0.5))
    assert run("add-noise", tmp_path / "flat.png", tmp_path / "n.png", "--sigma", 0.5) == 4
    assert error_of(capsys)["error"] == "io"
    assert run("add-noise", tmp_path / "flat.png", tmp_path / "n.png", "--sigma", 0.5, "--clip") == 0


def test_config_file_and_flag_precedence(tmp_path, monkeypatch):
    write_image(tmp_path / "flat.png", np.full((64, 64), 0.5))
    (tmp_path / "cfg.json").write_text(json.dumps({"sigma": 0.3, "seed": 5}))
    monkeypatch.setenv("QFM_SEED", "99")
    run("add-noise", tmp_path / "flat.png", tmp_path / "a.npy", "--config", tmp_path / "cfg.json")
    rec = json.loads((tmp_path / "a.npy.run.json").read_text())["config"]
    assert rec["sigma"] == 0.3 and rec["seed"] == 5
    run("add-noise", tmp_path / "flat.png", tmp_path / "b.npy", "--config", tmp_path / "cfg.json", "--sigma", 0.1)
    rec = json.loads((tmp_path / "b.npy.run.json").read_text())["config"]
    assert rec["sigma"] == 0.1
    run("add-noise", tmp_path / "flat.png", tmp_path / "c.npy")
    assert json.loads((tmp_path / "c.npy.run.json").read_text())["config"]["seed"] == 99


def test_train_deterministic_checkpoint(tmp_path):
    args = ["train", "--toy", 8, "--resolution", "8x8", "--hidden", "8", "--epochs", 2, "--seed", 3]
    assert run(*args, "--out", tmp_path / "a.json") == 0
    assert run(*args, "--out", tmp_path / "b.json") == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    with open(tmp_path / "a.loss.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["epoch", "mean_loss"] and len(rows) == 3
    assert MlpField.load(tmp_path / "a.json").hidden == (8,)


def test_train_from_directory(tmp_path):
    d = tmp_path / "data"
    d.mkdir()
    for i in range(3):
        write_image(d / f"{i}.pgm", np.full((4, 4), i / 4))
    assert run("train", d, "--resolution", "4x4", "--hidden", "6", "--epochs", 1, "--out", tmp_path / "m.json") == 0


def _oracle_case(tmp_path, sigma, n=32, seed=0):
    x0 = np.random.default_rng(seed).random((n, n)) * 0.5 + 0.25
    s = make_path_sample(x0, sigma, 1.0, 1.0, seed=seed + 1)
    oracle_field(x0, s.x1, sigma).save(tmp_path / "oracle.json")
    write_image(tmp_path / "clean.npy", x0)
    write_image(tmp_path / "noisy.npy", s.x1)
    return x0, s


def test_denoise_fixed_equals_adaptive_at_ratio_one(tmp_path):
    x0 = np.full((32, 32), 0.5)
    write_image(tmp_path / "noisy.npy", x0 + 1.3 * np.random.default_rng(0).standard_normal(x0.shape))
    MlpField.init((32, 32), (8,), seed=0).save(tmp_path / "m.json")
    common = ["denoise", tmp_path / "noisy.npy", "--model", tmp_path / "m.json"]
    assert run(*common, "--out", tmp_path / "a.npy") == 0
    assert run(*common, "--fixed", "--out", tmp_path / "b.npy") == 0
    assert (tmp_path / "a.npy").read_bytes() == (tmp_path / "b.npy").read_bytes()


def test_denoise_trajectory_csv(tmp_path):
    _oracle_case(tmp_path, 0.5)
    assert run("denoise", tmp_path / "noisy.npy", "--model", tmp_path / "oracle.json",
               "--out", tmp_path / "out.npy", "--traj", tmp_path / "t.csv",
               "--reference", tmp_path / "clean.npy") == 0
    with open(tmp_path / "t.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["step", "t", "nfe", "psnr", "ssim"]
    rec = json.loads((tmp_path / "out.npy.run.json").read_text())
    assert rec["total_nfe"] == len(rows) - 1 == len(rec["schedule"]["indices"]) - 1


def test_denoise_shape_error(tmp_path, capsys):
    write_image(tmp_path / "n.npy", np.zeros((16, 16)))
    MlpField.init((8, 8), (4,), seed=0).save(tmp_path / "m.json")
    assert run("denoise", tmp_path / "n.npy", "--model", tmp_path / "m.json", "--out", tmp_path / "o.npy") == 3
    assert error_of(capsys)["error"] == "shape"


def test_evaluate(tmp_path):
    d = tmp_path / "clean"
    d.mkdir()
    rng = np.random.default_rng(0)
    for i in range(3):
        write_image(d / f"img{i}.pgm", np.full((16, 16), rng.integers(1, 255) / 255))
    (d / "broken.png").write_bytes(b"not a png")
    MlpField.init((16, 16), (8,), seed=0).save(tmp_path / "m.json")
    assert run("evaluate", d, "--sigmas", "0,0.3", "--model", tmp_path / "m.json",
               "--fixed", "--out", tmp_path / "e.csv") == 0
    with open(tmp_path / "e.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0])[:9] == ["image", "sigma", "sigma_hat", "mode", "nfe",
                                 "psnr_in", "psnr_out", "ssim_in", "ssim_out"]
    skipped = [r for r in rows if r["mode"] == "skipped"]
    assert len(skipped) == 1 and skipped[0]["image"] == "broken.png"
    done = [r for r in rows if r["mode"] != "skipped"]
    assert len(done) == 3 * 2 * 2
    for r in done:
        if float(r["sigma"]) == 0:
            assert r["psnr_in"] == "inf"
            if r["mode"] == "adaptive":
                assert int(r["nfe"]) <= 1
    ad = np.mean([int(r["nfe"]) for r in done if r["mode"] == "adaptive"])
    fx = np.mean([int(r["nfe"]) for r in done if r["mode"] == "fixed"])
    assert ad < fx
    again = tmp_path / "e2.csv"
    run("evaluate", d, "--sigmas", "0,0.3", "--model", tmp_path / "m.json", "--fixed", "--out", again)
    assert again.read_bytes() == (tmp_path / "e.csv").read_bytes()


def test_evaluate_needs_sigmas(tmp_path, capsys):
    MlpField.init((4, 4), (2,), seed=0).save(tmp_path / "m.json")
    assert run("evaluate", tmp_path, "--model", tmp_path / "m.json", "--out", tmp_path / "e.csv") == 2
    assert error_of(capsys)["error"] == "parameter"
