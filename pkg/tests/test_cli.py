import csv
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from vgan.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, run
from vgan.config import load_config

from conftest import write_config

RING = dict(**{"train.N": 50, "train.epochs": 1, "data.n": 400, "model.K": 6, "model.hidden": 16,
               "model.d_phi": 8, "gen.dz": 2, "gen.hidden": 16, "eval.points": 64, "eval.samples": 2000,
               "eval.range": 1.6})


def small_mnist(mnist_idx, **extra):
    images, labels = mnist_idx
    entries = {"data.kind": "idx", "data.images": images, "data.labels": labels, "data.limit": 200,
               "train.N": 50, "model.K": 10, "model.channels": "2,4", "model.d_phi": 8, "gen.dz": 4,
               "gen.channels": "4,2", "vcd.d": 8, "vcd.hidden": 16, "chain.n": 4}
    entries.update(extra)
    return entries


@pytest.fixture()
def ring_cfg(tmp_path):
    return write_config(tmp_path / "ring.cfg", **RING)


def test_train_and_sample_ring(tmp_path, ring_cfg):
    out = tmp_path / "run"
    assert run(["train-vgan", "--config", ring_cfg, "--out", str(out)]) == EXIT_OK
    resolved = load_config(out / "config.resolved.txt")
    assert resolved.train_loop == "vgan" and resolved.model_K == 6
    for name in ("final.vgf", "train_log.csv", "train_log.png", "samples.csv", "samples_scatter.png"):
        assert (out / name).exists(), name
    rows = list(csv.reader(open(out / "samples.csv")))
    assert rows[0] == ["x", "y"] and len(rows) == 101

    again = tmp_path / "sample"
    assert run(["sample", "--config", ring_cfg, "--out", str(again), "--checkpoint", str(out / "final.vgf")]) == EXIT_OK
    assert (again / "samples.csv").exists()


def test_eval_bound_report(tmp_path, ring_cfg):
    out = tmp_path / "run"
    assert run(["train-vgan", "--config", ring_cfg, "--out", str(out)]) == EXIT_OK
    ev = tmp_path / "eval"
    code = run(["eval-bound", "--config", ring_cfg, "--out", str(ev), "--checkpoint", str(out / "final.vgf")])
    assert code == EXIT_OK
    rows = list(csv.DictReader(open(ev / "bound_report.csv")))
    assert [r["q"] for r in rows] == ["uniform", "model-grid"]
    for r in rows:
        # the bound never drops below the exact NLL beyond sampling noise
        assert float(r["gap"]) > -4 * float(r["q_stderr"]) - 1e-9
    assert Image.open(ev / "energy_surface.png").size[0] > 0


def test_seed_override_changes_output(tmp_path, ring_cfg):
    for seed in ("0", "1"):
        assert run(["train-gan", "--config", ring_cfg, "--out", str(tmp_path / seed), "--seed", seed]) == EXIT_OK
    assert (tmp_path / "0" / "final.vgf").read_bytes() != (tmp_path / "1" / "final.vgf").read_bytes()
    assert load_config(tmp_path / "1" / "config.resolved.txt").train_seed == 1


def test_exit_codes(tmp_path, ring_cfg):
    bad = write_config(tmp_path / "bad.cfg", **{"train.kk": 1})
    assert run(["train-vgan", "--config", bad, "--out", str(tmp_path / "a")]) == EXIT_CONFIG
    assert run(["train-vgan", "--config", ring_cfg, "--out", str(tmp_path / "b"), "--seed", "-1"]) == EXIT_CONFIG
    assert run(["train-vgan", "--config", str(tmp_path / "missing.cfg"), "--out", str(tmp_path / "c")]) == EXIT_IO
    assert run(["sample", "--config", ring_cfg, "--out", str(tmp_path / "d")]) == EXIT_CONFIG
    assert run(["sample", "--config", ring_cfg, "--out", str(tmp_path / "e"),
                "--checkpoint", str(tmp_path / "nope.vgf")]) == EXIT_IO
    with pytest.raises(SystemExit) as exc:
        run(["fly", "--out", str(tmp_path / "f")])
    assert exc.value.code == 2


def test_grad_check_command(tmp_path):
    out = tmp_path / "g"
    assert run(["grad-check", "--out", str(out)]) == EXIT_OK
    lines = (out / "grad_check.csv").read_text().splitlines()
    assert lines[0] == "case,max_relative_error" and len(lines) > 5


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "vgan", "grad-check", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.startswith("max relative error")


def test_vcd_sample_and_chain_grids(tmp_path, mnist_idx):
    cfg = write_config(tmp_path / "m.cfg", **small_mnist(mnist_idx))
    out = tmp_path / "vcd"
    assert run(["train-vcd", "--config", cfg, "--out", str(out)]) == EXIT_OK
    assert Image.open(out / "samples.png").size == (280, 280)
    ck = str(out / "final.vgf")
    chain = tmp_path / "chain"
    assert run(["chain", "--config", cfg, "--out", str(chain), "--checkpoint", ck, "--steps", "9"]) == EXIT_OK
    # x0 plus 9 transitions: 10 rows of chain.n = 4 images
    assert Image.open(chain / "chain.png").size == (4 * 28, 10 * 28)
    rows = list(csv.DictReader(open(chain / "chain_steps.csv")))
    assert [int(r["step"]) for r in rows] == list(range(1, 10))
    assert all(0.0 <= float(r["min_pixel"]) and float(r["max_pixel"]) <= 1.0 for r in rows)
    assert run(["chain", "--config", cfg, "--out", str(tmp_path / "c0"), "--checkpoint", ck, "--steps", "0"]) == EXIT_CONFIG


def test_augment_train_command(tmp_path, mnist_idx):
    entries = small_mnist(mnist_idx, **{"data.limit": 0, "clf.labeled": 100, "clf.val": 50, "clf.test": 50,
                                        "clf.epochs": 1, "clf.channels": "2,4", "clf.hidden": 16})
    cfg = write_config(tmp_path / "m.cfg", **entries)
    out = tmp_path / "aug"
    assert run(["augment-train", "--config", cfg, "--out", str(out)]) == EXIT_OK
    rows = list(csv.reader(open(out / "results.csv")))
    assert rows[0] == ["model", "dataset", "error"] and rows[1][0] == "No augmentation"
    assert 0.0 <= float(rows[1][2]) <= 100.0
    assert (out / "classifier_history.png").exists()


def test_prepare_mnist(tmp_path):
    from vgan.data import load_idx

    assert run(["prepare-mnist", "--out", str(tmp_path)]) == EXIT_OK
    ds = load_idx(tmp_path / "mnist5k-images-idx3-ubyte", tmp_path / "mnist5k-labels-idx1-ubyte")
    assert ds.images.shape == (5000, 1, 28, 28)
    counts = np.bincount(ds.labels[:1000], minlength=10)
    assert counts.min() > 50  # shuffled, so every class appears early in file order
