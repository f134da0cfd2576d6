"""CLI behavior: exit codes, config resolution, output layout, determinism,
and the perfect-prediction eval fixture."""

import numpy as np
import pytest

from semeda.cli import parse_config_file, resolve_config, run
from semeda.datasets import Sample, encode_pnm, load_dataset, write_manifest
from semeda.networks import ConvLayer, SegNetParams, save_params
from semeda.svgplot import line_plot


def make_dataset(tmp_path, n=6, size=32, classes=3, seed=0, val=2):
    rc = run(["gen-data", "--out", str(tmp_path), "--count", str(n),
              "--size", str(size), "--classes", str(classes),
              "--seed", str(seed), "--val-fraction", str(val / n)])
    assert rc == 0
    return tmp_path


# ---------------------------------------------------------------------------
# usage errors


def test_no_command_is_usage_error(capsys):
    assert run([]) == 1
    assert "usage" in capsys.readouterr().err.lower()


def test_unknown_subcommand_exit_1(capsys):
    assert run(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err.lower()


def test_unknown_flag_exit_1(capsys):
    assert run(["gen-data", "--frobs", "3"]) == 1
    err = capsys.readouterr().err
    assert "usage" in err.lower()


def test_train_seg_semeda_requires_edge_checkpoint(tmp_path, capsys):
    data = make_dataset(tmp_path / "d")
    rc = run(["train-seg", "--data", str(data), "--out", str(tmp_path / "o"),
              "--strategy", "semeda", "--epochs", "1"])
    assert rc == 1
    assert "edge-checkpoint" in capsys.readouterr().err


def test_missing_data_dir_is_data_error(tmp_path, capsys):
    rc = run(["train-edge", "--data", str(tmp_path / "absent"),
              "--out", str(tmp_path / "o"), "--epochs", "1"])
    assert rc == 2


# ---------------------------------------------------------------------------
# config file handling


def test_config_file_parsed_and_overridden(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("seed = 9\nsigma = 0.25  # comment\nstrategy = ppce\n")
    values = parse_config_file(cfg_file)
    assert values == {"seed": 9, "sigma": 0.25, "strategy": "ppce"}


def test_config_unknown_key_rejected(tmp_path, capsys):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("sigmaa = 1\n")
    rc = run(["gen-data", "--config", str(cfg_file), "--out", str(tmp_path / "o")])
    assert rc == 1
    assert "sigmaa" in capsys.readouterr().err


def test_flags_beat_config_file(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("seed = 9\ncount = 4\n")

    class Args:
        command = "gen-data"
        config = str(cfg_file)
        seed = 11
        count = None

    resolved = resolve_config(Args())
    assert resolved["seed"] == 11   # flag wins
    assert resolved["count"] == 4   # file wins over default


def test_bad_config_type_rejected(tmp_path, capsys):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("seed = banana\n")
    rc = run(["gen-data", "--config", str(cfg_file), "--out", str(tmp_path / "o")])
    assert rc == 1


# ---------------------------------------------------------------------------
# gen-data


def test_gen_data_layout_and_determinism(tmp_path):
    a = make_dataset(tmp_path / "a", n=6, seed=3)
    b = make_dataset(tmp_path / "b", n=6, seed=3)
    train = load_dataset(a, "train.txt")
    val = load_dataset(a, "val.txt")
    assert len(train) == 4 and len(val) == 2
    assert (a / "manifest.txt").exists()
    for name in ["train.txt", "val.txt", "img_00000.ppm", "mask_00000.pgm"]:
        assert (a / name).read_bytes() == (b / name).read_bytes()


# ---------------------------------------------------------------------------
# training commands


def test_train_edge_then_seg_pipeline(tmp_path, capsys):
    data = make_dataset(tmp_path / "d", n=6)
    rc = run(["train-edge", "--data", str(data), "--out", str(tmp_path / "e"),
              "--epochs", "1", "--batch", "4", "--classes", "3"])
    assert rc == 0
    assert (tmp_path / "e" / "edge.ckpt").exists()
    metrics = (tmp_path / "e" / "metrics.csv").read_text()
    assert metrics.startswith("epoch,phase,loss,val_miou\n0,edge,")
    assert (tmp_path / "e" / "timing.csv").exists()
    assert (tmp_path / "e" / "manifest.txt").exists()

    rc = run(["train-seg", "--data", str(data), "--out", str(tmp_path / "s"),
              "--epochs", "1", "--batch", "4", "--classes", "3",
              "--strategy", "semeda", "--lambda2", "1",
              "--edge-checkpoint", str(tmp_path / "e" / "edge.ckpt")])
    assert rc == 0
    assert (tmp_path / "s" / "seg.ckpt").exists()
    assert "val_miou" in (tmp_path / "s" / "metrics.csv").read_text()


def test_repeat_run_byte_identical_outputs(tmp_path):
    data = make_dataset(tmp_path / "d", n=6)
    args = ["train-seg", "--data", str(data), "--epochs", "2", "--batch", "4",
            "--classes", "3", "--strategy", "ppce", "--seed", "7"]
    assert run(args + ["--out", str(tmp_path / "r1")]) == 0
    assert run(args + ["--out", str(tmp_path / "r2")]) == 0
    for name in ("metrics.csv", "seg.ckpt"):
        assert (tmp_path / "r1" / name).read_bytes() \
            == (tmp_path / "r2" / name).read_bytes()


def test_interrupted_run_leaves_manifest(tmp_path):
    out = tmp_path / "o"
    # data dir exists but is empty: loading fails after the manifest is written
    (tmp_path / "d").mkdir()
    rc = run(["train-seg", "--data", str(tmp_path / "d"), "--out", str(out),
              "--strategy", "ppce", "--epochs", "1"])
    assert rc == 2
    assert (out / "manifest.txt").exists()
    text = (out / "manifest.txt").read_text()
    assert "command = train-seg" in text
    assert "seed = 0" in text


# ---------------------------------------------------------------------------
# eval with a perfect-prediction fixture


def _perfect_fixture(tmp_path, n_images=3):
    """Dataset of even-aligned two-class splits plus a handcrafted checkpoint
    whose argmax predictions reproduce the masks exactly."""
    size = 16
    data = tmp_path / "data"
    data.mkdir()
    ids = []
    for i in range(n_images):
        split = 4 + 2 * i  # even columns keep the boundary exact after x2 down/up
        mask = np.zeros((size, size), dtype=np.int64)
        mask[:, split:] = 1
        image = np.zeros((3, size, size))
        for c in range(3):
            image[c] = mask == c
        sid = f"{i:05d}"
        encode_pnm(Sample(sid, image, mask), data)
        ids.append(sid)
    write_manifest(ids, data / "train.txt")
    write_manifest(ids, data / "val.txt")

    def tap(c_out, c_in, k, diag, gain=1.0, stride=1):
        kernel = np.zeros((c_out, c_in, k, k))
        for f in range(diag):
            kernel[f, f, k // 2, k // 2] = gain
        return ConvLayer(kernel, np.zeros(c_out), stride)

    params = SegNetParams(3, (
        tap(16, 3, 3, diag=3),
        tap(32, 16, 3, diag=3, stride=2),
        tap(32, 32, 3, diag=3),
        tap(3, 32, 1, diag=3, gain=50.0),
    ))
    ckpt = tmp_path / "perfect.ckpt"
    save_params(params, ckpt)
    return data, ckpt


def test_eval_perfect_prediction_miou_one(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("SEMEDA_THREADS", "2")
    data, ckpt = _perfect_fixture(tmp_path)
    out = tmp_path / "out"
    rc = run(["eval", "--data", str(data), "--checkpoint", str(ckpt),
              "--out", str(out), "--classes", "3", "--trimap-widths", "1,2"])
    assert rc == 0
    lines = (out / "eval.csv").read_text().splitlines()
    assert lines[0].startswith("width,region,miou")
    assert lines[1].startswith("0,all,1,")
    regions = {tuple(l.split(",")[:3]) for l in lines[1:]}
    assert ("1", "boundary", "1") in regions
    assert ("1", "interior", "1") in regions
    assert (out / "trimap_miou.svg").exists()


def test_eval_rejects_edge_checkpoint(tmp_path):
    data = make_dataset(tmp_path / "d", n=6)
    rc = run(["train-edge", "--data", str(data), "--out", str(tmp_path / "e"),
              "--epochs", "0", "--classes", "3"])
    assert rc == 0
    rc = run(["eval", "--data", str(data), "--out", str(tmp_path / "o"),
              "--checkpoint", str(tmp_path / "e" / "edge.ckpt"),
              "--classes", "3"])
    assert rc == 2


def test_eval_byte_identical_on_repeat(tmp_path):
    data, ckpt = _perfect_fixture(tmp_path)
    args = ["eval", "--data", str(data), "--checkpoint", str(ckpt),
            "--classes", "3", "--trimap-widths", "1,2"]
    assert run(args + ["--out", str(tmp_path / "e1")]) == 0
    assert run(args + ["--out", str(tmp_path / "e2")]) == 0
    for name in ("eval.csv", "trimap_miou.svg"):
        assert (tmp_path / "e1" / name).read_bytes() \
            == (tmp_path / "e2" / name).read_bytes()


# ---------------------------------------------------------------------------
# gradcheck


def test_gradcheck_exit_zero(capsys):
    assert run(["gradcheck", "--instances", "2"]) == 0
    out = capsys.readouterr().out
    assert "conv2d_input" in out
    assert "semeda" in out


# ---------------------------------------------------------------------------
# svg plotting


def test_svg_plot_bit_stable():
    xs = [1, 2, 5, 10]
    series = {"boundary": [0.4, 0.5, 0.6, 0.7], "interior": [0.8, 0.82, 0.85, 0.9]}
    a = line_plot(xs, series, "t", "x", "y")
    b = line_plot(xs, series, "t", "x", "y")
    assert a == b
    assert a.startswith("<svg ")
    assert "polyline" in a and a.rstrip().endswith("</svg>")
