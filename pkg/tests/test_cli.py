import json
import os

import pytest

from rlab import cli


def run(*argv):
    return cli.main(list(argv))


def test_usage_errors(capsys):
    assert run() == cli.EXIT_USAGE
    assert run("frobnicate") == cli.EXIT_USAGE
    assert run("gen") == cli.EXIT_USAGE  # --out is required
    assert run("--threads", "0", "selftest") == cli.EXIT_USAGE
    assert run("--version") == 0


def test_bad_env_threads(monkeypatch):
    monkeypatch.setenv("RLAB_THREADS", "many")
    assert run("selftest", "--quiet") == cli.EXIT_USAGE


def test_bad_config_file(tmp_path):
    bad = tmp_path / "c.json"
    bad.write_text("{not json")
    assert run("--config", str(bad), "selftest", "--quiet") == cli.EXIT_USAGE
    bad.write_text("[1, 2]")
    assert run("--config", str(bad), "selftest", "--quiet") == cli.EXIT_USAGE


def test_runtime_errors(tmp_path):
    assert run("train", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "o")) == 1
    assert run("eval", "--data", str(tmp_path), "--checkpoint", str(tmp_path / "x.rllw"),
               "--out", str(tmp_path / "o")) == 1


def test_selftest_passes():
    assert run("selftest", "--quiet") == 0


@pytest.fixture(scope="module")
def cli_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps({"dataset": {"image_size": 16},
                               "model": {"channels": 4, "transition_width": 8},
                               "train": {"batch_size": 4, "T_train": 5}}))
    assert run("--threads", "1", "--config", str(cfg), "gen", "--count", "8", "--seed", "5",
               "--out", str(root / "data")) == 0
    return root, cfg


def _read_tree(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for f in files:
            p = os.path.join(dirpath, f)
            out[os.path.relpath(p, root)] = open(p, "rb").read()
    return out


def test_gen_deterministic_across_threads(cli_data, tmp_path):
    root, cfg = cli_data
    assert run("--threads", "2", "--config", str(cfg), "gen", "--count", "8", "--seed", "5",
               "--out", str(tmp_path / "d2")) == 0
    assert _read_tree(root / "data") == _read_tree(tmp_path / "d2")


def test_train_eval_baseline_flow(cli_data, tmp_path):
    root, cfg = cli_data
    data = str(root / "data")
    outs = []
    for k in range(2):
        out = tmp_path / f"m{k}"
        assert run("--config", str(cfg), "train", "--data", data, "--out", str(out),
                   "--epochs", "2", "--quiet") == 0
        assert run("eval", "--data", data, "--checkpoint", str(out / "checkpoint.rllw"),
                   "--out", str(out / "eval"), "--T-train", "5", "--T-gen", "8") == 0
        outs.append(out)
    a, b = outs
    assert (a / "checkpoint.rllw").read_bytes() == (b / "checkpoint.rllw").read_bytes()
    assert (a / "eval" / "report.json").read_bytes() == (b / "eval" / "report.json").read_bytes()
    resolved = json.loads((a / "resolved_config.json").read_text())
    assert resolved["model"]["channels"] == 4 and resolved["train"]["max_epochs"] == 2
    assert resolved["loss"] == {"angular_weight": 1.0, "det_reg_lambda": 0.01}
    assert run("baseline", "--data", data, "--kind", "quadratic", "--out",
               str(tmp_path / "q"), "--T-train", "5", "--T-gen", "8") == 0
    rep = json.loads((tmp_path / "q" / "report.json").read_text())
    assert rep["variant"] == "quadratic"


def test_render_preview(tmp_path):
    assert run("render-preview", "--family", "ellipsoidal", "--seed", "2", "--image-size", "32",
               "--frames", "3", "--out", str(tmp_path)) == 0
    assert len(list(tmp_path.glob("frame_*.png"))) == 3


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"dataset": {"colour": "red"}}))
    assert run("--config", str(cfg), "gen", "--out", str(tmp_path / "x")) == 1
