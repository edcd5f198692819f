"""Acceptance suite: one test, and one summary line, per criterion.

Criteria 7 to 9 read a desk-scale toy run. The run directory is taken from
``RLAB_TOY_RUN`` (default ``runs/toy`` in the repository). Trained models found
there are reused; a missing run is trained from scratch, which takes hours.
"""

import csv
import json
import math
import os
import pathlib
import time

import numpy as np
import pytest

from rlab import baselines, cli, mechanics, predictor
from rlab import gradcore as gc
from rlab.datasets import (
    DatasetManifest,
    SequenceRecord,
    decode_sequence,
    encode_sequence,
    load_sequence,
    save_sequence,
    simulate_trajectory,
)
from rlab.errors import FormatError
from rlab.evaluation import perplexity
from rlab.repro import ToyConfig, run_toy

ROOT = pathlib.Path(__file__).resolve().parent.parent
TOY_RUN = pathlib.Path(os.environ.get("RLAB_TOY_RUN", ROOT / "runs" / "toy"))


@pytest.fixture(scope="module")
def toy_summary():
    return run_toy(ToyConfig(), str(TOY_RUN), threads=os.cpu_count() or 1, quiet=True)


# ---------------------------------------------------------------------- 1


def test_c01_gradient_suite(criterion):
    from test_gradcore import _op_cases

    started = time.perf_counter()
    worst, ops = 0.0, set()
    for seed in range(10):
        for name, (fn, arrays) in _op_cases(np.random.default_rng(seed)).items():
            worst = max(worst, gc.gradient_check(fn, arrays, eps=1e-4))
            ops.add(name)
    elapsed = time.perf_counter() - started
    ok = worst < 1e-4 and elapsed < 60
    criterion(1, ok, f"{len(ops)} op groups x 10 seeds, worst rel err {worst:.2e} (<1e-4), "
                     f"{elapsed:.1f}s (<60s)")
    assert ok


# ---------------------------------------------------------------------- 2


def test_c02_covariance_head(criterion):
    rng = np.random.default_rng(0)
    b1, b2 = rng.normal(0, 20, 1000), rng.normal(0, 20, 1000)
    theta = rng.uniform(-10, 10, 1000)
    lam1, lam2 = gc.scaled_sigmoid(b1).data, gc.scaled_sigmoid(b2).data
    sig = gc.rotation_covariance(lam1, lam2, theta).data
    ev = np.linalg.eigvalsh(sig)
    spd = bool(np.all(sig == np.swapaxes(sig, -1, -2)) and np.all(ev > 0))
    lam = np.concatenate([lam1, lam2])
    in_range = bool(np.all((lam > 0.01) & (lam < 100.0)))
    exact = (
        np.array_equal(gc.rotation_covariance(1.0, 1.0, 0.0).data, np.eye(2))
        and np.array_equal(gc.rotation_covariance(3.0, 8.0, math.pi / 2).data, np.diag([8.0, 3.0]))
        and np.array_equal(gc.rotation_covariance(2.5, 2.5, 1.234).data, 2.5 * np.eye(2))
    )
    ok = spd and in_range and exact
    criterion(2, ok, f"1000 draws SPD={spd}, eigenvalues in (0.01,100)={in_range}, "
                     f"analytic cases bit-exact={exact}")
    assert ok


# ---------------------------------------------------------------------- 3


def test_c03_nll_perplexity(criterion):
    rng = np.random.default_rng(1)
    y, mu = rng.normal(size=(200, 2)) * 4, rng.normal(size=(200, 2)) * 4
    sig = gc.rotation_covariance(rng.uniform(0.05, 20, 200), rng.uniform(0.05, 20, 200),
                                 rng.uniform(-4, 4, 200)).data
    nll = gc.gaussian_nll(y, mu, sig).data
    gap = abs(perplexity(np.exp(-nll)[:, None]).item() - nll.mean())
    base = abs(gc.gaussian_nll([1.5, -2.0], [1.5, -2.0], np.eye(2)).item() - math.log(2 * math.pi))
    ok = gap <= 1e-12 and base <= 1e-12
    criterion(3, ok, f"|perplexity - mean NLL| = {gap:.1e}, |NLL(mu=y,I) - log 2pi| = {base:.1e}"
                     " (both <= 1e-12)")
    assert ok


# ---------------------------------------------------------------------- 4


def _energy(ball):
    return 0.7 * float(ball.velocity @ ball.velocity) + mechanics.GRAVITY * ball.position[2]


def test_c04_physics_conservation(criterion):
    cfg = mechanics.PhysicsConfig(rolling_resistance=0.0)
    b = mechanics.BallState(np.array([0.0, 0.0, 0.04]), np.array([1.0, 0.0, 0.0]),
                            np.zeros(3), 0.04)
    for _ in range(250):
        b = mechanics.step(b, mechanics.Plane(), cfg.dt, cfg)
    drift = max(abs(b.position[0] - 250 * cfg.dt), float(np.abs(b.velocity - [1, 0, 0]).max()))

    worst_gain = -np.inf
    rng = np.random.default_rng(2)
    for _ in range(20):
        sc = mechanics.sample_scenario(mechanics.ScenarioConfig("hemispherical"), rng)
        ball = sc.balls[0]
        for _ in range(250):
            nxt = mechanics.step(ball, sc.surface)
            worst_gain = max(worst_gain, _energy(nxt) - _energy(ball))
            ball = nxt

    a = mechanics.BallState(np.array([0.0, 0, 0.1]), np.array([0.8, 0.3, 0]), np.zeros(3), 0.1)
    c = mechanics.BallState(np.array([0.18, 0.05, 0.1]), np.array([-0.6, 0.1, 0]),
                            np.zeros(3), 0.1)
    a2, c2 = mechanics.resolve_collisions([a, c], 1.0)
    dp = float(np.abs((a.velocity + c.velocity) - (a2.velocity + c2.velocity)).max())
    de = abs(float(a.velocity @ a.velocity + c.velocity @ c.velocity)
             - float(a2.velocity @ a2.velocity + c2.velocity @ c2.velocity))
    ok = drift < 1e-6 and worst_gain <= 1e-9 and dp <= 1e-9 and de <= 1e-9
    criterion(4, ok, f"flat drift {drift:.1e} (<1e-6), worst per-step energy gain "
                     f"{worst_gain:.1e} (<=1e-9), collision dp {dp:.1e} dE {de:.1e} (<=1e-9)")
    assert ok


# ---------------------------------------------------------------------- 5


def test_c05_sampling_distributions(criterion):
    rng = np.random.default_rng(3)
    violations = 0
    for k in range(1000):
        fam = "hemispherical" if k % 2 == 0 else "ellipsoidal"
        sc = mechanics.sample_scenario(mechanics.ScenarioConfig(fam), rng)
        el = sc.samples["elevation"][0]
        comps = sc.samples["speed_components"][0]
        b = sc.balls[0]
        _, n = sc.surface.project(b.position, b.radius)
        violations += not (-0.9 * math.pi <= el <= -0.5 * math.pi)
        violations += not all(5.0 <= v <= 10.0 for v in comps)
        violations += not abs(float(b.velocity @ n)) < 1e-9
    multi = mechanics.ScenarioConfig("ellipsoidal", n_balls=2)
    for _ in range(100):
        sc = mechanics.sample_scenario(multi, rng)
        violations += not all(10.0 <= m <= 15.0 for m in sc.samples["speed_magnitude"])

    manifest = DatasetManifest(family="hemispherical", master_seed=0)
    means = []
    for i in range(100):
        _, _, traj, _ = simulate_trajectory(manifest, i)
        means.append(np.linalg.norm(traj.angular_velocities, axis=-1).mean())
    omega = float(np.mean(means))
    ok = violations == 0 and 2.0 <= omega <= 12.0
    criterion(5, ok, f"{violations} support violations in 1000+100 samples; 100-sequence "
                     f"mean angular speed {omega:.2f} rad/s (in [2,12])")
    assert ok


# ---------------------------------------------------------------------- 6


def _tree(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for f in files:
            p = os.path.join(dirpath, f)
            out[os.path.relpath(p, root)] = pathlib.Path(p).read_bytes()
    return out


def _log_without_wall_clock(path):
    with open(path) as fh:
        return [{k: v for k, v in row.items() if k != "wall_seconds"}
                for row in csv.DictReader(fh)]


def test_c06_determinism(criterion, tmp_path, monkeypatch):
    # Relative paths inside per-run directories keep recorded inputs comparable.
    runs = []
    for k, threads in enumerate(("1", "2")):
        base = tmp_path / f"run{k}"
        base.mkdir()
        monkeypatch.chdir(base)
        assert cli.main(["--threads", threads, "gen", "--count", "10", "--seed", "11",
                         "--out", "data"]) == 0
        assert cli.main(["--threads", threads, "train", "--data", "data", "--out", "model",
                         "--epochs", "20", "--quiet"]) == 0
        assert cli.main(["--threads", threads, "eval", "--data", "data", "--checkpoint",
                         "model/checkpoint.rllw", "--out", "eval",
                         "--split", "val", "--T-train", "5", "--T-gen", "8"]) == 0
        runs.append(base)
    a, b = runs
    gen_same = _tree(a / "data") == _tree(b / "data")
    ckpt_same = (a / "model" / "checkpoint.rllw").read_bytes() == \
        (b / "model" / "checkpoint.rllw").read_bytes()
    log_same = _log_without_wall_clock(a / "model" / "train_log.csv") == \
        _log_without_wall_clock(b / "model" / "train_log.csv")
    eval_same = _tree(a / "eval") == _tree(b / "eval")
    ok = gen_same and ckpt_same and log_same and eval_same
    criterion(6, ok, f"threads 1 vs 2: gen identical={gen_same}, checkpoint identical="
                     f"{ckpt_same}, train log (minus wall clock) identical={log_same}, "
                     f"eval identical={eval_same}")
    assert ok


# ------------------------------------------------------------------ 7 - 9


def test_c07_toy_training(criterion, toy_summary):
    h = toy_summary["headline"]
    d, lin = h["dispnet_error_T_train"], h["linear_error_T_train"]
    ratio, cpu = h["dispnet_train_loss_ratio"], h["dispnet_train_cpu_seconds"]
    ok = d < lin and ratio <= 0.5 and cpu <= 45 * 60
    criterion(7, ok, f"DispNet step-10 error {d:.2f} px vs Linear {lin:.2f} px; final/first "
                     f"train loss {ratio:.3f} (<=0.5); training CPU {cpu / 60:.1f} min (<=45)")
    assert ok


def test_c08_probabilistic_sanity(criterion, toy_summary):
    st = toy_summary["headline"]["probnet_det_sign_test"]
    ok = st["p_value"] < 0.05
    criterion(8, ok, f"det Sigma grows step 1 -> 10 in {st['increasing']}/{st['trials']} "
                     f"held-out sequences, one-sided sign test p = {st['p_value']:.2e} (<0.05)")
    assert ok


def test_c09_interpolation(criterion, toy_summary):
    h = toy_summary["headline"]
    i, d = h["interpnet_error_final"], h["dispnet_error_final"]
    ok = i <= 0.5 * d
    h0 = h.get("interpnet_h0_final_error", float("nan"))
    criterion(9, ok, f"InterpNet final-step error {i:.2f} px vs DispNet {d:.2f} px "
                     f"(ratio {i / d:.2f}, need <= 0.5); h_0 final decode {h0:.2f} px, "
                     f"for information")
    assert ok


# --------------------------------------------------------------------- 10


def test_c10_multi_object(criterion):
    exact = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = 2 + seed % 2
        c = predictor.ModelConfig(n_objects=n, channels=4, image_size=16, transition_width=6)
        params = predictor.init_params(c, seed=seed)
        s, p = rng.normal(size=(2, n, 8, 8, 4)), rng.normal(size=(2, n, 2))
        perm = rng.permutation(n)
        a = predictor.transition_multi(params, predictor.NetState(gc.Tensor(s), gc.Tensor(p)), c)
        b = predictor.transition_multi(
            params, predictor.NetState(gc.Tensor(s[:, perm]), gc.Tensor(p[:, perm])), c)
        exact += np.array_equal(b.s.data, a.s.data[:, perm]) and \
            np.array_equal(b.p.data, a.p.data[:, perm])

    rng = np.random.default_rng(4)
    cfg = mechanics.ScenarioConfig("ellipsoidal", n_balls=2)
    scenarios = 30
    hits = sum(
        mechanics.simulate_sequence(mechanics.sample_scenario(cfg, rng)).collisions > 0
        for _ in range(scenarios)
    )
    ok = exact == 100 and hits >= 0.3 * scenarios
    criterion(10, ok, f"permutation equivariance bit-exact in {exact}/100 draws; 2-ball "
                      f"collisions in {hits}/{scenarios} ellipsoidal scenarios (>=30%)")
    assert ok


# --------------------------------------------------------------------- 11


def test_c11_baseline_oracle(criterion):
    from test_baselines import oracle_fit

    rng = np.random.default_rng(5)
    worst = 0.0
    for k in range(100):
        pts = rng.uniform(0, 64, size=(10, 2))
        degree = 1 + k % 2
        worst = max(worst, float(np.abs(baselines.fit(pts, degree).coefficients
                                        - oracle_fit(pts, degree)).max()))
    t = np.arange(10.0)
    exact_pts = np.stack([2 + 0.3 * t - 0.05 * t * t, 7 - 1.1 * t + 0.2 * t * t], axis=1)
    exact = float(np.abs(baselines.extrapolate(baselines.fit(exact_pts, 2), t) - exact_pts).max())
    line = (1.0 + 0.5 * t)[:, None]
    exact = max(exact, float(np.abs(baselines.extrapolate(baselines.fit(line, 1), t)
                                    - line).max()))
    ok = worst <= 1e-9 and exact <= 1e-9
    criterion(11, ok, f"oracle gap {worst:.1e} over 100 fits, exact-fit residual {exact:.1e} "
                      "(both <= 1e-9)")
    assert ok


# --------------------------------------------------------------------- 12


def test_c12_format_round_trips(criterion, tmp_path):
    rng = np.random.default_rng(6)
    rec = SequenceRecord(rng.integers(0, 256, (12, 16, 16, 3), dtype=np.uint8),
                         rng.normal(size=(12, 2, 2)), rng.normal(size=(12, 2, 3)),
                         {"family": "ellipsoidal", "k": [1, 2]})
    save_sequence(tmp_path / "a.seq", rec)
    back = load_sequence(tmp_path / "a.seq")
    seq_ok = (back.frames.tobytes() == rec.frames.tobytes()
              and back.positions.tobytes() == rec.positions.tobytes()
              and back.angular_velocities.tobytes() == rec.angular_velocities.tobytes()
              and back.scenario == rec.scenario)
    arrays = {"enc0.w": rng.normal(size=(3, 3, 12, 16)), "b": rng.normal(size=16)}
    gc.save_checkpoint(tmp_path / "m.rllw", arrays, {"model": {"variant": "probnet"}})
    got, meta = gc.load_checkpoint(tmp_path / "m.rllw")
    ck_ok = meta == {"model": {"variant": "probnet"}} and all(
        got[k].tobytes() == v.tobytes() and got[k].shape == v.shape for k, v in arrays.items())

    errors = []
    raw = encode_sequence(rec)
    for label, blob, pattern in (
        ("seq magic", b"XSEQ" + raw[4:], "magic"),
        ("seq truncated", raw[:-9], "expected at least"),
    ):
        try:
            decode_sequence(blob)
            errors.append(f"{label}: no error")
        except FormatError as exc:
            if pattern not in str(exc):
                errors.append(f"{label}: {exc}")
    ck = (tmp_path / "m.rllw").read_bytes()
    for label, blob, pattern in (
        ("checkpoint magic", b"RLLX" + ck[4:], "magic"),
        ("checkpoint truncated", ck[:-17], "expected at least"),
    ):
        (tmp_path / "bad.rllw").write_bytes(blob)
        try:
            gc.load_checkpoint(tmp_path / "bad.rllw")
            errors.append(f"{label}: no error")
        except FormatError as exc:
            if pattern not in str(exc):
                errors.append(f"{label}: {exc}")
    ok = seq_ok and ck_ok and not errors
    criterion(12, ok, f".seq lossless={seq_ok}, checkpoint lossless={ck_ok}, corrupt-file "
                      f"errors structured={not errors}" + (f" {errors}" if errors else ""))
    assert ok
