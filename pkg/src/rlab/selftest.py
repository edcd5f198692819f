"""Fast built-in invariant checks behind ``rlab selftest``."""

import math
import os
import tempfile

import numpy as np

from . import gradcore as gc
from . import mechanics
from .datasets import SequenceRecord, load_sequence, save_sequence
from .errors import FormatError


def _grad_checks(rng):
    x = rng.normal(size=(4, 4, 2))
    k = rng.normal(size=(3, 3, 2, 3))
    b = rng.normal(size=3)
    pos = rng.uniform(0.5, 2.0, size=5)
    w = rng.normal(size=(2, 2))
    wc = rng.normal(size=(4, 4, 3))
    cases = {
        "conv2d": (lambda t: (gc.conv2d(t[0], t[1], t[2]) * wc).sum(), [x, k, b]),
        "affine": (lambda t: (gc.affine(t[0], t[1], t[2]) * t[2]).sum(),
                   [rng.normal(size=4), rng.normal(size=(4, 3)), rng.normal(size=3)]),
        "avg_pool2": (lambda t: (gc.avg_pool2(t[0]) * gc.avg_pool2(t[0])).sum(), [x]),
        "log": (lambda t: gc.log(t[0]).sum(), [pos]),
        "sigmoid": (lambda t: (gc.sigmoid(t[0]) * t[0]).sum(), [rng.normal(size=5)]),
        "scaled_sigmoid": (lambda t: (gc.scaled_sigmoid(t[0]) * t[0]).sum(),
                           [rng.normal(size=5)]),
        "rotation_covariance": (
            lambda t: (gc.rotation_covariance(t[0], t[1], t[2]) * w).sum(),
            [pos[0], pos[1], rng.normal()],
        ),
        "gaussian_nll": (
            lambda t: gc.gaussian_nll(t[0], t[1], gc.rotation_covariance(t[2], t[3], t[4])),
            [rng.normal(size=2), rng.normal(size=2), pos[2], pos[3], rng.normal()],
        ),
    }
    out = {}
    for name, (fn, arrays) in cases.items():
        out[f"grad {name}"] = gc.gradient_check(fn, arrays) < 1e-4
    return out


def _physics_checks():
    out = {}
    ball = mechanics.BallState(
        np.array([0.0, 0.0, 0.04]), np.array([1.0, 0.0, 0.0]), np.zeros(3), 0.04
    )
    cfg = mechanics.PhysicsConfig(rolling_resistance=0.0)
    b = ball
    for _ in range(250):
        b = mechanics.step(b, mechanics.Plane(), cfg.dt, cfg)
    out["flat uniform motion"] = abs(b.position[0] - 250 * cfg.dt) < 1e-6

    scenario = mechanics.sample_scenario(
        mechanics.ScenarioConfig("hemispherical"), np.random.default_rng(3)
    )
    cfg = mechanics.PhysicsConfig()
    b = scenario.balls[0]
    ok = True
    for _ in range(250):
        nb = mechanics.step(b, scenario.surface, cfg.dt, cfg)
        ok &= mechanics.rolling_energy(nb) <= mechanics.rolling_energy(b) + 1e-9
        b = nb
    out["bowl energy non-increasing"] = bool(ok)

    a = mechanics.BallState(np.array([0.0, 0, 0.1]), np.array([1.0, 0, 0]), np.zeros(3), 0.1)
    c = mechanics.BallState(np.array([0.19, 0, 0.1]), np.array([-0.5, 0, 0]), np.zeros(3), 0.1)
    a2, c2 = mechanics.resolve_collisions([a, c], 1.0)
    p0, p1 = a.velocity + c.velocity, a2.velocity + c2.velocity
    e0 = a.velocity @ a.velocity + c.velocity @ c.velocity
    e1 = a2.velocity @ a2.velocity + c2.velocity @ c2.velocity
    out["collision conserves momentum and energy"] = (
        np.abs(p0 - p1).max() < 1e-9 and abs(e0 - e1) < 1e-9
    )
    return out


def _format_checks():
    out = {}
    rng = np.random.default_rng(0)
    rec = SequenceRecord(
        rng.integers(0, 256, size=(3, 8, 8, 3), dtype=np.uint8),
        rng.normal(size=(3, 1, 2)), rng.normal(size=(3, 1, 3)), {"family": "selftest"},
    )
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "x.seq")
        save_sequence(path, rec)
        back = load_sequence(path)
        out["seq round-trip"] = (
            np.array_equal(back.frames, rec.frames)
            and np.array_equal(back.positions, rec.positions)
            and np.array_equal(back.angular_velocities, rec.angular_velocities)
        )
        raw = bytearray(open(path, "rb").read())
        raw[0] ^= 0xFF
        open(path, "wb").write(bytes(raw))
        try:
            load_sequence(path)
            out["seq corrupt magic detected"] = False
        except FormatError:
            out["seq corrupt magic detected"] = True
        ck = os.path.join(tmp, "m.rllw")
        arrays = {"w": rng.normal(size=(2, 3)), "b": rng.normal(size=3)}
        gc.save_checkpoint(ck, arrays, {"k": 1})
        got, meta = gc.load_checkpoint(ck)
        out["checkpoint round-trip"] = meta == {"k": 1} and all(
            np.array_equal(got[k], v) for k, v in arrays.items()
        )
    return out


def _covariance_checks():
    r = gc.rotation_covariance(2.0, 5.0, math.pi / 2).data
    iso = gc.rotation_covariance(1.0, 1.0, 0.7).data
    return {
        "covariance axis swap exact": np.array_equal(r, np.diag([5.0, 2.0])),
        "covariance isotropy exact": np.array_equal(iso, np.eye(2)),
    }


def run_selftest(verbose=True):
    """Run every check; returns the number of failures."""
    results = {}
    results.update(_grad_checks(np.random.default_rng(0)))
    results.update(_covariance_checks())
    results.update(_physics_checks())
    results.update(_format_checks())
    failures = 0
    for name, ok in results.items():
        failures += not ok
        if verbose:
            print(f"{'PASS' if ok else 'FAIL'}  {name}")
    return failures
