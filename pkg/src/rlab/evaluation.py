"""Metrics, horizon-resolved evaluation and report files.

"Error at horizon T" is the error of prediction step T, the T-th predicted
frame after the last observation (array index T - 1).
"""

import csv
import json
import math
import os

import numpy as np

from . import baselines
from . import gradcore as gc
from . import predictor
from .datasets import sample_window
from .errors import DomainError, ShapeError
from .training import make_batch

REPORT_SCHEMA_VERSION = 1


def _aligned(pred, truth, dims):
    p = np.asarray(pred, dtype=np.float64)
    y = np.asarray(truth, dtype=np.float64)
    if p.shape != y.shape:
        raise ShapeError(f"prediction shape {p.shape} != truth shape {y.shape}")
    if p.shape[-1] != dims:
        raise ShapeError(f"expected trailing dimension {dims}, got {p.shape}")
    return p, y


def _per_step(x):
    """Reduce ``(sequences, steps, objects)`` (or ``(steps, objects)``) to ``(steps,)``."""
    if x.ndim == 1:
        return x
    if x.ndim == 2:
        return x.mean(axis=1)
    return x.transpose(1, 0, 2).reshape(x.shape[1], -1).mean(axis=1)


def pixel_error(predicted, truth):
    """Mean Euclidean pixel distance per step, averaged over sequences and objects.

    Inputs are ``(sequences, steps, objects, 2)``, ``(steps, objects, 2)`` or
    ``(steps, 2)``.
    """
    p, y = _aligned(predicted, truth, 2)
    return _per_step(np.sqrt(np.sum((p - y) ** 2, axis=-1)))


def angvel_rmse(predicted, truth):
    """Root of the mean squared Euclidean angular-velocity error per step."""
    p, y = _aligned(predicted, truth, 3)
    return np.sqrt(_per_step(np.sum((p - y) ** 2, axis=-1)))


def perplexity(densities):
    """log_e of ``2^(-E[log2 p])`` per step, i.e. ``-E[log p]``.

    ``densities`` is ``(sequences, steps, ...)`` or ``(steps,)``.
    """
    d = np.asarray(densities, dtype=np.float64)
    if np.any(~(d > 0)):
        raise DomainError("perplexity needs strictly positive densities")
    nll = -np.log(d)
    if d.ndim == 1:
        return nll
    return _per_step(nll.reshape(d.shape[0], d.shape[1], -1))


def log_perplexity_from_nll(nll):
    """Same quantity as :func:`perplexity` from per-step negative log densities."""
    nll = np.asarray(nll, dtype=np.float64)
    if nll.ndim == 1:
        return nll
    return _per_step(nll.reshape(nll.shape[0], nll.shape[1], -1))


# -------------------------------------------------------------- evaluation


def _eligible(dataset, indices, need):
    kept, skipped = [], []
    for i in indices:
        rec = dataset.record(i)
        if rec.length < need:
            skipped.append({"index": int(i), "frames": int(rec.length), "needed": int(need)})
        else:
            kept.append(i)
    return kept, skipped


def model_predictions(params, config, dataset, indices, T, batch_size=8):
    """Roll the model out ``T`` steps from the fixed start of every sequence.

    Returns a dict of arrays shaped ``(sequences, T, objects, ...)``.
    """
    interp = config.variant == "interpnet"
    out = {"position": [], "truth": [], "omega": [], "omega_truth": [], "nll": [],
           "sigma": []}
    for k in range(0, len(indices), batch_size):
        windows = [
            sample_window(dataset.record(i), T, "eval_fixed", None, config.T0, interp)
            for i in indices[k:k + batch_size]
        ]
        batch = make_batch(windows)
        steps, _ = predictor.rollout(params, batch.frames, config, T, batch.final_frames)
        out["position"].append(np.stack([s["position"].data for s in steps], axis=1))
        out["truth"].append(batch.positions)
        out["omega_truth"].append(batch.angular_velocities)
        if config.regress_angular_velocity:
            out["omega"].append(np.stack([s["omega"].data for s in steps], axis=1))
        if config.variant == "probnet":
            nll = [
                gc.gaussian_nll(batch.positions[:, t], s["mu"], s["sigma"]).data
                for t, s in enumerate(steps)
            ]
            out["nll"].append(np.stack(nll, axis=1))
            out["sigma"].append(np.stack([s["sigma"].data for s in steps], axis=1))
    return {k: np.concatenate(v) for k, v in out.items() if v}


def baseline_predictions(dataset, indices, degree, T, fit_frames=baselines.FIT_FRAMES):
    preds, truth, om_p, om_t = [], [], [], []
    for i in indices:
        rec = dataset.record(i)
        p, y = baselines.baseline_rollout(rec.positions, degree, T, fit_frames)
        w, wy = baselines.baseline_rollout(rec.angular_velocities, degree, T, fit_frames)
        preds.append(p)
        truth.append(y)
        om_p.append(w)
        om_t.append(wy)
    return {
        "position": np.stack(preds), "truth": np.stack(truth),
        "omega": np.stack(om_p), "omega_truth": np.stack(om_t),
    }


def build_report(name, split, raw, horizons, image_size, skipped, config_echo):
    per_step = {"pixel_error": pixel_error(raw["position"], raw["truth"]).tolist()}
    if "omega" in raw:
        per_step["angvel_rmse"] = angvel_rmse(raw["omega"], raw["omega_truth"]).tolist()
    if "nll" in raw:
        per_step["log_perplexity"] = log_perplexity_from_nll(raw["nll"]).tolist()
    at = {}
    for label, T in horizons.items():
        at[label] = {"step": int(T)}
        for metric, values in per_step.items():
            at[label][metric] = values[T - 1]
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "variant": name,
        "split": split,
        "image_size": int(image_size),
        "sequences": int(raw["position"].shape[0]),
        "skipped": skipped,
        "horizons": at,
        "per_step": per_step,
        "config": config_echo,
    }


def evaluate_model(params, config, dataset, split="test", horizons=None, batch_size=8):
    horizons = horizons or {"T_train": 10, "T_gen": 20}
    T = max(horizons.values())
    kept, skipped = _eligible(dataset, dataset.split(split), config.T0 + T)
    raw = model_predictions(params, config, dataset, kept, T, batch_size)
    report = build_report(config.variant, split, raw, horizons, config.image_size, skipped,
                          {"model": config.to_json()})
    return report, raw


def evaluate_baseline(dataset, degree, split="test", horizons=None,
                      fit_frames=baselines.FIT_FRAMES):
    horizons = horizons or {"T_train": 10, "T_gen": 20}
    T = max(horizons.values())
    kept, skipped = _eligible(dataset, dataset.split(split), fit_frames + T)
    raw = baseline_predictions(dataset, kept, degree, T, fit_frames)
    name = {1: "linear", 2: "quadratic"}[degree]
    report = build_report(name, split, raw, horizons, dataset.manifest.image_size, skipped,
                          {"degree": degree, "fit_frames": fit_frames,
                           "angular_velocity": "same polynomial fitted per component"})
    return report, raw


def write_report(report, out_dir, stem="report"):
    """Write ``report.json`` and a long-format ``report.csv``."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, f"{stem}.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, f"{stem}.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "split", "step", "metric", "value"])
        for metric, values in report["per_step"].items():
            for t, v in enumerate(values, start=1):
                w.writerow([report["variant"], report["split"], t, metric, repr(float(v))])


def sign_test_increasing(first, last):
    """One-sided sign test that ``last > first`` more often than chance.

    Ties are dropped. Returns ``(positives, trials, p_value)``.
    """
    diff = np.asarray(last, dtype=np.float64) - np.asarray(first, dtype=np.float64)
    pos = int(np.sum(diff > 0))
    n = int(np.sum(diff != 0))
    p = sum(math.comb(n, k) for k in range(pos, n + 1)) / 2.0 ** n if n else 1.0
    return pos, n, p
