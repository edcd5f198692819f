"""Desk-scale end-to-end run: generate, train every variant, evaluate, summarise."""

import json
import os
import time
from dataclasses import asdict, dataclass

import numpy as np

from .datasets import DatasetManifest, generate_dataset, load_dataset
from .evaluation import evaluate_baseline, evaluate_model, sign_test_increasing, write_report
from .predictor import ModelConfig, rollout
from .training import LossConfig, TrainSchedule, load_model, make_batch, train, windows_for


@dataclass(frozen=True)
class ToyConfig:
    family: str = "hemispherical"
    sequence_count: int = 200
    image_size: int = 64
    T0: int = 4
    T_train: int = 10
    T_gen: int = 20
    channels: int = 32
    transition_width: int = 64
    batch_size: int = 8
    max_epochs: int = 300
    # 10x the default: the toy budget is ~5k optimizer steps
    lr_initial: float = 1e-3
    seed: int = 0
    variants: tuple = ("dispnet", "probnet", "interpnet")

    def to_json(self):
        d = asdict(self)
        d["variants"] = list(self.variants)
        return d


def _dataset(toy, root, threads):
    manifest = DatasetManifest(
        family=toy.family, sequence_count=toy.sequence_count, image_size=toy.image_size,
        T0=toy.T0, master_seed=toy.seed,
    )
    path = os.path.join(root, "manifest.json")
    if os.path.exists(path):
        with open(path) as fh:
            doc = json.load(fh)
        if all(doc.get(k) == v for k, v in manifest.to_json().items() if k != "splits"):
            return load_dataset(root)
    generate_dataset(manifest, root, threads=threads)
    return load_dataset(root)


def _trained(toy, dataset, variant, out_dir, quiet):
    """Train ``variant`` unless a finished run with the same settings exists."""
    config = ModelConfig(
        variant=variant, channels=toy.channels, T0=toy.T0, image_size=toy.image_size,
        transition_width=toy.transition_width,
    )
    schedule = TrainSchedule(
        batch_size=toy.batch_size, lr_initial=toy.lr_initial, max_epochs=toy.max_epochs,
        T_train=toy.T_train, seed=toy.seed,
    )
    done = os.path.join(out_dir, "done.json")
    if os.path.exists(done):
        with open(done) as fh:
            info = json.load(fh)
        if info.get("model") == config.to_json() and info.get("train") == schedule.to_json():
            params, _ = load_model(os.path.join(out_dir, "checkpoint.rllw"))
            return params, config, info
    started, cpu_started = time.perf_counter(), time.process_time()

    def progress(epoch, lr, tl, vl):
        if not quiet and (epoch % 10 == 0 or epoch == 1):
            print(f"[{variant}] epoch {epoch:4d} lr {lr:.1e} train {tl:.4f} val {vl:.4f}",
                  flush=True)

    params, state, rows = train(dataset, config, schedule, out_dir, LossConfig(),
                                progress=progress)
    info = {
        "model": config.to_json(), "train": schedule.to_json(),
        "epochs_run": len(rows), "best_epoch": state.best_epoch, "best_val": state.best,
        "lr_drops": state.lr_drops, "first_train_loss": rows[0][2],
        "final_train_loss": rows[-1][2], "train_seconds": time.perf_counter() - started,
        "train_cpu_seconds": time.process_time() - cpu_started,
    }
    with open(done, "w") as fh:
        json.dump(info, fh, indent=2, sort_keys=True)
    return params, config, info


def _h0_final_error(params, config, dataset, T):
    """Mean pixel error of the final position decoded directly from ``h_0``."""
    batch = make_batch(windows_for(dataset, dataset.split("test"), T, "eval_fixed", None, config))
    _, extra = rollout(params, batch.frames, config, T, batch.final_frames)
    d = extra["final"].data - batch.positions[:, -1]
    return float(np.sqrt((d * d).sum(-1)).mean())


def run_toy(toy, out, threads=1, quiet=False):
    os.makedirs(out, exist_ok=True)
    dataset = _dataset(toy, os.path.join(out, "data"), threads)
    horizons = {"T_train": toy.T_train, "T_gen": toy.T_gen}
    summary = {"config": toy.to_json(), "reports": {}, "training": {}}
    raws = {}
    for degree, name in ((1, "linear"), (2, "quadratic")):
        report, _ = evaluate_baseline(dataset, degree, "test", horizons)
        write_report(report, os.path.join(out, name))
        summary["reports"][name] = report["horizons"]
    for variant in toy.variants:
        vdir = os.path.join(out, variant)
        params, config, info = _trained(toy, dataset, variant, vdir, quiet)
        # The interpolation model sees the frame of its last step, so it is
        # evaluated at the horizon it was trained for.
        vh = {"T_train": toy.T_train} if variant == "interpnet" else horizons
        report, raw = evaluate_model(params, config, dataset, "test", vh)
        write_report(report, vdir)
        summary["reports"][variant] = report["horizons"]
        summary["training"][variant] = info
        raws[variant] = raw
        if variant == "interpnet":
            h0_final = _h0_final_error(params, config, dataset, toy.T_train)
    headline = {}
    k = toy.T_train - 1
    if "dispnet" in raws:
        d = raws["dispnet"]
        err = np.sqrt(((d["position"] - d["truth"]) ** 2).sum(-1)).mean(axis=(0, 2))
        headline["dispnet_error_T_train"] = float(err[k])
        headline["linear_error_T_train"] = summary["reports"]["linear"]["T_train"]["pixel_error"]
        info = summary["training"]["dispnet"]
        headline["dispnet_train_loss_ratio"] = info["final_train_loss"] / info["first_train_loss"]
        headline["dispnet_train_seconds"] = info["train_seconds"]
        headline["dispnet_train_cpu_seconds"] = info.get("train_cpu_seconds")
    if "probnet" in raws:
        sig = raws["probnet"]["sigma"]  # (S, T, n, 2, 2)
        det = sig[..., 0, 0] * sig[..., 1, 1] - sig[..., 0, 1] * sig[..., 1, 0]
        det = det.mean(axis=2)
        pos, n, p = sign_test_increasing(det[:, 0], det[:, k])
        headline["probnet_det_sign_test"] = {"increasing": pos, "trials": n, "p_value": p}
        headline["probnet_mean_det_by_step"] = det.mean(axis=0).tolist()
    if "interpnet" in raws and "dispnet" in raws:
        i = raws["interpnet"]
        ierr = np.sqrt(((i["position"] - i["truth"]) ** 2).sum(-1)).mean(axis=(0, 2))
        headline["interpnet_error_final"] = float(ierr[k])
        headline["interpnet_h0_final_error"] = h0_final
        headline["dispnet_error_final"] = headline["dispnet_error_T_train"]
    summary["headline"] = headline
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary
