"""Command-line entry point: ``rlab <subcommand> [flags]``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

import argparse
import json
import os
import sys
from dataclasses import asdict

from . import __version__

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def default_threads():
    env = os.environ.get("RLAB_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise UsageError(f"RLAB_THREADS must be an integer, got {env!r}") from None
        if n < 1:
            raise UsageError("RLAB_THREADS must be at least 1")
        return n
    return os.cpu_count() or 1


def load_config_file(path):
    """JSON key-value tree with optional ``dataset``/``model``/``train``/``eval`` sections."""
    if path is None:
        return {}
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return doc


def _section(cfg, name):
    sec = cfg.get(name, {})
    if not isinstance(sec, dict):
        raise UsageError(f"config section {name!r} must be an object")
    return dict(sec)


def _override(section, **flags):
    for k, v in flags.items():
        if v is not None:
            section[k] = v
    return section


def write_resolved(out_dir, subcommand, resolved):
    os.makedirs(out_dir, exist_ok=True)
    doc = {"subcommand": subcommand, "version": __version__, **resolved}
    with open(os.path.join(out_dir, "resolved_config.json"), "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _horizons(sec):
    return {"T_train": int(sec.get("T_train", 10)), "T_gen": int(sec.get("T_gen", 20))}


# ------------------------------------------------------------- subcommands


def cmd_gen(args, cfg):
    from .datasets import DatasetManifest, generate_dataset

    sec = _override(
        _section(cfg, "dataset"),
        family=args.family, sequence_count=args.count, master_seed=args.seed,
        n_objects=args.objects, image_size=args.image_size,
        ball_textured=False if args.untextured else None,
    )
    manifest = DatasetManifest(**sec)
    generate_dataset(manifest, args.out, threads=args.threads)
    print(f"wrote {manifest.sequence_count} sequences to {args.out}")


def _model_and_schedule(args, cfg, dataset):
    from .predictor import ModelConfig
    from .training import TrainSchedule

    msec = _override(
        _section(cfg, "model"), variant=args.variant, channels=args.channels,
        transition_width=args.transition_width,
    )
    msec.setdefault("n_objects", dataset.manifest.n_objects)
    msec.setdefault("image_size", dataset.manifest.image_size)
    msec.setdefault("T0", dataset.manifest.T0)
    tsec = _override(
        _section(cfg, "train"), max_epochs=args.epochs, lr_initial=args.lr,
        batch_size=args.batch_size, T_train=args.T_train, seed=args.seed,
    )
    return ModelConfig(**msec), TrainSchedule(**tsec)


def cmd_train(args, cfg):
    from .datasets import load_dataset
    from .training import LossConfig, train

    dataset = load_dataset(args.data)
    model, schedule = _model_and_schedule(args, cfg, dataset)
    loss = LossConfig(**_section(cfg, "loss"))
    write_resolved(args.out, "train", {
        "data": args.data, "model": model.to_json(),
        "train": schedule.to_json(), "loss": asdict(loss),
    })

    def progress(epoch, lr, tl, vl):
        if not args.quiet:
            print(f"epoch {epoch:4d}  lr {lr:.1e}  train {tl:.4f}  val {vl:.4f}", flush=True)

    _, state, _ = train(dataset, model, schedule, args.out, loss, progress=progress)
    print(f"best val loss {state.best:.6f} at epoch {state.best_epoch}; "
          f"checkpoint {os.path.join(args.out, 'checkpoint.rllw')}")


def cmd_eval(args, cfg):
    from .datasets import load_dataset
    from .evaluation import evaluate_model, write_report
    from .training import check_compatible, load_model

    dataset = load_dataset(args.data)
    params, meta = load_model(args.checkpoint)
    config = meta["config"]
    check_compatible(dataset, config)
    horizons = _horizons(_override(_section(cfg, "eval"), T_train=args.T_train,
                                   T_gen=args.T_gen))
    report, _ = evaluate_model(params, config, dataset, args.split, horizons)
    write_resolved(args.out, "eval", {
        "data": args.data, "checkpoint": args.checkpoint,
        "split": args.split, "horizons": horizons,
    })
    write_report(report, args.out)
    _print_summary(report)


def cmd_baseline(args, cfg):
    from .datasets import load_dataset
    from .evaluation import evaluate_baseline, write_report

    dataset = load_dataset(args.data)
    horizons = _horizons(_override(_section(cfg, "eval"), T_train=args.T_train,
                                   T_gen=args.T_gen))
    degree = {"linear": 1, "quadratic": 2}[args.kind]
    report, _ = evaluate_baseline(dataset, degree, args.split, horizons)
    write_resolved(args.out, "baseline", {
        "data": args.data, "kind": args.kind, "split": args.split,
        "horizons": horizons,
    })
    write_report(report, args.out)
    _print_summary(report)


def _print_summary(report):
    for label, h in report["horizons"].items():
        metrics = ", ".join(f"{k} {v:.4f}" for k, v in h.items() if k != "step")
        print(f"{report['variant']} {label} (step {h['step']}): {metrics}")


def cmd_render_preview(args, cfg):
    import numpy as np

    from . import optics
    from .datasets import DatasetManifest, load_dataset, simulate_record

    if args.data:
        record = load_dataset(args.data).record(args.index)
    else:
        manifest = DatasetManifest(
            **_override(_section(cfg, "dataset"), family=args.family, master_seed=args.seed,
                        n_objects=args.objects, image_size=args.image_size)
        )
        record = simulate_record(manifest, args.index)
    os.makedirs(args.out, exist_ok=True)
    picks = np.linspace(0, record.length - 1, min(args.frames, record.length)).astype(int)
    for k in picks:
        optics.save_png(os.path.join(args.out, f"frame_{k:04d}.png"), record.frames[k])
    print(f"wrote {len(picks)} PNG frames to {args.out}")


def cmd_selftest(args, cfg):
    from .selftest import run_selftest

    failures = run_selftest(verbose=not args.quiet)
    if failures:
        print(f"selftest: {failures} check(s) failed", file=sys.stderr)
        return EXIT_RUNTIME
    print("selftest: all checks passed")
    return EXIT_OK


def cmd_repro_toy(args, cfg):
    from .repro import ToyConfig, run_toy

    sec = _override(_section(cfg, "toy"), sequence_count=args.count, max_epochs=args.epochs,
                    seed=args.seed, lr_initial=args.lr)
    if args.variants:
        sec["variants"] = tuple(v.strip() for v in args.variants.split(","))
    toy = ToyConfig(**sec)
    summary = run_toy(toy, args.out, threads=args.threads, quiet=args.quiet)
    print(json.dumps(summary["headline"], indent=2, sort_keys=True))


# ------------------------------------------------------------------ parser


def build_parser():
    p = argparse.ArgumentParser(prog="rlab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"rlab {__version__}")
    p.add_argument("--threads", type=int, default=None,
                   help="worker count for parallel sections (default: $RLAB_THREADS or CPUs)")
    p.add_argument("--config", default=None, help="JSON config file (see docs/config.md)")
    sub = p.add_subparsers(dest="command", metavar="SUBCOMMAND")

    g = sub.add_parser("gen", help="simulate and render a dataset")
    g.add_argument("--family", choices=("hemispherical", "ellipsoidal", "heightfield"))
    g.add_argument("--count", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--objects", type=int)
    g.add_argument("--image-size", type=int)
    g.add_argument("--untextured", action="store_true", help="plain-coloured balls")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a predictor on a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--variant", choices=("dispnet", "probnet", "posnet", "interpnet"))
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--T-train", type=int)
    t.add_argument("--channels", type=int)
    t.add_argument("--transition-width", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--split", default="test", choices=("train", "val", "test"))
    e.add_argument("--T-train", type=int)
    e.add_argument("--T-gen", type=int)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("baseline", help="evaluate a least-squares polynomial baseline")
    b.add_argument("--data", required=True)
    b.add_argument("--kind", choices=("linear", "quadratic"), default="linear")
    b.add_argument("--out", required=True)
    b.add_argument("--split", default="test", choices=("train", "val", "test"))
    b.add_argument("--T-train", type=int)
    b.add_argument("--T-gen", type=int)
    b.set_defaults(func=cmd_baseline)

    r = sub.add_parser("render-preview", help="export PNG frames of a sequence")
    r.add_argument("--data", help="dataset directory (otherwise simulate one sequence)")
    r.add_argument("--index", type=int, default=0)
    r.add_argument("--family", choices=("hemispherical", "ellipsoidal", "heightfield"))
    r.add_argument("--seed", type=int)
    r.add_argument("--objects", type=int)
    r.add_argument("--image-size", type=int)
    r.add_argument("--frames", type=int, default=8)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_render_preview)

    s = sub.add_parser("selftest", help="run built-in invariant checks")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_selftest)

    y = sub.add_parser("repro-toy", help="gen -> train -> eval at desk scale")
    y.add_argument("--out", required=True)
    y.add_argument("--count", type=int)
    y.add_argument("--epochs", type=int)
    y.add_argument("--seed", type=int)
    y.add_argument("--lr", type=float)
    y.add_argument("--variants", help="comma-separated, e.g. dispnet,probnet,interpnet")
    y.add_argument("--quiet", action="store_true")
    y.set_defaults(func=cmd_repro_toy)
    return p


def main(argv=None):
    from .errors import RlabError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("rlab: error: a subcommand is required", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.threads is None:
            args.threads = default_threads()
        elif args.threads < 1:
            raise UsageError("--threads must be at least 1")
        cfg = load_config_file(args.config)
        code = args.func(args, cfg)
        return EXIT_OK if code is None else code
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"rlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RlabError, OSError, KeyError, TypeError) as exc:
        print(f"rlab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
