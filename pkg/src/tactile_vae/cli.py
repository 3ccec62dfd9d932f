"""Command-line entry point: ``tactile-vae <command> ...`` (or ``python -m tactile_vae``).

Exit status: 0 on success, 1 on a runtime failure (one JSON line on stderr),
2 on a usage problem (bad flags, missing input files).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import calibration, control, evaluation, gradcheck, sim, storage
from .vae import TrainConfig, active_units, encode, train_vae

log = logging.getLogger("tactile_vae")


class UsageError(Exception):
    pass


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"input file not found: {path}")
    return p


def _outdir(path: str) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _finish(manifest: storage.RunManifest, out: Path, started: float, artifacts: Sequence[Path]) -> None:
    for a in artifacts:
        manifest.add_artifact(a)
    manifest.duration_s = round(time.perf_counter() - started, 3)
    manifest.write(out / "manifest.json")


# --- commands -------------------------------------------------------------

def cmd_gen(args) -> int:
    started = time.perf_counter()
    out = _outdir(args.out)
    sensor = sim.SensorModel.default(args.sensor)
    spec = sim.grid_for(args.dataset, args.scale)
    ds = sim.generate_dataset(args.dataset, sensor, spec, seed=args.seed)
    path = storage.write_dataset(ds, out / f"dataset_{args.dataset}_{sensor.archetype}.csv")
    man = storage.RunManifest("gen", {"dataset": args.dataset, "sensor": sensor.archetype, "scale": args.scale,
                                      "grid": asdict(spec)}, args.seed)
    _finish(man, out, started, [path, storage.sidecar_path(path)])
    print(json.dumps({"dataset": str(path), "records": len(ds), "taxels": ds.n_taxels}))
    return 0


def cmd_train(args) -> int:
    started = time.perf_counter()
    data = _existing(args.data)
    out = _outdir(args.out)
    ds = storage.read_dataset(data)
    overrides = {k: v for k, v in dict(epochs=args.epochs, hidden_width=args.hidden_width,
                                       batch_size=args.batch_size, optimizer=args.optimizer,
                                       step_rate=args.step_rate, activation=args.activation).items()
                 if v is not None}
    cfg = TrainConfig.for_archetype(ds.sensor, seed=args.seed, **overrides)
    model, history = train_vae(ds.frames, cfg, progress=args.verbose)
    ckpt = storage.save_checkpoint(model, out / "model.json")
    hist = storage.write_csv(out / "loss_history.csv", ["epoch", "loss"],
                             [(i + 1, float(v)) for i, v in enumerate(history)])
    man = storage.RunManifest("train", asdict(cfg), args.seed)
    man.add_input(data)
    _finish(man, out, started, [ckpt, hist])
    active = active_units(model, ds.frames)
    print(json.dumps({"model": str(ckpt), "first_loss": history[0], "final_loss": history[-1],
                      "active_units": len(active)}))
    return 0


def cmd_encode(args) -> int:
    started = time.perf_counter()
    model_path, data = _existing(args.model), _existing(args.data)
    out = _outdir(args.out)
    model = storage.load_checkpoint(model_path)
    ds = storage.read_dataset(data)
    Z = encode(model, ds.frames).mean
    header = ["t", *(f"z_{i}" for i in range(Z.shape[1]))]
    path = storage.write_csv(out / "latents.csv", header, ([float(ds.t[i]), *map(float, Z[i])] for i in range(len(ds))))
    man = storage.RunManifest("encode", {}, None)
    man.add_input(model_path)
    man.add_input(data)
    _finish(man, out, started, [path])
    print(json.dumps({"latents": str(path), "rows": len(ds)}))
    return 0


def cmd_eval(args) -> int:
    started = time.perf_counter()
    model_path, data = _existing(args.model), _existing(args.data)
    out = _outdir(args.out)
    model = storage.load_checkpoint(model_path)
    ds = storage.read_dataset(data)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    unknown = set(methods) - {"linear", "tree", "mlp"}
    if unknown:
        raise UsageError(f"unknown method(s): {', '.join(sorted(unknown))}")
    rep = evaluation.compare_raw_vs_latent(ds, model, methods=methods, split_seed=args.split_seed,
                                           tree_depth=args.tree_depth, tree_min_leaf=args.tree_min_leaf)
    artifacts = []
    report = rep.as_dict()
    report.update(dataset=str(data), kind=ds.kind, sensor=ds.sensor)
    storage.write_json(out / "report.json", report)
    artifacts.append(out / "report.json")
    artifacts.append(storage.write_csv(out / "regression.csv", ["method", "space", "attribute", "mae", "rmse"],
                                       ([r.method, r.space, r.attribute, r.mae, r.rmse] for r in rep.rows)))
    for space, cm in rep.confusion.items():
        rows = ([cm.labels[i], *map(int, cm.counts[i])] for i in range(len(cm.labels)))
        artifacts.append(storage.write_csv(out / f"confusion_{space}.csv", ["true", *cm.labels], rows))
    man = storage.RunManifest("eval", {"methods": methods, "split_seed": args.split_seed,
                                       "tree_depth": args.tree_depth, "tree_min_leaf": args.tree_min_leaf}, None)
    man.add_input(model_path)
    man.add_input(data)
    _finish(man, out, started, artifacts)
    print(json.dumps({"report": str(out / "report.json"), "rows": len(rep.rows)}))
    return 0


def cmd_calibrate(args) -> int:
    started = time.perf_counter()
    model_path, data = _existing(args.model), _existing(args.data)
    out = _outdir(args.out)
    model = storage.load_checkpoint(model_path)
    ds = storage.read_dataset(data)
    if args.attribute not in evaluation.dataset_attributes(ds):
        raise UsageError(f"attribute {args.attribute!r} does not vary in this dataset")
    if not 2 <= args.n_samples <= len(ds):
        raise UsageError(f"--n-samples must lie in [2, {len(ds)}]")
    Z = encode(model, ds.frames).mean
    idx = np.sort(np.random.default_rng(args.sample_seed).choice(len(ds), args.n_samples, replace=False))
    dims = None if args.all_dims else active_units(model, ds.frames)
    fit = calibration.calibrate(Z[idx], ds.labels(args.attribute)[idx], args.attribute, dims=dims)

    attrs = evaluation.dataset_attributes(ds)
    prof = calibration.latent_correlation_profile(Z, {a: ds.labels(a) for a in attrs})
    result = fit.as_dict()
    result["candidate_dims"] = dims
    result["full_data_abs_r"] = float(abs(prof[args.attribute][fit.index]))
    result["best_abs_r"] = float(np.max(np.abs(prof[args.attribute])))
    cal = out / "calibration.json"
    storage.write_json(cal, result)
    y = ds.labels(args.attribute)
    scatter = storage.write_csv(out / f"scatter_{args.attribute}.csv", ["label", "latent"],
                                ([float(y[i]), float(Z[i, fit.index])] for i in range(len(ds))))
    profile = storage.write_csv(out / "correlation_profile.csv", ["dim", *(f"r_{a}" for a in attrs)],
                                ([j, *(float(prof[a][j]) for a in attrs)] for j in range(Z.shape[1])))
    man = storage.RunManifest("calibrate", {"attribute": args.attribute, "n_samples": args.n_samples,
                                            "sample_seed": args.sample_seed, "all_dims": args.all_dims}, None)
    man.add_input(model_path)
    man.add_input(data)
    _finish(man, out, started, [cal, scatter, profile])
    print(json.dumps({k: result[k] for k in ("attribute", "index", "scale", "offset", "full_data_abs_r")}))
    return 0


def cmd_control(args) -> int:
    started = time.perf_counter()
    model_path, data = _existing(args.model), _existing(args.pretrain)
    out = _outdir(args.out)
    cfg = control.ControlConfig()
    if args.config:
        cfg = control.parse_config_text(_existing(args.config).read_text(), cfg)
    cfg.seed = args.seed
    if args.experiments is not None:
        cfg.n_experiments = args.experiments
    if args.rollouts is not None:
        cfg.n_rollouts = args.rollouts
    model = storage.load_checkpoint(model_path)
    ds = storage.read_dataset(data)
    sensor = sim.SensorModel.from_parameters(ds.sim_parameters) if ds.sim_parameters else sim.SensorModel.default(ds.sensor)
    if model.taxel_width != sensor.n_taxels:
        raise ValueError(f"model expects {model.taxel_width} taxels, pre-training sensor has {sensor.n_taxels}")
    setup = control.make_reward_setup(model, ds, sensor, cfg.plant, cfg.tau, cfg.active_state)
    curve = control.run_control_experiment(model, sensor, setup, cfg)
    R = curve.rewards
    rewards = storage.write_csv(out / "rewards.csv", ["experiment", "rollout", "reward"],
                                ([e + 1, k + 1, float(R[e, k])] for e in range(R.shape[0]) for k in range(R.shape[1])))
    mean = storage.write_csv(out / "mean_curve.csv", ["rollout", "mean_reward"],
                             ([k + 1, float(v)] for k, v in enumerate(curve.mean_curve)))
    conf = out / "control_config.txt"
    storage.atomic_write_text(conf, control.format_config_text(cfg))
    man = storage.RunManifest("control", cfg.as_dict(), args.seed)
    man.add_input(model_path)
    man.add_input(data)
    _finish(man, out, started, [rewards, mean, conf])
    mc = curve.mean_curve
    print(json.dumps({"reward_dims": setup.dims, "state_dims": setup.state_dims, "first": float(mc[0]) if mc.size else None,
                      "last5": float(mc[-5:].mean()) if mc.size else None}))
    return 0


def cmd_gradcheck(args) -> int:
    rep = gradcheck.full_suite(args.seed, args.n_nets)
    ok = rep.passed(args.tol)
    print(json.dumps({"max_rel_error": rep.max_rel_error, "cases": len(rep.cases), "passed": ok}))
    return 0 if ok else 1


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tactile-vae", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset (CSV + sidecar)")
    g.add_argument("--dataset", choices=("A", "B", "C"), required=True)
    g.add_argument("--sensor", choices=("dense", "sparse", "dense_nonlinear", "sparse_linear"), required=True)
    g.add_argument("--scale", choices=("desk", "full"), default="desk")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a VAE on a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--seed", type=int, required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int)
    t.add_argument("--hidden-width", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--optimizer", choices=("rmsprop", "adadelta", "sgd"))
    t.add_argument("--step-rate", type=float)
    t.add_argument("--activation", choices=("sigmoid", "rectifier", "identity"))
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("encode", help="write latent means for a dataset")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_encode)

    v = sub.add_parser("eval", help="compare raw and latent features")
    v.add_argument("--model", required=True)
    v.add_argument("--data", required=True)
    v.add_argument("--out", required=True)
    v.add_argument("--methods", default="linear,tree", help="comma list of linear, tree, mlp")
    v.add_argument("--split-seed", type=int, default=0)
    v.add_argument("--tree-depth", type=int, default=12)
    v.add_argument("--tree-min-leaf", type=int, default=5)
    v.set_defaults(func=cmd_eval)

    c = sub.add_parser("calibrate", help="map one latent dimension to a physical attribute")
    c.add_argument("--model", required=True)
    c.add_argument("--data", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--attribute", choices=sim.ATTRIBUTES, default="force")
    c.add_argument("--n-samples", type=int, default=50)
    c.add_argument("--sample-seed", type=int, default=0)
    c.add_argument("--all-dims", action="store_true", help="regress on every latent dim, not just active units")
    c.set_defaults(func=cmd_calibrate)

    k = sub.add_parser("control", help="run the pole-balancing experiment")
    k.add_argument("--model", required=True)
    k.add_argument("--pretrain", required=True, help="dataset used to pick the reward dimensions")
    k.add_argument("--seed", type=int, required=True)
    k.add_argument("--out", required=True)
    k.add_argument("--config", help="key = value overrides (see control_config.txt of any run)")
    k.add_argument("--experiments", type=int)
    k.add_argument("--rollouts", type=int)
    k.set_defaults(func=cmd_control)

    d = sub.add_parser("gradcheck", help="finite-difference check of all analytic gradients")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--n-nets", type=int, default=20)
    d.add_argument("--tol", type=float, default=1e-4)
    d.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 with usage text on bad flags
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(json.dumps({"error": "usage", "message": str(exc)}), file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - every runtime failure becomes one machine-readable line
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
