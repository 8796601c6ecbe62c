"""Command-line front end.

Settings resolve as built-in defaults < ``--config`` JSON file < flags.
Exit codes: 0 success, 1 runtime fault or missing file, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .dataset import (
    STREAM_TEST,
    CSVFormatError,
    SyntheticSpec,
    clairvoyant_accuracy,
    evaluate_accuracy,
    generate_synthetic,
    load_csv,
    save_csv,
    write_csv,
    MAX_CLAIRVOYANT_DIM,
)
from .experiments import (
    ABLATION_BURN_IN,
    EXCURSION_FACTOR,
    ablation_sweep,
    excursion_report,
    histogram_experiment,
    convergence_experiment,
    write_experiment_dir,
    write_histogram_csv,
    write_manifest,
)
from .losses import LossKind
from .optimizer import (
    Constant,
    Decaying,
    Method,
    ResConfig,
    estimate_diagnostics,
    run,
)

log = logging.getLogger("resvm")

OUTDIR_ENV = "RESVM_OUTDIR"

DEFAULTS = {
    "lambda": 1e-3,
    "delta": 1e-3,
    "gamma": 1e-4,
    "batch_size": None,  # 5 for RES, 1 for SGD
    "eps0": 3e-2,
    "tau": 100.0,
    "constant_step": None,
    "max_iters": None,
    "seed": 0,
    "loss": "squared_hinge",
    "n": 4,
    "N": 10_000,
}

COMMANDS = (
    "generate",
    "train",
    "eval",
    "bench-convergence",
    "bench-histogram",
    "bench-ablation",
    "diagnostics",
)


class UsageError(Exception):
    pass


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _add_config_flags(p: argparse.ArgumentParser, data: bool = True) -> None:
    S = argparse.SUPPRESS
    g = p.add_argument_group("optimizer settings")
    g.add_argument("--config", metavar="PATH", default=S, help="JSON config (ResConfig / SyntheticSpec field names)")
    g.add_argument("--lambda", dest="lambda", type=float, default=S, help="regularization weight (default: 1e-3)")
    g.add_argument("--delta", type=float, default=S, help="curvature eigenvalue floor (default: 1e-3)")
    g.add_argument("--gamma", type=float, default=S, help="identity bias added to the inverse curvature (default: 1e-4)")
    g.add_argument("--batch-size", dest="batch_size", type=int, default=S, help="minibatch size L (default: 5 for res, 1 for sgd)")
    g.add_argument("--epsilon0", dest="eps0", type=float, default=S, help="initial step size of eps0*tau/(tau+t) (default: 3e-2)")
    g.add_argument("--tau", type=float, default=S, help="step decay constant (default: 100)")
    g.add_argument("--constant-step", dest="constant_step", type=float, default=S, help="use a constant step size instead of the decaying schedule (default: off)")
    g.add_argument("--max-iters", dest="max_iters", type=int, default=S, help="iterations (default: budget / batch size)")
    g.add_argument("--seed", type=int, default=S, help="base seed (default: 0)")
    g.add_argument("--loss", choices=[k.value for k in LossKind], default=S, help="loss function (default: squared_hinge)")
    if data:
        d = p.add_argument_group("synthetic data")
        d.add_argument("--n", type=int, default=S, help="feature dimension (default: 4)")
        d.add_argument("--num-samples", "-N", dest="N", type=int, default=S, help="training-set size (default: 10000)")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--outdir", default=os.environ.get(OUTDIR_ENV, "results"), help=f"output directory (default: ${OUTDIR_ENV} or ./results)")
    p.add_argument("--jobs", type=_positive_int, default=1, help="worker processes (default: 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="resvm", description="Regularized stochastic BFGS for linear SVMs.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr (default: off)")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("generate", help="write a synthetic training set as CSV")
    _add_config_flags(p)
    p.add_argument("--output", "-o", required=True, help="CSV path, or - for standard output")
    p.add_argument("--header", action="store_true", help="emit a header row (default: off)")
    p.add_argument("--outdir", default=os.environ.get(OUTDIR_ENV, "results"), help=f"manifest directory (default: ${OUTDIR_ENV} or ./results)")

    p = sub.add_parser("train", help="train a classifier and record its trajectory")
    _add_config_flags(p)
    _add_run_flags(p)
    p.add_argument("--method", choices=[m.value for m in Method], default="res", help="optimizer (default: res)")
    p.add_argument("--data", help="training CSV (default: generate from --n/--num-samples/--seed)")
    p.add_argument("--header", action="store_true", help="--data has a header row (default: off)")
    p.add_argument("--budget", type=_positive_int, default=2500, help="samples to process when --max-iters is unset (default: 2500)")
    p.add_argument("--record-every", type=_positive_int, default=10, help="iterations between objective records (default: 10)")
    p.add_argument("--dump-curvature", action="store_true", help="write the final curvature matrix as CSV (default: off)")

    p = sub.add_parser("eval", help="classification accuracy of saved weights")
    p.add_argument("--weights", required=True, help="weights JSON written by train")
    p.add_argument("--data", help="test CSV (default: generate a fresh test set)")
    p.add_argument("--header", action="store_true", help="--data has a header row (default: off)")
    p.add_argument("--n", type=int, default=None, help="dimension of a generated test set (default: weights length)")
    p.add_argument("--num-samples", "-N", dest="N", type=int, default=10_000, help="generated test-set size (default: 10000)")
    p.add_argument("--seed", type=int, default=0, help="generated test-set seed (default: 0)")

    p = sub.add_parser("bench-convergence", help="objective vs. samples processed, RES and SGD")
    _add_config_flags(p)
    _add_run_flags(p)
    p.add_argument("--budget", type=_positive_int, default=2500, help="samples processed per run (default: 2500)")
    p.add_argument("--seeds", type=_positive_int, default=10, help="number of seeds starting at --seed (default: 10)")
    p.add_argument("--record-every", type=_positive_int, default=1, help="iterations between records (default: 1)")

    p = sub.add_parser("bench-histogram", help="test-accuracy histogram across replications")
    _add_config_flags(p, data=False)
    _add_run_flags(p)
    p.add_argument("--n", type=int, default=4, help="feature dimension (default: 4)")
    p.add_argument("--train-size", type=_positive_int, default=2500, help="training samples per replication (default: 2500)")
    p.add_argument("--test-size", type=_positive_int, default=None, help="test samples (default: 1000, 10000 with --full-scale)")
    p.add_argument("--replications", type=_positive_int, default=None, help="replications (default: 100, 1000 with --full-scale)")
    p.add_argument("--full-scale", action="store_true", help="full-size test sets and replication count (default: off)")
    p.add_argument("--method", choices=["res", "sgd", "both"], default="both", help="optimizer(s) (default: both)")

    p = sub.add_parser("bench-ablation", help="SGD vs. RES vs. unregularized RES with constant step")
    _add_run_flags(p)
    p.add_argument("--n", type=int, default=10, help="feature dimension (default: 10)")
    p.add_argument("--num-samples", "-N", dest="N", type=int, default=10_000, help="training-set size (default: 10000)")
    p.add_argument("--budget", type=_positive_int, default=10_000, help="samples processed per run (default: 10000)")
    p.add_argument("--step", type=float, default=1e-1, help="constant step size (default: 0.1)")
    p.add_argument("--seed", type=int, default=0, help="first seed (default: 0)")
    p.add_argument("--seeds", type=_positive_int, default=20, help="number of seeds (default: 20)")

    p = sub.add_parser("diagnostics", help="curvature bounds, gradient moment and rate-condition check")
    _add_config_flags(p)
    p.add_argument("--probe-points", type=_positive_int, default=200, help="random probe points (default: 200)")
    return parser


def resolve_settings(args: argparse.Namespace) -> dict:
    """Merge defaults, the optional JSON config file and explicit flags."""
    settings = dict(DEFAULTS)
    if "config" in args:
        path = Path(args.config)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise
        except json.JSONDecodeError as exc:
            raise UsageError(f"malformed config {path}: {exc}") from None
        settings.update(_flatten_config(raw))
    flags = {k: getattr(args, k) for k in DEFAULTS if k in args}
    if "constant_step" in flags and ("eps0" in flags or "tau" in flags):
        raise UsageError("--constant-step conflicts with --epsilon0/--tau")
    if "eps0" in flags or "tau" in flags:
        settings["constant_step"] = None
    settings.update(flags)
    return settings


def _flatten_config(raw: dict) -> dict:
    if not isinstance(raw, dict):
        raise UsageError("config must be a JSON object")
    flat = {}
    unknown = set(raw) - set(DEFAULTS) - {"schedule", "neg_interval", "pos_interval"}
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    for key, value in raw.items():
        if key == "schedule":
            kind = value.get("kind", "decaying")
            if kind == "constant":
                flat["constant_step"] = value["eps"]
            elif kind == "decaying":
                flat["constant_step"] = None
                flat.update({k: value[k] for k in ("eps0", "tau") if k in value})
            else:
                raise UsageError(f"unknown schedule kind {kind!r}")
        elif key in DEFAULTS:
            flat[key] = value
    return flat


def build_config(settings: dict, method: str = "res", max_iters: int | None = None) -> ResConfig:
    if settings["constant_step"] is not None:
        schedule = Constant(float(settings["constant_step"]))
    else:
        schedule = Decaying(float(settings["eps0"]), float(settings["tau"]))
    batch_size = settings["batch_size"]
    if batch_size is None:
        batch_size = 1 if method == "sgd" else 5
    delta, gamma = float(settings["delta"]), float(settings["gamma"])
    if method == "res_unregularized":
        delta = gamma = 0.0
    iters = settings["max_iters"] if settings["max_iters"] is not None else max_iters
    return ResConfig(
        lam=float(settings["lambda"]),
        delta=delta,
        gamma=gamma,
        batch_size=int(batch_size),
        schedule=schedule,
        max_iters=int(iters if iters is not None else 0),
        seed=int(settings["seed"]),
        loss=LossKind.parse(settings["loss"]),
    )


def _spec_from(settings: dict) -> SyntheticSpec:
    return SyntheticSpec(n=int(settings["n"]), N=int(settings["N"]), seed=int(settings["seed"]))


def _announce(manifest: Path) -> None:
    print(f"manifest: {manifest}", file=sys.stderr)


def _median(values) -> float:
    return float(np.median(np.asarray(values, dtype=float)))


# ---------------------------------------------------------------------------
# command handlers; each returns an exit code


def cmd_generate(args, settings) -> int:
    spec = _spec_from(settings)
    data = generate_synthetic(spec)
    if args.output == "-":
        write_csv(data, sys.stdout, header=args.header)
    else:
        save_csv(data, args.output, header=args.header)
    manifest = write_manifest(Path(args.outdir) / "generate", {
        "command": "generate", "argv": sys.argv[1:], "spec": spec.to_dict(), "output": args.output,
    })
    _announce(manifest)
    return 0


def cmd_train(args, settings) -> int:
    if args.data and any(k in args for k in ("n", "N")):
        raise UsageError("--data conflicts with --n/--num-samples")
    cfg = build_config(settings, args.method)
    if settings["max_iters"] is None:
        if args.budget % cfg.batch_size:
            raise UsageError(f"--budget {args.budget} is not divisible by batch size {cfg.batch_size}")
        cfg = cfg.replace(max_iters=args.budget // cfg.batch_size)
    if args.data:
        data = load_csv(args.data, header=args.header)
        source = {"csv": str(args.data)}
    else:
        spec = _spec_from(settings)
        data = generate_synthetic(spec)
        source = {"synthetic": spec.to_dict()}
    log.info("training %s for %d iterations on %d samples (n=%d)", args.method, cfg.max_iters, len(data), data.n)
    trajectory = run(cfg, data, args.method, args.record_every)
    directory = Path(args.outdir) / "train"
    payload = {"command": "train", "argv": sys.argv[1:], "data": source, "resolved_config": cfg.to_dict()}
    manifest = write_experiment_dir(args.outdir, "train", [trajectory], payload)
    weights = directory / f"{trajectory.method.value}_seed{trajectory.seed}_weights.json"
    weights.write_text(json.dumps({"w": trajectory.final_w.tolist(), "method": trajectory.method.value}))
    if args.dump_curvature and trajectory.final_curvature is not None:
        dump = directory / f"{trajectory.method.value}_seed{trajectory.seed}_curvature.csv"
        np.savetxt(dump, trajectory.final_curvature, delimiter=",", fmt="%.17g")
        print(f"curvature: {dump}")
    print(f"final objective: {trajectory.final_objective:.6g}")
    print(f"weights: {weights}")
    _announce(manifest)
    if trajectory.fault is not None:
        it, reason = trajectory.fault
        print(f"fault at iteration {it}: {reason}", file=sys.stderr)
        return 1
    return 0


def _load_weights(path: str) -> np.ndarray:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"malformed weights file {path}: {exc}") from None
    w = np.asarray(raw["w"] if isinstance(raw, dict) else raw, dtype=float)
    if w.ndim != 1:
        raise UsageError("weights must be a flat list of numbers")
    return w


def cmd_eval(args, settings) -> int:
    w = _load_weights(args.weights)
    if args.data:
        data = load_csv(args.data, header=args.header)
    else:
        n = args.n if args.n is not None else w.shape[0]
        data = generate_synthetic(SyntheticSpec(n=n, N=args.N, seed=args.seed), stream=STREAM_TEST)
    acc = evaluate_accuracy(w, data)
    print(f"accuracy: {acc:.6f}")
    if data.n <= MAX_CLAIRVOYANT_DIM and not args.data:
        print(f"clairvoyant accuracy: {clairvoyant_accuracy(data.n):.6f}")
    return 0


def cmd_bench_convergence(args, settings) -> int:
    res_cfg = build_config(settings, "res")
    sgd_cfg = build_config(settings, "sgd")
    seeds = list(range(int(settings["seed"]), int(settings["seed"]) + args.seeds))
    logs = convergence_experiment(
        int(settings["n"]), int(settings["N"]), res_cfg, sgd_cfg, args.budget, seeds,
        record_every=args.record_every, jobs=args.jobs,
    )
    res = [lg for lg in logs if lg.method is Method.RES]
    sgd = [lg for lg in logs if lg.method is Method.SGD]
    summary = {
        "median_final_objective": {
            "res": _median([lg.final_objective for lg in res]),
            "sgd": _median([lg.final_objective for lg in sgd]),
        },
    }
    payload = {"command": "bench-convergence", "argv": sys.argv[1:], "n": int(settings["n"]),
               "N": int(settings["N"]), "budget_samples": args.budget, "seeds": seeds, "summary": summary}
    manifest = write_experiment_dir(args.outdir, "convergence", logs, payload)
    print(json.dumps(summary, indent=2))
    _announce(manifest)
    return 0


def cmd_bench_histogram(args, settings) -> int:
    test_size = args.test_size or (10_000 if args.full_scale else 1_000)
    reps = args.replications or (1_000 if args.full_scale else 100)
    methods = ["res", "sgd"] if args.method == "both" else [args.method]
    directory = Path(args.outdir) / "histogram"
    directory.mkdir(parents=True, exist_ok=True)
    summary = {}
    for method in methods:
        cfg = build_config(settings, method)
        result = histogram_experiment(args.n, args.train_size, test_size, cfg, method, reps,
                                      base_seed=int(settings["seed"]), jobs=args.jobs)
        write_histogram_csv(result, directory / f"{method}_histogram.csv")
        summary[method] = {"mean": result.mean, "min": min(result.accuracies),
                           "max": max(result.accuracies), "faults": len(result.faults)}
    payload = {"command": "bench-histogram", "argv": sys.argv[1:], "n": args.n, "train_size": args.train_size,
               "test_size": test_size, "replications": reps, "base_seed": int(settings["seed"]), "summary": summary}
    manifest = write_manifest(directory, payload)
    print(json.dumps(summary, indent=2))
    _announce(manifest)
    return 0


def cmd_bench_ablation(args, settings) -> int:
    seeds = list(range(args.seed, args.seed + args.seeds))
    logs = ablation_sweep(seeds, n=args.n, N=args.N, budget_samples=args.budget, step=args.step, jobs=args.jobs)
    per_seed = []
    for i, seed in enumerate(seeds):
        group = {lg.method: lg for lg in logs[3 * i:3 * i + 3]}
        reg = excursion_report(group[Method.RES], args.budget)
        unreg = excursion_report(group[Method.RES_UNREGULARIZED], args.budget)
        per_seed.append({
            "seed": seed,
            "regularized_max_ratio": reg.max_ratio_to_running_min,
            "unregularized_max_ratio": unreg.max_ratio_to_running_min,
            "unregularized_faulted": unreg.faulted,
            "unregularized_excursion": unreg.exceeds(EXCURSION_FACTOR),
            "sgd_final": group[Method.SGD].final_objective,
            "res_final": group[Method.RES].final_objective,
        })
    summary = {
        "burn_in_fraction": ABLATION_BURN_IN,
        "excursion_factor": EXCURSION_FACTOR,
        "unregularized_divergence_frequency": float(np.mean([s["unregularized_excursion"] for s in per_seed])),
        "regularized_bounded_all_seeds": all(s["regularized_max_ratio"] < EXCURSION_FACTOR for s in per_seed),
        "per_seed": per_seed,
    }
    payload = {"command": "bench-ablation", "argv": sys.argv[1:], "n": args.n, "N": args.N,
               "budget_samples": args.budget, "step": args.step, "seeds": seeds, "summary": summary}
    manifest = write_experiment_dir(args.outdir, "ablation", logs, payload)
    print(json.dumps({k: v for k, v in summary.items() if k != "per_seed"}, indent=2))
    _announce(manifest)
    return 0


def cmd_diagnostics(args, settings) -> int:
    cfg = build_config(settings, "res")
    data = generate_synthetic(_spec_from(settings))
    diag = estimate_diagnostics(cfg, data, args.probe_points)
    out = diag.to_dict()
    if isinstance(cfg.schedule, Decaying):
        out["rate_product"] = 2 * cfg.schedule.eps0 * cfg.schedule.tau * cfg.gamma
    print(json.dumps(out, indent=2))
    return 0


HANDLERS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "bench-convergence": cmd_bench_convergence,
    "bench-histogram": cmd_bench_histogram,
    "bench-ablation": cmd_bench_ablation,
    "diagnostics": cmd_diagnostics,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        settings = resolve_settings(args)
        return HANDLERS[args.command](args, settings)
    except (UsageError, ValueError) as exc:
        if isinstance(exc, CSVFormatError):
            print(f"resvm: error: {exc}", file=sys.stderr)
            return 1
        print(f"resvm {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"resvm: error: {exc}", file=sys.stderr)
        return 1
