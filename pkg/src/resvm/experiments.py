"""Seeded re-creations of the RES vs. SGD benchmarks.

Every run derives its seeds from an explicit integer (``seed`` or
``base_seed + replication``) so results do not depend on execution order or
on the number of worker processes.
"""

from __future__ import annotations

import csv
import json
import logging
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
import scipy

from . import __version__
from .dataset import (
    GENERATOR_NAME,
    STREAM_TEST,
    SyntheticSpec,
    evaluate_accuracy,
    generate_synthetic,
)
from .optimizer import Constant, Method, ResConfig, TrajectoryLog, run

log = logging.getLogger(__name__)

TRAJECTORY_HEADER = ["method", "seed", "t", "samples_processed", "objective"]
HISTOGRAM_HEADER = ["bin_lo", "bin_hi", "count"]
HISTOGRAM_BIN_WIDTH = 0.02
ABLATION_BURN_IN = 0.2
EXCURSION_FACTOR = 10.0


def _map(fn: Callable, items: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(fn, items))


def _iters_for(budget_samples: int, cfg: ResConfig) -> int:
    if budget_samples % cfg.batch_size:
        raise ValueError(f"budget {budget_samples} is not divisible by batch size {cfg.batch_size}")
    return budget_samples // cfg.batch_size


# ---------------------------------------------------------------------------
# convergence (objective vs. samples processed)


def _convergence_job(args):
    n, N, res_cfg, sgd_cfg, seed, record_every = args
    data = generate_synthetic(SyntheticSpec(n=n, N=N, seed=seed))
    return [
        run(res_cfg.replace(seed=seed), data, Method.RES, record_every),
        run(sgd_cfg.replace(seed=seed), data, Method.SGD, record_every),
    ]


def convergence_experiment(
    n: int,
    N: int,
    res_cfg: ResConfig,
    sgd_cfg: ResConfig,
    budget_samples: int,
    seeds: Iterable[int],
    record_every: int = 1,
    jobs: int = 1,
) -> list[TrajectoryLog]:
    """RES and SGD on a shared training set per seed, equal sample budgets.

    Returns logs ordered ``[res_seed0, sgd_seed0, res_seed1, ...]``.
    """
    res_cfg = res_cfg.replace(max_iters=_iters_for(budget_samples, res_cfg))
    sgd_cfg = sgd_cfg.replace(max_iters=_iters_for(budget_samples, sgd_cfg))
    jobs_args = [(n, N, res_cfg, sgd_cfg, int(s), record_every) for s in seeds]
    return [lg for pair in _map(_convergence_job, jobs_args, jobs) for lg in pair]


# ---------------------------------------------------------------------------
# accuracy histogram


@dataclass
class HistogramResult:
    accuracies: list[float]
    bin_edges: list[float]
    counts: list[int]
    mean: float
    replications: int
    method: str = "res"
    base_seed: int = 0
    faults: list[int] = field(default_factory=list)
    config: Optional[ResConfig] = None

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "replications": self.replications,
            "base_seed": self.base_seed,
            "seeds": [self.base_seed + r for r in range(self.replications)],
            "mean": self.mean,
            "accuracies": self.accuracies,
            "faulted_replications": self.faults,
            "bin_edges": self.bin_edges,
            "counts": self.counts,
            "config": self.config.to_dict() if self.config else None,
        }


def histogram_bins() -> np.ndarray:
    return np.linspace(0.0, 1.0, int(round(1 / HISTOGRAM_BIN_WIDTH)) + 1)


def _histogram_job(args):
    n, train_N, test_N, cfg, method, seed, record_every = args
    train = generate_synthetic(SyntheticSpec(n=n, N=train_N, seed=seed))
    test = generate_synthetic(SyntheticSpec(n=n, N=test_N, seed=seed), stream=STREAM_TEST)
    trajectory = run(cfg.replace(seed=seed), train, method, record_every)
    if trajectory.fault is not None:
        return 0.0, True
    return evaluate_accuracy(trajectory.final_w, test), False


def histogram_experiment(
    n: int,
    train_N: int,
    test_N: int,
    cfg: ResConfig,
    method: Method | str,
    replications: int,
    base_seed: int = 0,
    jobs: int = 1,
) -> HistogramResult:
    """Test accuracy of classifiers trained on ``train_N`` samples, per replication."""
    if replications < 1:
        raise ValueError("replications must be >= 1")
    method = Method(method)
    cfg = cfg.replace(max_iters=_iters_for(train_N, cfg))
    # objective records are not needed here, only the final iterate
    record_every = max(cfg.max_iters, 1)
    args = [(n, train_N, test_N, cfg, method, base_seed + r, record_every) for r in range(replications)]
    outcomes = _map(_histogram_job, args, jobs)
    accuracies = [acc for acc, _ in outcomes]
    faults = [r for r, (_, faulted) in enumerate(outcomes) if faulted]
    edges = histogram_bins()
    counts, _ = np.histogram(accuracies, bins=edges)
    return HistogramResult(
        accuracies=accuracies,
        bin_edges=edges.tolist(),
        counts=counts.astype(int).tolist(),
        mean=float(np.mean(accuracies)),
        replications=replications,
        method=method.value,
        base_seed=base_seed,
        faults=faults,
        config=cfg,
    )


# ---------------------------------------------------------------------------
# regularization ablation


def ablation_configs(step: float = 1e-1, batch_size: int = 5, budget_samples: int = 10_000) -> dict[Method, ResConfig]:
    base = ResConfig(schedule=Constant(step), batch_size=batch_size)
    cfgs = {
        Method.SGD: base.replace(batch_size=1),
        Method.RES: base,
        Method.RES_UNREGULARIZED: base.replace(delta=0.0, gamma=0.0),
    }
    return {m: c.replace(max_iters=_iters_for(budget_samples, c)) for m, c in cfgs.items()}


def regularization_ablation(
    n: int = 10,
    N: int = 10_000,
    budget_samples: int = 10_000,
    base_seed: int = 0,
    step: float = 1e-1,
    record_every: int = 1,
) -> list[TrajectoryLog]:
    """SGD, RES and unregularized RES with a constant step on one training set."""
    data = generate_synthetic(SyntheticSpec(n=n, N=N, seed=base_seed))
    logs = []
    for method, cfg in ablation_configs(step, budget_samples=budget_samples).items():
        logs.append(run(cfg.replace(seed=base_seed), data, method, record_every))
    return logs


def _ablation_job(args):
    return regularization_ablation(*args)


def ablation_sweep(
    seeds: Iterable[int],
    n: int = 10,
    N: int = 10_000,
    budget_samples: int = 10_000,
    step: float = 1e-1,
    record_every: int = 1,
    jobs: int = 1,
) -> list[TrajectoryLog]:
    args = [(n, N, budget_samples, int(s), step, record_every) for s in seeds]
    return [lg for logs in _map(_ablation_job, args, jobs) for lg in logs]


@dataclass(frozen=True)
class ExcursionReport:
    """Post-burn-in behaviour of one trajectory relative to its running minimum."""

    max_post_burn_in: float
    max_ratio_to_running_min: float
    faulted: bool

    def exceeds(self, factor: float = EXCURSION_FACTOR) -> bool:
        return self.faulted or not self.max_ratio_to_running_min < factor


def excursion_report(lg: TrajectoryLog, budget_samples: int, burn_in: float = ABLATION_BURN_IN) -> ExcursionReport:
    """Largest ``F(w_t) / min_{s <= t} F(w_s)`` after the burn-in window.

    The running minimum starts at ``t = 0``; records with fewer than
    ``burn_in * budget_samples`` processed samples are excluded.
    """
    samples = lg.samples
    values = lg.objectives
    with np.errstate(invalid="ignore", over="ignore"):
        running_min = np.minimum.accumulate(values)
        keep = samples >= burn_in * budget_samples
        post = values[keep]
        ratios = post / running_min[keep]
    nonfinite = not np.all(np.isfinite(post))
    return ExcursionReport(
        max_post_burn_in=float(np.max(post)) if post.size else float("nan"),
        max_ratio_to_running_min=float(np.max(ratios)) if post.size else float("nan"),
        faulted=lg.fault is not None or nonfinite,
    )


# ---------------------------------------------------------------------------
# output


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def write_trajectories_csv(logs: Sequence[TrajectoryLog], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_HEADER)
        for lg in logs:
            for t, processed, value in lg.entries:
                writer.writerow([lg.method.value, lg.seed, t, processed, _fmt(value)])


def read_trajectories_csv(path: str | Path) -> list[tuple[str, int, list[tuple[int, int, float]]]]:
    """Parse a trajectory CSV into ``(method, seed, entries)`` groups in file order."""
    groups: list[tuple[str, int, list]] = []
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != TRAJECTORY_HEADER:
            raise ValueError(f"unexpected trajectory header {reader.fieldnames}")
        for row in reader:
            key = (row["method"], int(row["seed"]))
            if not groups or groups[-1][:2] != key:
                groups.append((key[0], key[1], []))
            groups[-1][2].append((int(row["t"]), int(row["samples_processed"]), float(row["objective"])))
    return groups


def trajectory_to_dict(lg: TrajectoryLog) -> dict:
    return {
        "method": lg.method.value,
        "seed": lg.seed,
        "config": lg.config.to_dict(),
        "fault": None if lg.fault is None else {"iteration": lg.fault[0], "reason": lg.fault[1]},
        "skip_count": lg.skip_count,
        "entries": [{"t": t, "samples_processed": p, "objective": v} for t, p, v in lg.entries],
    }


def write_histogram_csv(result: HistogramResult, path: str | Path) -> Path:
    """Write bin counts to ``path`` and the summary to a ``.json`` sidecar."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTOGRAM_HEADER)
        edges = result.bin_edges
        for lo, hi, count in zip(edges[:-1], edges[1:], result.counts):
            writer.writerow([_fmt(lo), _fmt(hi), count])
    sidecar = path.with_suffix(".json")
    sidecar.write_text(json.dumps(result.to_dict(), indent=2))
    return sidecar


def emit_results(results, path: str | Path, format: str = "csv") -> None:
    """Write trajectory logs or a histogram as CSV or JSON."""
    if format not in ("csv", "json"):
        raise ValueError(f"unknown format {format!r}")
    path = Path(path)
    if isinstance(results, HistogramResult):
        if format == "csv":
            write_histogram_csv(results, path)
        else:
            path.write_text(json.dumps(results.to_dict(), indent=2))
        return
    logs = list(results)
    if format == "csv":
        write_trajectories_csv(logs, path)
    else:
        path.write_text(json.dumps([trajectory_to_dict(lg) for lg in logs], indent=2))


def environment_info() -> dict:
    return {
        "resvm": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": sys.version.split()[0],
        "platform": platform.platform(),
    }


def write_manifest(directory: str | Path, payload: dict) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"generator": GENERATOR_NAME, "versions": environment_info(), **payload}
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, default=str))
    return path


def write_experiment_dir(outdir: str | Path, experiment: str, logs: Sequence[TrajectoryLog], payload: dict) -> Path:
    """``<outdir>/<experiment>/<method>_seed<k>.csv`` per log plus ``manifest.json``."""
    directory = Path(outdir) / experiment
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for lg in logs:
        name = f"{lg.method.value}_seed{lg.seed}.csv"
        write_trajectories_csv([lg], directory / name)
        files.append(name)
    runs = [
        {"file": f, "method": lg.method.value, "seed": lg.seed, "config": lg.config.to_dict(),
         "fault": None if lg.fault is None else {"iteration": lg.fault[0], "reason": lg.fault[1]}}
        for f, lg in zip(files, logs)
    ]
    return write_manifest(directory, {"experiment": experiment, "runs": runs, **payload})
