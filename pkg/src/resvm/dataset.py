"""Training sets: synthetic generation, minibatch sampling, CSV persistence, accuracy."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterator, Sequence, TextIO

import numpy as np

#: Identity of the bit generator behind every stream; written into manifests.
GENERATOR_NAME = "numpy.random.PCG64"

# Independent stream tags mixed into the seed so the same integer seed never
# reuses a stream for two purposes.
STREAM_DATA = 0
STREAM_SAMPLING = 1
STREAM_TEST = 2
STREAM_PROBE = 3


def make_rng(seed: int, stream: int = STREAM_DATA) -> np.random.Generator:
    """PCG64 generator seeded from ``(seed, stream)`` through a SeedSequence."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(stream)])))


@dataclass(frozen=True)
class Sample:
    x: np.ndarray
    y: int

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 1:
            raise ValueError("feature vector must be one-dimensional")
        if not np.all(np.isfinite(x)):
            raise ValueError("feature vector has non-finite components")
        if self.y not in (-1, 1):
            raise ValueError(f"label must be -1 or +1, got {self.y!r}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", int(self.y))


@dataclass(frozen=True, eq=False)
class TrainingSet:
    """Immutable labelled data; ``X`` has shape ``(N, n)``, ``y`` shape ``(N,)``."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.array(self.X, dtype=float, copy=True)
        y = np.array(self.y, dtype=float, copy=True)
        if X.ndim != 2:
            raise ValueError("features must form a 2-D array")
        if y.shape != (X.shape[0],):
            raise ValueError("label count does not match sample count")
        if not np.all(np.isfinite(X)):
            raise ValueError("non-finite feature value")
        if not np.all((y == 1) | (y == -1)):
            raise ValueError("labels must be -1 or +1")
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @classmethod
    def from_samples(cls, samples: Sequence[Sample]) -> "TrainingSet":
        if not samples:
            raise ValueError("cannot build a training set from zero samples")
        n = samples[0].x.shape[0]
        if any(s.x.shape[0] != n for s in samples):
            raise ValueError("samples have inconsistent dimensions")
        return cls(np.stack([s.x for s in samples]), np.array([s.y for s in samples], dtype=float))

    @property
    def n(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return self.X.shape[0]

    def __iter__(self) -> Iterator[Sample]:
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i: int) -> Sample:
        return Sample(self.X[i].copy(), int(self.y[i]))

    def __eq__(self, other):
        if not isinstance(other, TrainingSet):
            return NotImplemented
        return np.array_equal(self.X, other.X) and np.array_equal(self.y, other.y)

    @property
    def samples(self) -> list[Sample]:
        return list(self)


@dataclass(frozen=True)
class SyntheticSpec:
    n: int = 4
    N: int = 10_000
    neg_interval: tuple[float, float] = (-0.8, 0.2)
    pos_interval: tuple[float, float] = (-0.2, 0.8)
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"dimension must be >= 1, got {self.n}")
        if self.N < 2 or self.N % 2:
            raise ValueError(f"sample count must be even and >= 2, got {self.N}")
        for lo, hi in (self.neg_interval, self.pos_interval):
            if not lo < hi:
                raise ValueError(f"invalid interval [{lo}, {hi}]")
        object.__setattr__(self, "neg_interval", tuple(map(float, self.neg_interval)))
        object.__setattr__(self, "pos_interval", tuple(map(float, self.pos_interval)))

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "N": self.N,
            "neg_interval": list(self.neg_interval),
            "pos_interval": list(self.pos_interval),
            "seed": self.seed,
        }


def generate_synthetic(spec: SyntheticSpec, stream: int = STREAM_DATA) -> TrainingSet:
    """Two uniform hypercube classes, N/2 each, interleaved then shuffled."""
    rng = make_rng(spec.seed, stream)
    half = spec.N // 2
    neg = rng.uniform(*spec.neg_interval, size=(half, spec.n))
    pos = rng.uniform(*spec.pos_interval, size=(half, spec.n))
    X = np.empty((spec.N, spec.n))
    y = np.empty(spec.N)
    X[0::2], y[0::2] = neg, -1.0
    X[1::2], y[1::2] = pos, 1.0
    order = rng.permutation(spec.N)
    return TrainingSet(X[order], y[order])


def sample_indices(N: int, L: int, rng: np.random.Generator) -> np.ndarray:
    if N < 1:
        raise ValueError("cannot sample from an empty training set")
    if L < 1:
        raise ValueError(f"batch size must be >= 1, got {L}")
    return rng.integers(0, N, size=L)


def sample_minibatch(data: TrainingSet, L: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``L`` samples uniformly with replacement; returns ``(X, y)`` arrays."""
    idx = sample_indices(len(data), L, rng)
    return data.X[idx], data.y[idx]


def evaluate_accuracy(w, data: TrainingSet) -> float:
    """Fraction with ``sign(w.x) == y``; a zero score counts as a miss."""
    w = np.asarray(w, dtype=float)
    if w.shape != (data.n,):
        raise ValueError(f"dimension mismatch: w has shape {w.shape}, data has n={data.n}")
    return float(np.mean(np.sign(data.X @ w) == data.y))


MAX_CLAIRVOYANT_DIM = 30


def irwin_hall_cdf(x: Fraction | float, n: int) -> Fraction:
    """Exact CDF of the sum of ``n`` independent U(0, 1) variables at ``x``."""
    x = Fraction(x)
    if x <= 0:
        return Fraction(0)
    if x >= n:
        return Fraction(1)
    total = sum(
        (-1) ** k * math.comb(n, k) * (x - k) ** n for k in range(math.floor(x) + 1)
    )
    return total / math.factorial(n)


def clairvoyant_accuracy(n: int) -> float:
    """Accuracy of ``sign(sum_j x_j)`` under the default two-class model.

    For the negative class, ``sum_j (x_j + 0.8)`` is Irwin-Hall and the sample is
    misclassified when that sum exceeds ``0.8 n``; by symmetry the error is
    ``F_IH(0.2 n; n)`` and the positive class mirrors it.
    """
    if not 1 <= n <= MAX_CLAIRVOYANT_DIM:
        raise ValueError(f"n must be in [1, {MAX_CLAIRVOYANT_DIM}], got {n}")
    return float(1 - irwin_hall_cdf(Fraction(n, 5), n))


def _format_float(v: float) -> str:
    return f"{v:.17g}"


def write_csv(data: TrainingSet, fh: TextIO, header: bool = False) -> None:
    """Rows ``label,feat_1,...,feat_n`` with 17 significant digits."""
    writer = csv.writer(fh)
    if header:
        writer.writerow(["label"] + [f"feat_{j + 1}" for j in range(data.n)])
    for xi, yi in zip(data.X, data.y):
        writer.writerow([str(int(yi))] + [_format_float(v) for v in xi])


def save_csv(data: TrainingSet, path: str | Path, header: bool = False) -> None:
    with Path(path).open("w", newline="") as fh:
        write_csv(data, fh, header)


class CSVFormatError(ValueError):
    pass


def load_csv(path: str | Path, header: bool = False) -> TrainingSet:
    path = Path(path)
    rows_x: list[list[float]] = []
    rows_y: list[float] = []
    n = None
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if header and lineno == 1:
                continue
            if not row:
                continue
            if len(row) < 2:
                raise CSVFormatError(f"{path}:{lineno}: expected label and at least one feature")
            if n is None:
                n = len(row) - 1
            elif len(row) - 1 != n:
                raise CSVFormatError(f"{path}:{lineno}: expected {n + 1} fields, got {len(row)}")
            try:
                label = int(row[0])
            except ValueError:
                raise CSVFormatError(f"{path}:{lineno}: label {row[0]!r} is not an integer") from None
            if label not in (-1, 1):
                raise CSVFormatError(f"{path}:{lineno}: label must be -1 or 1, got {label}")
            try:
                feats = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise CSVFormatError(f"{path}:{lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in feats):
                raise CSVFormatError(f"{path}:{lineno}: non-finite feature value")
            rows_x.append(feats)
            rows_y.append(float(label))
    if not rows_x:
        raise CSVFormatError(f"{path}: no samples")
    return TrainingSet(np.array(rows_x), np.array(rows_y))
