"""Regularized BFGS Hessian approximation with an eigenvalue floor ``delta``.

The update replaces the gradient variation ``r_hat`` by the corrected
variation ``r_tilde = r_hat - delta * v`` and adds ``delta * I``::

    B+ = B + r~ r~^T / (v^T r~) - (B v)(B v)^T / (v^T B v) + delta I

which satisfies the secant condition ``B+ v = r_hat`` and keeps every
eigenvalue of ``B+`` above ``delta`` whenever ``r~^T v > 0``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

RELATIVE_SKIP_THRESHOLD = 1e-10
UNREGULARIZED_SKIP_THRESHOLD = 1e-14


class CurvatureFault(ArithmeticError):
    """The curvature matrix lost positive definiteness or saw non-finite input."""


class UpdateResult(enum.Enum):
    UPDATED = "updated"
    SKIPPED = "skipped"


@dataclass(frozen=True)
class CurvaturePair:
    v: np.ndarray
    r_hat: np.ndarray
    r_tilde: np.ndarray

    @property
    def curvature(self) -> float:
        return float(self.r_tilde @ self.v)


class HessianApprox:
    """Dense symmetric curvature estimate ``B`` with floor ``delta``.

    ``delta = 0`` is only accepted with ``unregularized=True``; that mode is
    plain BFGS with an absolute skip threshold and no eigenvalue floor.
    """

    def __init__(self, B: np.ndarray, delta: float, unregularized: bool = False):
        B = np.array(B, dtype=float, copy=True)
        if B.ndim != 2 or B.shape[0] != B.shape[1]:
            raise ValueError("B must be a square matrix")
        if unregularized:
            if delta != 0:
                raise ValueError("unregularized mode requires delta == 0")
        elif not delta > 0:
            raise ValueError(f"delta must be > 0, got {delta}")
        self.B = B
        self.delta = float(delta)
        self.unregularized = unregularized

    @classmethod
    def init(cls, n: int, delta: float, unregularized: bool = False) -> "HessianApprox":
        """``B0 = max(1, 2 delta) I``, strictly above the floor."""
        if n < 1:
            raise ValueError(f"dimension must be >= 1, got {n}")
        if not unregularized and not delta > 0:
            raise ValueError(f"delta must be > 0, got {delta}")
        return cls(max(1.0, 2.0 * delta) * np.eye(n), delta, unregularized=unregularized)

    @property
    def n(self) -> int:
        return self.B.shape[0]

    def copy(self) -> "HessianApprox":
        return HessianApprox(self.B, self.delta, self.unregularized)

    def skip_threshold(self, v: np.ndarray) -> float:
        if self.unregularized:
            return UNREGULARIZED_SKIP_THRESHOLD
        return RELATIVE_SKIP_THRESHOLD * float(v @ v)

    def corrected_pair(self, v, r_hat) -> CurvaturePair:
        v = np.asarray(v, dtype=float)
        r_hat = np.asarray(r_hat, dtype=float)
        return CurvaturePair(v, r_hat, r_hat - self.delta * v)

    def update(self, v, r_hat) -> UpdateResult:
        """Apply the regularized BFGS update in place, or skip it.

        The update is skipped (``B`` untouched) when ``v == 0`` or when the
        corrected curvature ``r~^T v`` does not exceed the skip threshold.
        """
        pair = self.corrected_pair(v, r_hat)
        v, r_tilde = pair.v, pair.r_tilde
        if v.shape != (self.n,) or r_tilde.shape != (self.n,):
            raise ValueError(f"expected vectors of length {self.n}")
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(pair.r_hat))):
            raise CurvatureFault("non-finite curvature pair")
        if not np.any(v):
            return UpdateResult.SKIPPED
        vr = float(v @ r_tilde)
        if not vr > self.skip_threshold(v):
            return UpdateResult.SKIPPED
        Bv = self.B @ v
        vBv = float(v @ Bv)
        if not vBv > 0:
            raise CurvatureFault(f"v^T B v = {vBv} is not positive")
        B = self.B + np.outer(r_tilde, r_tilde) / vr - np.outer(Bv, Bv) / vBv
        if self.delta:
            B[np.diag_indices_from(B)] += self.delta
        B = 0.5 * (B + B.T)
        if not np.all(np.isfinite(B)):
            raise CurvatureFault("curvature update produced non-finite entries")
        self.B = B
        return UpdateResult.UPDATED

    def solve(self, s) -> np.ndarray:
        """``B^{-1} s`` through a Cholesky factorization."""
        try:
            factor = scipy.linalg.cho_factor(self.B, lower=True, check_finite=True)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise CurvatureFault(f"Cholesky factorization failed: {exc}") from exc
        return scipy.linalg.cho_solve(factor, np.asarray(s, dtype=float))

    def descent_direction(self, gamma: float, s) -> np.ndarray:
        """``(B^{-1} + gamma I) s``."""
        if gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {gamma}")
        s = np.asarray(s, dtype=float)
        if not np.any(s):
            return np.zeros_like(s)
        return self.solve(s) + gamma * s

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.B)[0])

    def dump(self, path: str | Path) -> None:
        """Write ``B`` row-major as decimal CSV for auditing."""
        np.savetxt(path, self.B, delimiter=",", fmt="%.17g")


def init(n: int, delta: float, unregularized: bool = False) -> HessianApprox:
    return HessianApprox.init(n, delta, unregularized=unregularized)


def update(H: HessianApprox, v, r_hat) -> UpdateResult:
    return H.update(v, r_hat)


def descent_direction(H: HessianApprox, gamma: float, s) -> np.ndarray:
    return H.descent_direction(gamma, s)


def min_eigenvalue(H: HessianApprox) -> float:
    return H.min_eigenvalue()
