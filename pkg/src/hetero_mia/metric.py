"""Per-class Gaussian-proxy 2-Wasserstein heterogeneity between labeled datasets.

Each class of each dataset is replaced by the Gaussian sharing its sample mean
and covariance; the two proxies of a class are compared with the closed-form
2-Wasserstein distance

    W2^2 = |m_a - m_b|^2 + tr(C_a + C_b - 2 (C_a^1/2 C_b C_a^1/2)^1/2)

and the per-class distances are averaged over the classes present in both
datasets.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dataset import TabularDataset
from .errors import DataError

__all__ = [
    "GaussianProxy",
    "HeterogeneityReport",
    "sqrt_spd",
    "estimate_proxy",
    "w2_gaussian",
    "w2_squared",
    "heterogeneity",
    "REG_RELATIVE",
    "REG_FLOOR",
]

logger = logging.getLogger(__name__)

REG_RELATIVE = 1e-6
REG_FLOOR = 1e-12
SYMMETRY_TOL = 1e-12


def sqrt_spd(M: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Principal square root of a symmetric positive semi-definite matrix.

    Uses ``eigh``; eigenvalues below zero (round-off) are clamped to 0.  The
    input must be symmetric within ``tol`` relative to its largest entry.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    scale = max(float(np.abs(M).max(initial=0.0)), 1.0)
    if np.abs(M - M.T).max(initial=0.0) > tol * scale:
        raise ValueError("matrix is not symmetric")
    vals, vecs = np.linalg.eigh((M + M.T) / 2)
    root = (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T
    return (root + root.T) / 2


@dataclass(frozen=True)
class GaussianProxy:
    mean: np.ndarray
    covariance: np.ndarray
    sample_count: int = 0

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        cov = np.asarray(self.covariance, dtype=np.float64)
        if cov.ndim == 0:
            cov = cov.reshape(1, 1)
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean of length {mean.size}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", (cov + cov.T) / 2)

    @property
    def dim(self) -> int:
        return self.mean.size


def estimate_proxy(ds: TabularDataset, label: int) -> GaussianProxy:
    """Moment-matched Gaussian for the rows of ``ds`` with class ``label``.

    Covariance uses the unbiased ``n - 1`` denominator and is regularized with
    ``eps * I``, ``eps = REG_RELATIVE * max(mean |diag|, REG_FLOOR)``.
    """
    if ds.d == 0:
        raise DataError("cannot estimate a Gaussian proxy in zero dimensions")
    x = ds.features[ds.labels == label]
    if len(x) < 2:
        raise DataError(f"class {label} has {len(x)} sample(s); at least 2 are needed")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (len(x) - 1)
    cov = (cov + cov.T) / 2
    eps = REG_RELATIVE * max(float(np.abs(np.diag(cov)).mean()), REG_FLOOR)
    cov[np.diag_indices_from(cov)] += eps
    return GaussianProxy(mean, cov, len(x))


def _order_key(p: GaussianProxy) -> bytes:
    return p.mean.tobytes() + p.covariance.tobytes()


def w2_squared(P: GaussianProxy, Q: GaussianProxy) -> float:
    """Squared 2-Wasserstein distance; the Bures term is clamped at 0.

    Arguments are put in a canonical byte order first so the result is
    bit-identical under swapping them.
    """
    if P.dim != Q.dim:
        raise ValueError(f"dimension mismatch: {P.dim} vs {Q.dim}")
    if np.array_equal(P.mean, Q.mean) and np.array_equal(P.covariance, Q.covariance):
        return 0.0
    if _order_key(Q) < _order_key(P):
        P, Q = Q, P
    diff = P.mean - Q.mean
    root_p = sqrt_spd(P.covariance)
    cross = sqrt_spd(root_p @ Q.covariance @ root_p, tol=1e-6)
    bures = float(np.trace(P.covariance) + np.trace(Q.covariance) - 2.0 * np.trace(cross))
    return float(diff @ diff) + max(bures, 0.0)


def w2_gaussian(P: GaussianProxy, Q: GaussianProxy) -> float:
    return float(np.sqrt(w2_squared(P, Q)))


@dataclass
class HeterogeneityReport:
    per_class_distance: dict[int, float]
    per_class_squared: dict[int, float]
    per_class_counts: dict[int, tuple[int, int]]
    average: float
    average_squared: float
    skipped_classes: dict[int, str] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    base_distance_name: str = "2-wasserstein"

    def to_dict(self) -> dict:
        return {
            "base_distance_name": self.base_distance_name,
            "average": self.average,
            "average_squared": self.average_squared,
            "per_class_distance": {str(k): v for k, v in self.per_class_distance.items()},
            "per_class_squared": {str(k): v for k, v in self.per_class_squared.items()},
            "per_class_counts": {str(k): list(v) for k, v in self.per_class_counts.items()},
            "skipped_classes": {str(k): v for k, v in self.skipped_classes.items()},
            "warnings": list(self.warnings),
        }

    def summary(self) -> str:
        parts = ", ".join(f"class {k}: {v:.4g}" for k, v in self.per_class_distance.items())
        return f"heterogeneity D = {self.average:.4g} ({parts})"


def heterogeneity(dsA: TabularDataset, dsB: TabularDataset) -> HeterogeneityReport:
    """Average per-class W2 between the Gaussian proxies of ``dsA`` and ``dsB``.

    Classes are visited in ascending label order.  A class with fewer than
    ``max(2, d // 10)`` rows in either dataset is skipped and listed in
    ``skipped_classes``; fewer than ``d`` rows only adds a warning (the
    covariance estimate is rank-deficient).
    """
    if dsA.d != dsB.d:
        raise DataError(f"feature dimension mismatch: {dsA.d} vs {dsB.d}")
    d = dsA.d
    minimum = max(2, d // 10)
    dist, sq, counts, skipped, warnings = {}, {}, {}, {}, []
    for k in range(max(dsA.n_classes, dsB.n_classes)):
        na, nb = int(np.sum(dsA.labels == k)), int(np.sum(dsB.labels == k))
        counts[k] = (na, nb)
        if na < minimum or nb < minimum:
            skipped[k] = f"too few samples ({na}, {nb}); need >= {minimum} in both"
            continue
        if na < d or nb < d:
            msg = f"class {k}: sample counts ({na}, {nb}) below dimension {d}; covariance is rank-deficient"
            warnings.append(msg)
            logger.warning(msg)
        sq[k] = w2_squared(estimate_proxy(dsA, k), estimate_proxy(dsB, k))
        dist[k] = float(np.sqrt(sq[k]))
    if not dist:
        raise DataError("no class has enough samples in both datasets")
    return HeterogeneityReport(
        per_class_distance=dist,
        per_class_squared=sq,
        per_class_counts=counts,
        average=float(np.mean(list(dist.values()))),
        average_squared=float(np.mean(list(sq.values()))),
        skipped_classes=skipped,
        warnings=warnings,
    )
