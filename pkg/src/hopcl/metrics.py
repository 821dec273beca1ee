"""Continual-learning metrics from a T x T accuracy matrix, plus the
1-D Wasserstein moment-distance diagnostic.

With a[i][j] the accuracy on test set j after training stage i
(0-indexed, T stages), this library defines:

    mAcc = mean_j a[T-1][j]
    Pla  = mean_t a[t][t]
    BwT  = mean_{j < T-1} (a[T-1][j] - a[j][j])
    Forg = mean_{j < T-1} (max_{j <= i <= T-2} a[i][j] - a[T-1][j])
    FwT  = mean of the strict upper triangle (no random-baseline correction)

Forg can be negative when the final stage beats every earlier evaluation
of a column (negative forgetting); under strict task isolation it is 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, SizeError
from .pooling import central_moments


@dataclass
class MetricsReport:
    macc: float
    pla: float
    bwt: float
    forg: float
    fwt: float
    mf1: float | None = None
    per_problem_forgetting: list[float] = field(default_factory=list)
    per_problem_plasticity: list[float] = field(default_factory=list)

    def as_dict(self) -> dict:
        out = {
            "mAcc": self.macc, "Pla": self.pla, "BwT": self.bwt,
            "Forg": self.forg, "FwT": self.fwt,
            "per_problem_forgetting": list(self.per_problem_forgetting),
            "per_problem_plasticity": list(self.per_problem_plasticity),
        }
        if self.mf1 is not None:
            out["MF1"] = self.mf1
        return out


def _as_square(a) -> np.ndarray:
    m = np.asarray(getattr(a, "values", a), dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise SizeError(f"accuracy matrix must be square, got {m.shape}")
    return m


def compute_metrics(a, mf1_matrix=None) -> MetricsReport:
    """Metric suite of an accuracy matrix; needs at least 2 stages."""
    m = _as_square(a)
    t = m.shape[0]
    if t < 2:
        raise SizeError("metrics need a matrix with T >= 2")
    macc = float(m[-1].mean())
    pla = float(np.diag(m).mean())
    bwt = float((m[-1, : t - 1] - np.diag(m)[: t - 1]).mean())
    per_forg = [float(m[j : t - 1, j].max() - m[-1, j]) for j in range(t - 1)]
    forg = float(np.mean(per_forg))
    fwt = float(m[np.triu_indices(t, k=1)].mean())
    mf1 = None
    if mf1_matrix is not None:
        f = _as_square(mf1_matrix)
        if f.shape != m.shape:
            raise SizeError("MF1 matrix shape differs from the accuracy matrix")
        mf1 = float(f[-1].mean())
    return MetricsReport(
        macc=macc, pla=pla, bwt=bwt, forg=forg, fwt=fwt, mf1=mf1,
        per_problem_forgetting=per_forg,
        per_problem_plasticity=[float(x) for x in np.diag(m)],
    )


def wasserstein_1d(u, v) -> float:
    """W1 between the empirical distributions of two sample vectors.

    Equal sizes reduce to the mean absolute difference of sorted samples;
    unequal sizes integrate |F_u^-1 - F_v^-1| with the piecewise-constant
    quantile construction.
    """
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.size == 0 or v.size == 0:
        raise DataError("wasserstein_1d needs non-empty samples")
    us = np.sort(u)
    vs = np.sort(v)
    if us.size == vs.size:
        return float(np.abs(us - vs).mean())
    grid = np.sort(np.concatenate([us, vs]))
    deltas = np.diff(grid)
    u_cdf = np.searchsorted(us, grid[:-1], side="right") / us.size
    v_cdf = np.searchsorted(vs, grid[:-1], side="right") / vs.size
    return float(np.sum(np.abs(u_cdf - v_cdf) * deltas))


@dataclass
class MomentDistance:
    order: int
    mean: float
    std: float


def moment_distance_report(problem_samples, max_order: int) -> list[MomentDistance]:
    """Cross-problem Wasserstein distances of per-sample moment features.

    problem_samples: one list of EmbeddedSequence per problem. For each
    moment order k, every sample is reduced to its per-channel k-th
    central moment; the 1-D W1 distance is averaged over channels for
    every problem pair, and mean/std are reported over the pairs.
    """
    if len(problem_samples) < 2:
        raise DataError("need at least two problems to compare")
    if max_order < 1:
        raise DataError("max_order must be >= 1")
    features = []  # per problem: [max_order, N, Q]
    for samples in problem_samples:
        if not samples:
            raise DataError("a problem has no samples")
        q = samples[0].channels
        feats = np.empty((max_order, len(samples), q))
        for i, s in enumerate(samples):
            moments = central_moments(s.tokens.astype(np.float64), max_order)
            feats[:, i, :] = moments.reshape(max_order, q)
        features.append(feats)
    report = []
    n = len(features)
    for k in range(max_order):
        pair_dists = []
        for i in range(n):
            for j in range(i + 1, n):
                q = features[i].shape[2]
                chan = [wasserstein_1d(features[i][k, :, c], features[j][k, :, c])
                        for c in range(q)]
                pair_dists.append(float(np.mean(chan)))
        report.append(MomentDistance(order=k + 1, mean=float(np.mean(pair_dists)),
                                     std=float(np.std(pair_dists))))
    return report
