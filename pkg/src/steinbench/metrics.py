"""Reference quantities for validating discrepancy values."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DiffusionSpec, TargetModel, WeightedSample
from .operators import drift_general


def _check_1d(s: WeightedSample):
    if s.d != 1:
        raise ValueError(f"expected a one-dimensional sample, got d = {s.d}")


def wasserstein_1d(s1: WeightedSample, s2: WeightedSample) -> float:
    """Exact W1 = int |F1 - F2| for finitely supported 1-D measures."""
    _check_1d(s1)
    _check_1d(s2)
    x1, x2 = s1.points[:, 0], s2.points[:, 0]
    grid = np.union1d(x1, x2)
    if grid.size < 2:
        return 0.0
    F1 = _cdf(x1, s1.weights, grid)
    F2 = _cdf(x2, s2.weights, grid)
    return float(np.sum(np.abs(F1 - F2)[:-1] * np.diff(grid)))


def _cdf(x, w, grid):
    order = np.argsort(x, kind="stable")
    cw = np.concatenate([[0.0], np.cumsum(w[order])])
    return cw[np.searchsorted(x[order], grid, side="right")]


# ---------------------------------------------------------------------------
# couplings
# ---------------------------------------------------------------------------
def quantile_coupling(sq: WeightedSample, sp: WeightedSample):
    """Monotone coupling of two 1-D weighted samples.

    Returns index arrays (iq, ip) and the mass carried by each pair.
    """
    _check_1d(sq)
    _check_1d(sp)
    oq = np.argsort(sq.points[:, 0], kind="stable")
    op = np.argsort(sp.points[:, 0], kind="stable")
    cq = np.cumsum(sq.weights[oq])
    cp = np.cumsum(sp.weights[op])
    cq[-1] = cp[-1] = 1.0
    cuts = np.union1d(cq, cp)
    mass = np.diff(np.concatenate([[0.0], cuts]))
    keep = mass > 0
    cuts, mass = cuts[keep], mass[keep]
    # pair k covers (cuts[k-1], cuts[k]]; locate its owner on each side
    iq = oq[np.minimum(np.searchsorted(cq, cuts, side="left"), len(oq) - 1)]
    ip = op[np.minimum(np.searchsorted(cp, cuts, side="left"), len(op) - 1)]
    return iq, ip, mass


def greedy_coupling(sq: WeightedSample, sp: WeightedSample):
    """Greedy nearest-pair transport in the l1 distance.

    Pairs are visited by increasing distance and each moves as much mass as
    both endpoints still hold.  For equal-size uniform samples this is the
    greedy nearest-neighbour matching.
    """
    if sq.d != sp.d:
        raise ValueError(f"dimension mismatch: {sq.d} vs {sp.d}")
    D = np.abs(sq.points[:, None, :] - sp.points[None, :, :]).sum(axis=2)
    nq, npp = D.shape
    flat = np.argsort(D, axis=None, kind="stable")
    left_q = sq.weights.astype(float).copy()
    left_p = sp.weights.astype(float).copy()
    iq, ip, mass = [], [], []
    open_q, open_p = nq, npp
    for f in flat:
        i, k = divmod(int(f), npp)
        if left_q[i] <= 0 or left_p[k] <= 0:
            continue
        mv = min(left_q[i], left_p[k])
        iq.append(i)
        ip.append(k)
        mass.append(mv)
        left_q[i] -= mv
        left_p[k] -= mv
        # exhaust whichever side is (numerically) done
        if left_q[i] <= 1e-15:
            left_q[i] = 0.0
            open_q -= 1
        if left_p[k] <= 1e-15:
            left_p[k] = 0.0
            open_p -= 1
        if open_q == 0 or open_p == 0:
            break
    return np.array(iq, dtype=np.int64), np.array(ip, dtype=np.int64), np.array(mass)


def coupled_upper_bound(
    sample_q: WeightedSample,
    sample_p: WeightedSample,
    target: TargetModel,
    spec: DiffusionSpec,
    coupling: str = "auto",
) -> float:
    """Upper bound on the l1 Stein discrepancy of ``sample_q`` under one coupling.

    E[2|b(X)-b(Z)|_1 + |m(X)-m(Z)|_1 + (2|b(Z)|_1 + |m(Z)|_1) min(|X-Z|_1, 2)]
    with X from ``sample_q`` and Z from ``sample_p`` (a stand-in for P).  The
    matrix norm is the entrywise l1 norm, dual to entrywise bounds on grad g.
    ``coupling`` is ``quantile`` (d = 1), ``greedy`` or ``auto``.
    """
    if sample_q.d != sample_p.d:
        raise ValueError(f"dimension mismatch: {sample_q.d} vs {sample_p.d}")
    if coupling == "auto":
        coupling = "quantile" if sample_q.d == 1 else "greedy"
    if coupling == "quantile":
        iq, ip, w = quantile_coupling(sample_q, sample_p)
    elif coupling == "greedy":
        iq, ip, w = greedy_coupling(sample_q, sample_p)
    else:
        raise ValueError(f"unknown coupling {coupling!r}")
    oq = drift_general(spec, target, sample_q.points)
    op = drift_general(spec, target, sample_p.points)
    bx, mx = oq.b_vals[iq], oq.m_vals[iq]
    bz, mz = op.b_vals[ip], op.m_vals[ip]
    dist = np.abs(sample_q.points[iq] - sample_p.points[ip]).sum(axis=1)
    term = (
        2 * np.abs(bx - bz).sum(axis=1)
        + np.abs(mx - mz).sum(axis=(1, 2))
        + (2 * np.abs(bz).sum(axis=1) + np.abs(mz).sum(axis=(1, 2))) * np.minimum(dist, 2.0)
    )
    return float(np.dot(w, term))


# ---------------------------------------------------------------------------
# rate fitting
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class TrendFit:
    slope: float
    intercept: float
    residual_rms: float
    sizes: tuple

    def predict(self, n) -> np.ndarray:
        return np.exp(self.intercept) * np.asarray(n, dtype=float) ** self.slope


def fit_rate(sizes, values) -> TrendFit:
    """Least squares fit of log S = intercept + slope log n."""
    n = np.asarray(sizes, dtype=float)
    s = np.asarray(values, dtype=float)
    if n.shape != s.shape or n.ndim != 1:
        raise ValueError("sizes and values must be 1-D arrays of equal length")
    if n.size < 3:
        raise ValueError("need at least 3 sample sizes")
    if np.any(np.diff(n) <= 0) or np.any(n <= 0):
        raise ValueError("sample sizes must be positive and strictly increasing")
    if np.any(~(s > 0)):
        raise ValueError("discrepancy values must be positive")
    A = np.column_stack([np.ones_like(n), np.log(n)])
    coef, *_ = np.linalg.lstsq(A, np.log(s), rcond=None)
    resid = np.log(s) - A @ coef
    return TrendFit(float(coef[1]), float(coef[0]), float(np.sqrt(np.mean(resid**2))), tuple(int(v) for v in n))
