"""Graph Stein discrepancy as d decoupled coordinate linear programs.

For coordinate j the unknowns are ``psi[i] = g_j(x_i)`` and
``Psi[k, i] = d g_j / d x_k (x_i)``, laid out as one vector
``[psi (n), Psi[0] (n), ..., Psi[d-1] (n)]``.  The program maximizes

    sum_i q_i (2 b_j(x_i) psi[i] + sum_k m_jk(x_i) Psi[k, i])

subject to |psi| <= c1, |Psi| <= c2 and, for every graph edge (i, l) with
w = |x_i - x_l|_1 and D = x_i - x_l,

    |psi[i] - psi[l]|                   <= c2 w
    |Psi[k, i] - Psi[k, l]|             <= c3 w          (each k)
    |psi[i] - psi[l] - <Psi[:, i], D>|  <= c3 w^2 / 2
    |psi[i] - psi[l] - <Psi[:, l], D>|  <= c3 w^2 / 2

Each absolute value is a single ranged row for the simplex.
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .core import ConfigError, DiffusionSpec, SteinbenchError, SteinWitness, TargetModel, WeightedSample, format_float
from .operators import OperatorData, apply_operator, drift_general
from .simplex import OPTIMAL, SimplexError, solve_bounded_lp
from .spanner import SpannerGraph, build_greedy_spanner, build_sorted_1d_spanner

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-9
GAP_TOL = 1e-7
WITNESS_TOL = 1e-8
BACKENDS = ("simplex", "highs")
# working tolerances of the built-in simplex; the Harris ratio test may
# overshoot bounds by the feasibility tolerance, so it is kept well inside
# the certified residual
SIMPLEX_FEAS_TOL = 1e-10
SIMPLEX_OPT_TOL = 1e-9


class SolverError(SteinbenchError, RuntimeError):
    """A coordinate program could not be solved to a certified optimum."""


@dataclass(frozen=True, eq=False)
class CoordinateLP:
    """Ranged-row form of one coordinate program (maximization)."""

    j: int
    n: int
    d: int
    c: np.ndarray
    R: sp.csr_matrix
    row_lo: np.ndarray
    row_hi: np.ndarray
    col_lo: np.ndarray
    col_hi: np.ndarray
    scales: tuple
    # edge data, kept for the independent witness check
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    diff: np.ndarray

    @property
    def n_vars(self) -> int:
        return self.n * (self.d + 1)

    @property
    def n_rows(self) -> int:
        return self.R.shape[0]

    @property
    def n_inequalities(self) -> int:
        """Number of one-sided inequalities the ranged rows stand for."""
        return 2 * self.n_rows

    def psi_index(self, i):
        return i

    def Psi_index(self, k, i):
        return self.n + k * self.n + i


def _check_scales(scales):
    sc = tuple(float(s) for s in scales)
    if len(sc) != 3 or not all(np.isfinite(s) and s > 0 for s in sc):
        raise ConfigError(f"scales must be three positive numbers, got {scales}")
    return sc


def build_coordinate_lp(
    j: int,
    sample: WeightedSample,
    op: OperatorData,
    graph: SpannerGraph,
    scales: Sequence[float] = (1.0, 1.0, 1.0),
    weights=None,
) -> CoordinateLP:
    """Assemble the program for coordinate ``j``.

    ``weights`` replaces the sample weights in the objective; it exists so
    tests can check linearity in q with unnormalized weights.
    """
    c1, c2, c3 = _check_scales(scales)
    X = np.asarray(sample.points, dtype=float)
    n, d = X.shape
    if op.b_vals.shape != (n, d):
        raise ValueError("operator data do not match the sample")
    if graph.n != n:
        raise ValueError("graph does not match the sample")
    if not 0 <= j < d:
        raise ValueError(f"coordinate {j} out of range for d = {d}")
    q = np.asarray(sample.weights if weights is None else weights, dtype=float)
    nv = n * (d + 1)

    c = np.empty(nv)
    c[:n] = q * 2.0 * op.b_vals[:, j]
    for k in range(d):
        c[n + k * n : n + (k + 1) * n] = q * op.m_vals[:, j, k]
    col_lo = np.concatenate([np.full(n, -c1), np.full(d * n, -c2)])
    col_hi = -col_lo

    src, dst, w = graph.src, graph.dst, graph.weight
    E = src.size
    D = X[src] - X[dst]
    per_edge = d + 3
    m = E * per_edge
    rows, cols, vals = [], [], []
    lo = np.empty(m)
    base = np.arange(E) * per_edge

    def add(r, cidx, v):
        rows.append(r)
        cols.append(cidx)
        vals.append(v)

    # psi Lipschitz
    add(base, src, np.ones(E))
    add(base, dst, -np.ones(E))
    lo[base] = c2 * w
    # Psi Lipschitz, one row per k
    for k in range(d):
        r = base + 1 + k
        add(r, n + k * n + src, np.ones(E))
        add(r, n + k * n + dst, -np.ones(E))
        lo[r] = c3 * w
    # Taylor remainders anchored at x_i, then at x_l
    for off, anchor in ((d + 1, src), (d + 2, dst)):
        r = base + off
        add(r, src, np.ones(E))
        add(r, dst, -np.ones(E))
        for k in range(d):
            add(r, n + k * n + anchor, -D[:, k])
        lo[r] = c3 * 0.5 * w * w
    if E:
        R = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, nv)
        )
    else:
        R = sp.csr_matrix((0, nv))
    R.sum_duplicates()
    R.sort_indices()
    return CoordinateLP(
        j=j, n=n, d=d, c=c, R=R, row_lo=-lo, row_hi=lo.copy(), col_lo=col_lo, col_hi=col_hi,
        scales=(c1, c2, c3), src=src, dst=dst, weight=w, diff=D,
    )


@dataclass
class CoordinateSolution:
    j: int
    tau: float
    psi: np.ndarray
    Psi: np.ndarray
    status: str
    residual: float
    gap: float
    iterations: int
    stats: dict = field(default_factory=dict)


def _weak_dual_bound(lp: CoordinateLP, y):
    # valid upper bound on the maximum for any row multipliers y
    dvec = lp.c - lp.R.T @ y
    return float(
        np.sum(np.maximum(y * lp.row_hi, y * lp.row_lo))
        + np.sum(np.maximum(dvec * lp.col_hi, dvec * lp.col_lo))
    )


def _solve_highs(lp: CoordinateLP):
    from scipy.optimize import linprog

    A = sp.vstack([lp.R, -lp.R]).tocsr() if lp.n_rows else None
    b = np.concatenate([lp.row_hi, -lp.row_lo]) if lp.n_rows else None
    res = linprog(
        -lp.c, A_ub=A, b_ub=b, bounds=np.column_stack([lp.col_lo, lp.col_hi]), method="highs",
        options={"primal_feasibility_tolerance": SIMPLEX_FEAS_TOL, "dual_feasibility_tolerance": SIMPLEX_OPT_TOL},
    )
    if res.status != 0:
        raise SolverError(f"HiGHS failed on coordinate {lp.j}: {res.message}")
    z = res.x
    if lp.n_rows:
        mu = res.ineqlin.marginals
        y = -(mu[: lp.n_rows] - mu[lp.n_rows :])
        bound = min(_weak_dual_bound(lp, y), _weak_dual_bound(lp, -y))
    else:
        bound = _weak_dual_bound(lp, np.zeros(0))
    return z, bound, int(getattr(res, "nit", 0)), {}


def solve_lp(lp: CoordinateLP, backend: str = "simplex", pricing: str = "devex") -> CoordinateSolution:
    """Solve one coordinate program and certify the optimum.

    The solution must be primal feasible within 1e-9 and its objective
    within a relative 1e-7 of a weak-duality bound, otherwise
    :class:`SolverError` is raised.
    """
    if backend == "simplex":
        try:
            res = solve_bounded_lp(
                lp.c, lp.R, lp.row_lo, lp.row_hi, lp.col_lo, lp.col_hi,
                feas_tol=SIMPLEX_FEAS_TOL, opt_tol=SIMPLEX_OPT_TOL, pricing=pricing,
            )
        except SimplexError as exc:
            raise SolverError(f"coordinate {lp.j}: {exc}") from None
        if res.status != OPTIMAL:
            raise SolverError(f"coordinate {lp.j}: simplex stopped with status {res.status}")
        z, bound, iters, stats = res.x, res.dual_bound, res.iterations, res.stats
    elif backend == "highs":
        z, bound, iters, stats = _solve_highs(lp)
    else:
        raise ConfigError(f"unknown LP backend {backend!r}")
    z = np.clip(z, lp.col_lo, lp.col_hi)
    act = lp.R @ z
    residual = float(np.max(np.maximum(act - lp.row_hi, lp.row_lo - act), initial=0.0))
    tau = float(lp.c @ z)
    gap = (bound - tau) / max(1.0, abs(tau))
    if residual > RESIDUAL_TOL or gap > GAP_TOL:
        raise SolverError(
            f"coordinate {lp.j}: uncertified solution (residual {residual:.3g}, relative gap {gap:.3g})"
        )
    n, d = lp.n, lp.d
    return CoordinateSolution(
        j=lp.j,
        tau=tau,
        psi=z[:n].copy(),
        Psi=z[n:].reshape(d, n).copy(),
        status=OPTIMAL,
        residual=residual,
        gap=gap,
        iterations=iters,
        stats=stats,
    )


def witness_violation(lp: CoordinateLP, psi, Psi) -> float:
    """Largest constraint violation of (psi, Psi), computed from the edge
    list directly rather than from the assembled matrix."""
    c1, c2, c3 = lp.scales
    psi = np.asarray(psi, dtype=float)
    Psi = np.asarray(Psi, dtype=float)
    worst = max(
        float(np.max(np.abs(psi), initial=0.0) - c1),
        float(np.max(np.abs(Psi), initial=0.0) - c2),
        0.0,
    )
    if lp.src.size == 0:
        return worst
    i, l, w, D = lp.src, lp.dst, lp.weight, lp.diff
    dpsi = psi[i] - psi[l]
    worst = max(worst, float(np.max(np.abs(dpsi) - c2 * w)))
    worst = max(worst, float(np.max(np.abs(Psi[:, i] - Psi[:, l]) - c3 * w)))
    half = 0.5 * c3 * w * w
    for anchor in (i, l):
        tay = dpsi - np.einsum("ke,ek->e", Psi[:, anchor], D)
        worst = max(worst, float(np.max(np.abs(tay) - half)))
    return worst


def objective_value(lp: CoordinateLP, psi, Psi) -> float:
    z = np.concatenate([np.asarray(psi, float), np.asarray(Psi, float).reshape(-1)])
    return float(lp.c @ z)


# ---------------------------------------------------------------------------
# full discrepancy
# ---------------------------------------------------------------------------
def default_spanner(sample: WeightedSample, t: float = 2.0) -> SpannerGraph:
    if sample.d == 1:
        return build_sorted_1d_spanner(sample)
    return build_greedy_spanner(sample, t)


def spanner_stein_discrepancy(
    sample: WeightedSample,
    target: TargetModel,
    spec: DiffusionSpec,
    t: float = 2.0,
    scales: Sequence[float] = (1.0, 1.0, 1.0),
    graph: Optional[SpannerGraph] = None,
    op: Optional[OperatorData] = None,
    threads: int = 1,
    backend: str = "simplex",
    pricing: str = "devex",
    weights=None,
    check: bool = True,
) -> SteinWitness:
    """Spanner Stein discrepancy of ``sample`` for ``target`` and ``spec``.

    The graph defaults to the sorted chain in one dimension and the greedy
    t-spanner otherwise.  The coordinate programs run on up to ``threads``
    worker threads; results are merged by coordinate index, so the output
    does not depend on the thread count.  With ``check`` the witness is
    re-validated against every constraint.
    """
    if target.dim != sample.d:
        raise ConfigError(f"target dimension {target.dim} != sample dimension {sample.d}")
    if spec.dim != sample.d:
        raise ConfigError(f"diffusion dimension {spec.dim} != sample dimension {sample.d}")
    scales = _check_scales(scales)
    if graph is None:
        graph = default_spanner(sample, t)
    if op is None:
        op = drift_general(spec, target, sample.points)
    d = sample.d

    def work(j):
        lp = build_coordinate_lp(j, sample, op, graph, scales, weights)
        sol = solve_lp(lp, backend, pricing)
        if check:
            viol = witness_violation(lp, sol.psi, sol.Psi)
            if viol > WITNESS_TOL:
                raise SolverError(f"coordinate {j}: witness violates a constraint by {viol:.3g}")
            obj = objective_value(lp, sol.psi, sol.Psi)
            if abs(obj - sol.tau) > WITNESS_TOL:
                raise SolverError(f"coordinate {j}: objective mismatch {obj!r} vs {sol.tau!r}")
        logger.info("coordinate %d: tau=%.10g iterations=%d", j, sol.tau, sol.iterations)
        return sol

    threads = max(1, min(int(threads), d))
    if threads == 1:
        sols = [work(j) for j in range(d)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            sols = list(pool.map(work, range(d)))
    sols.sort(key=lambda s: s.j)
    psi = np.vstack([s.psi for s in sols])
    Psi = np.stack([s.Psi for s in sols])
    h_star = apply_operator(op, psi.T, np.transpose(Psi, (2, 0, 1)))
    taus = np.array([s.tau for s in sols])
    info = {
        "n_edges": graph.n_edges,
        "iterations": [s.iterations for s in sols],
        "residual": max(s.residual for s in sols),
        "gap": max(s.gap for s in sols),
        "backend": backend,
    }
    return SteinWitness(float(taus.sum()), taus, psi, Psi, h_star, info)


@dataclass(frozen=True)
class EquivalenceReport:
    S: float
    S_scaled: float
    lower: float
    upper: float

    @property
    def passed(self) -> bool:
        return self.lower - 1e-6 <= self.S_scaled <= self.upper + 1e-6


def nonuniform_equivalence_check(
    sample: WeightedSample, target: TargetModel, spec: DiffusionSpec, scales, t: float = 2.0, **kw
) -> EquivalenceReport:
    """Compare the discrepancy under ``scales`` with the uniform one on the
    same graph: min(c) S <= S_c <= max(c) S."""
    sc = _check_scales(scales)
    graph = default_spanner(sample, t)
    op = drift_general(spec, target, sample.points)
    S = spanner_stein_discrepancy(sample, target, spec, graph=graph, op=op, **kw).value
    Sc = spanner_stein_discrepancy(sample, target, spec, scales=sc, graph=graph, op=op, **kw).value
    return EquivalenceReport(S, Sc, min(sc) * S, max(sc) * S)


# ---------------------------------------------------------------------------
# sparse triplet dump
# ---------------------------------------------------------------------------
def write_lp_triplets(lp: CoordinateLP, path) -> None:
    """Dump a coordinate program as plain text.

    Format, one record per line, whitespace separated, 0-based indices::

        LP <n_vars> <n_rows> <nnz> maximize
        C <col> <objective coefficient>
        B <col> <lower> <upper>
        R <row> <lower> <upper>
        A <row> <col> <value>

    ``C`` lines are only written for nonzero coefficients.
    """
    R = lp.R.tocoo()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"LP {lp.n_vars} {lp.n_rows} {R.nnz} maximize\n")
        for k in np.flatnonzero(lp.c):
            fh.write(f"C {k} {format_float(lp.c[k])}\n")
        for k in range(lp.n_vars):
            fh.write(f"B {k} {format_float(lp.col_lo[k])} {format_float(lp.col_hi[k])}\n")
        for r in range(lp.n_rows):
            fh.write(f"R {r} {format_float(lp.row_lo[r])} {format_float(lp.row_hi[r])}\n")
        for r, k, v in zip(R.row, R.col, R.data):
            fh.write(f"A {r} {k} {format_float(v)}\n")


def read_lp_triplets(path):
    """Inverse of :func:`write_lp_triplets`: (c, R, row_lo, row_hi, col_lo, col_hi)."""
    with open(path, "r", encoding="utf-8") as fh:
        head = fh.readline().split()
        if len(head) != 5 or head[0] != "LP":
            raise ValueError(f"{path}: not an LP triplet file")
        nv, m, nnz = int(head[1]), int(head[2]), int(head[3])
        c = np.zeros(nv)
        col_lo, col_hi = np.zeros(nv), np.zeros(nv)
        row_lo, row_hi = np.zeros(m), np.zeros(m)
        ri, ci, vv = [], [], []
        for line in fh:
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "C":
                c[int(tok[1])] = float(tok[2])
            elif tok[0] == "B":
                col_lo[int(tok[1])], col_hi[int(tok[1])] = float(tok[2]), float(tok[3])
            elif tok[0] == "R":
                row_lo[int(tok[1])], row_hi[int(tok[1])] = float(tok[2]), float(tok[3])
            elif tok[0] == "A":
                ri.append(int(tok[1]))
                ci.append(int(tok[2]))
                vv.append(float(tok[3]))
    if len(vv) != nnz:
        raise ValueError(f"{path}: expected {nnz} matrix entries, found {len(vv)}")
    R = sp.csr_matrix((vv, (ri, ci)), shape=(m, nv))
    return c, R, row_lo, row_hi, col_lo, col_hi


def default_threads() -> int:
    return os.cpu_count() or 1
