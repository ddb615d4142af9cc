"""Diffusion Stein operator coefficients and their action on test functions.

The operator is used in expanded form

    (T g)(x) = 2 <b(x), g(x)> + <m(x), grad g(x)>,   m = a + c,
    b(x) = (m(x) grad log p(x) + div m(x)) / 2,

where ``div m`` is the vector of row divergences, ``(div m)_j = sum_k d m_jk / d x_k``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ConfigError, DiffusionSpec, TargetModel, as_matrix, require


@dataclass(frozen=True, eq=False)
class OperatorData:
    """Drift ``b_vals`` (n x d) and ``m_vals`` (n x d x d) at the sample points."""

    b_vals: np.ndarray
    m_vals: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.b_vals, dtype=float)
        m = np.asarray(self.m_vals, dtype=float)
        if b.ndim != 2 or m.shape != (b.shape[0], b.shape[1], b.shape[1]):
            raise ValueError(f"inconsistent operator shapes {b.shape} and {m.shape}")
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(m))):
            raise ValueError("operator coefficients are not finite")
        object.__setattr__(self, "b_vals", b)
        object.__setattr__(self, "m_vals", m)

    @property
    def n(self) -> int:
        return self.b_vals.shape[0]

    @property
    def d(self) -> int:
        return self.b_vals.shape[1]


def _points(points, dim):
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None] if dim == 1 else X[None, :]
    if X.ndim != 2 or X.shape[1] != dim:
        raise ValueError(f"points of shape {np.shape(points)} do not match dimension {dim}")
    return X


def drift_constant(m, target: TargetModel, points) -> OperatorData:
    """Coefficients for a constant m: b = m score / 2."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    d = target.dim
    if m.shape != (d, d):
        raise ValueError(f"m has shape {m.shape}, target dimension is {d}")
    X = _points(points, d)
    S = target.score(X)
    if np.array_equal(m, np.eye(d)):
        b = 0.5 * S
    else:
        b = 0.5 * (S @ m.T)
    return OperatorData(b, np.broadcast_to(m, (X.shape[0], d, d)).copy())


def fd_divergence(m_fn, X, h_scale=1e-5):
    """Central difference row divergence of a matrix field ``m_fn``.

    Step per point is ``h_scale * (1 + max|x|)``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, d = X.shape
    out = np.zeros((n, d))
    h = h_scale * (1.0 + np.max(np.abs(X), axis=1))
    for k in range(d):
        E = np.zeros_like(X)
        E[:, k] = h
        diff = (np.asarray(m_fn(X + E)) - np.asarray(m_fn(X - E))) / (2 * h)[:, None, None]
        out += diff[:, :, k]
    return out


def drift_general(spec: DiffusionSpec, target: TargetModel, points, fd_fallback: bool = False) -> OperatorData:
    """Coefficients for any diffusion: b = (m score + div m) / 2.

    Constant specs are delegated to :func:`drift_constant`.  Non-constant
    specs need an analytic ``div_m_fn`` unless ``fd_fallback`` is set.
    """
    if spec.dim != target.dim:
        raise ValueError(f"diffusion dimension {spec.dim} != target dimension {target.dim}")
    if spec.constant:
        return drift_constant(spec.m_const, target, points)
    X = _points(points, target.dim)
    M = spec.m(X)
    if spec.div_m_fn is not None:
        div = np.asarray(spec.div_m_fn(X), dtype=float)
    elif fd_fallback:
        div = fd_divergence(spec.m, X)
    else:
        raise ConfigError(f"diffusion {spec.name} is not constant and has no divergence")
    S = target.score(X)
    b = 0.5 * (np.einsum("ijk,ik->ij", M, S) + div)
    return OperatorData(b, M)


def apply_operator(op: OperatorData, g_vals, grad_g_vals) -> np.ndarray:
    """(T g)(x_i) from g(x_i) (n x d) and grad g(x_i) (n x d x d).

    ``grad_g_vals[i, j, k]`` is the derivative of g_j along x_k.
    """
    g = np.asarray(g_vals, dtype=float)
    G = np.asarray(grad_g_vals, dtype=float)
    if g.shape != op.b_vals.shape or G.shape != op.m_vals.shape:
        raise ValueError(f"shapes {g.shape}, {G.shape} do not match operator {op.b_vals.shape}")
    return 2.0 * np.einsum("ij,ij->i", op.b_vals, g) + np.einsum("ijk,ijk->i", op.m_vals, G)


@dataclass(frozen=True)
class MeanZeroResult:
    estimate: float
    stderr: float
    n_mc: int

    @property
    def passed(self) -> bool:
        return abs(self.estimate) <= 4.0 * self.stderr


def mean_zero_check(target: TargetModel, spec: DiffusionSpec, g, grad_g, n_mc: int = 100_000, seed=0) -> MeanZeroResult:
    """Monte Carlo estimate of E_P[(T g)(Z)] with exact draws from P.

    ``g`` maps an (n, d) batch to (n, d) and ``grad_g`` to (n, d, d).
    """
    if target.sampler is None:
        raise ValueError(f"target {target.name} has no exact sampler")
    rng = np.random.default_rng(seed)
    Z = np.asarray(target.sampler(n_mc, rng), dtype=float).reshape(n_mc, target.dim)
    op = drift_general(spec, target, Z)
    h = apply_operator(op, g(Z), grad_g(Z))
    return MeanZeroResult(float(h.mean()), float(h.std(ddof=1) / np.sqrt(n_mc)), n_mc)


# ---------------------------------------------------------------------------
# prebuilt diffusions
# ---------------------------------------------------------------------------
def langevin(d: int) -> DiffusionSpec:
    return DiffusionSpec.from_matrices(np.eye(d), name="langevin")


def preconditioned(a) -> DiffusionSpec:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    return DiffusionSpec.from_matrices(a, name="preconditioned")


def nonreversible(a, c) -> DiffusionSpec:
    return DiffusionSpec.from_matrices(a, c, name="nonreversible")


def second_order(d: int) -> DiffusionSpec:
    """Underdamped Langevin on (x, v) in R^{2d}; pair with a target of the
    form p(x) N(v; 0, I) such as :func:`steinbench.targets.with_velocity`."""
    Z, I = np.zeros((d, d)), np.eye(d)
    a = 2.0 * np.block([[Z, Z], [Z, I]])
    c = 2.0 * np.block([[Z, -I], [I, Z]])
    return DiffusionSpec.from_matrices(a, c, name="second_order")


def diffusion_from_config(cfg: dict, dim: int) -> DiffusionSpec:
    """Build a diffusion from its JSON section.

    ``dim`` is the dimension of the (base) target.  Kinds: ``langevin``,
    ``preconditioned`` (``a``), ``nonreversible`` (``a``, ``c``),
    ``riemannian_pseudo_huber`` (``delta``, optional ``scale``) and
    ``second_order`` (acts on R^{2 dim}).
    """
    from .targets import riemannian_spec_pseudo_huber

    kind = cfg.get("kind")
    where = f"diffusion '{kind}'"
    if kind == "langevin":
        spec = langevin(dim)
    elif kind == "preconditioned":
        a = as_matrix(require(cfg, "a", where), where + " a")
        spec = preconditioned(a if a.ndim else a * np.eye(dim))
    elif kind == "nonreversible":
        a = as_matrix(require(cfg, "a", where), where + " a")
        c = as_matrix(require(cfg, "c", where), where + " c")
        spec = nonreversible(a, c)
    elif kind == "riemannian_pseudo_huber":
        try:
            spec = riemannian_spec_pseudo_huber(
                float(require(cfg, "delta", where)), dim, float(cfg.get("scale", 1.0))
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where}: {exc}") from None
        return spec
    elif kind == "second_order":
        return second_order(dim)
    else:
        raise ConfigError(f"unknown diffusion kind {kind!r}")
    if spec.dim != dim:
        raise ConfigError(f"{where}: matrices are {spec.dim}-dimensional, target is {dim}-dimensional")
    return spec
