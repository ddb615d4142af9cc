"""Score functions, log densities and samplers for the supported targets."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit, logsumexp

from .core import (
    ConfigError,
    DiffusionSpec,
    LikelihoodTerms,
    TargetModel,
    WeightedSample,
    as_matrix,
    load_matrix_csv,
    require,
    resolve_path,
)

_LOG2PI = np.log(2 * np.pi)


def _spd(S, what):
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.shape[0] != S.shape[1] or not np.allclose(S, S.T, rtol=0, atol=1e-12 * max(1.0, np.abs(S).max())):
        raise ConfigError(f"{what} must be a symmetric matrix")
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise ConfigError(f"{what} is not positive definite") from None
    return S, L


def _cov(value, d, what):
    """Scalar or matrix covariance parameter."""
    S = np.asarray(value, dtype=float)
    if S.ndim == 0:
        S = float(S) * np.eye(d)
    if S.shape != (d, d):
        raise ConfigError(f"{what} has shape {S.shape}, expected {(d, d)}")
    return _spd(S, what)


# ---------------------------------------------------------------------------
# Gaussian mixtures with a shared covariance
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class GaussianMixtureParams:
    weights: np.ndarray
    means: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if w.size != mu.shape[0]:
            raise ConfigError(f"{w.size} weights for {mu.shape[0]} components")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ConfigError("mixture weights must be nonnegative and sum to 1")
        S, L = _cov(self.cov, mu.shape[1], "mixture covariance")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "cov", S)
        object.__setattr__(self, "_chol", L)
        object.__setattr__(self, "_prec", np.linalg.inv(S))

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def _component_logs(self, X):
        # log w_j + log phi_j(x), shape (n, m)
        Li = np.linalg.inv(self._chol)
        logdet = 2 * np.sum(np.log(np.diag(self._chol)))
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        out = np.empty((X.shape[0], self.means.shape[0]))
        for j, mu in enumerate(self.means):
            r = (X - mu) @ Li.T
            out[:, j] = logw[j] - 0.5 * np.sum(r * r, axis=1)
        return out - 0.5 * (self.dim * _LOG2PI + logdet)


def _batch(x, d):
    """(n, d) view of a point or batch, and whether a single point was given."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1 and x.size == d:
        return x[None, :], True
    if x.ndim == 1 and d == 1:
        return x[:, None], False
    if x.ndim != 2 or x.shape[1] != d:
        raise ValueError(f"expected points of dimension {d}, got shape {x.shape}")
    return x, False


def _single(out, single):
    return out[0] if single else out


def gmm_log_density(params: GaussianMixtureParams, x):
    X, single = _batch(x, params.dim)
    return _single(logsumexp(params._component_logs(X), axis=1), single)


def gmm_score(params: GaussianMixtureParams, x):
    """Sigma^{-1} (mu(x) - x) with mu(x) the responsibility-weighted mean."""
    X, single = _batch(x, params.dim)
    lg = params._component_logs(X)
    pi = np.exp(lg - logsumexp(lg, axis=1, keepdims=True))
    return _single((pi @ params.means - X) @ params._prec.T, single)


def gmm_sample(params: GaussianMixtureParams, n: int, seed) -> WeightedSample:
    rng = np.random.default_rng(seed)
    return WeightedSample.uniform(_gmm_draw(params, n, rng))


def _gmm_draw(params, n, rng):
    comp = rng.choice(params.weights.size, size=n, p=params.weights)
    eps = rng.standard_normal((n, params.dim))
    return params.means[comp] + eps @ params._chol.T


def gmm(weights=None, means=((0.0,),), cov=1.0) -> TargetModel:
    means = np.atleast_2d(np.asarray(means, dtype=float))
    if weights is None:
        weights = np.full(means.shape[0], 1.0 / means.shape[0])
    p = GaussianMixtureParams(weights, means, cov)
    return TargetModel(
        dim=p.dim,
        score_fn=lambda X: gmm_score(p, X),
        log_density_fn=lambda X: gmm_log_density(p, X),
        sampler=lambda n, rng: _gmm_draw(p, n, rng),
        name="gmm",
        params={"gmm": p},
    )


def gaussian(mean=(0.0,), cov=1.0) -> TargetModel:
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    return gmm([1.0], mean[None, :], cov)


def symmetric_mixture(delta: float) -> TargetModel:
    """Equal mixture of N(-delta/2, 1) and N(delta/2, 1) on the line."""
    return gmm([0.5, 0.5], [[-delta / 2], [delta / 2]], 1.0)


# ---------------------------------------------------------------------------
# regression posteriors with Gaussian priors
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class _RegressionData:
    V: np.ndarray
    y: np.ndarray
    mu: np.ndarray
    prior_cov: np.ndarray

    def __post_init__(self):
        V = np.atleast_2d(np.asarray(self.V, dtype=float))
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if V.shape[0] != y.size:
            raise ConfigError(f"{V.shape[0]} covariate rows for {y.size} responses")
        d = V.shape[1]
        mu = np.zeros(d) if self.mu is None else np.asarray(self.mu, dtype=float).reshape(-1)
        if mu.size != d:
            raise ConfigError(f"prior mean has length {mu.size}, expected {d}")
        S, _ = _cov(np.eye(d) if self.prior_cov is None else self.prior_cov, d, "prior covariance")
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "prior_cov", S)
        object.__setattr__(self, "_prec", np.linalg.inv(S))

    @property
    def dim(self):
        return self.V.shape[1]

    def prior_score(self, B):
        return -(B - self.mu) @ self._prec.T

    def prior_log(self, B):
        D = B - self.mu
        return -0.5 * np.einsum("ij,jk,ik->i", D, self._prec, D)


@dataclass(frozen=True, eq=False)
class LogisticRegressionParams(_RegressionData):
    def __post_init__(self):
        super().__post_init__()
        if not np.all(np.isin(self.y, (-1.0, 1.0))):
            raise ConfigError("logistic labels must be -1 or +1")


def logistic_score(params: LogisticRegressionParams, B):
    B, single = _batch(B, params.dim)
    t = (B @ params.V.T) * params.y
    # 1 / (1 + exp(t)) without overflow
    return _single(params.prior_score(B) + (expit(-t) * params.y) @ params.V, single)


def logistic_log_density(params: LogisticRegressionParams, B):
    B, single = _batch(B, params.dim)
    t = (B @ params.V.T) * params.y
    return _single(params.prior_log(B) + log_expit(t).sum(axis=1), single)


def logistic(V, y, mu=None, prior_cov=None) -> TargetModel:
    p = LogisticRegressionParams(V, y, mu, prior_cov)

    def terms(beta, idx):
        v, yy = p.V[idx], p.y[idx]
        return (expit(-yy * (v @ beta)) * yy)[:, None] * v

    return TargetModel(
        dim=p.dim,
        score_fn=lambda B: logistic_score(p, B),
        log_density_fn=lambda B: logistic_log_density(p, B),
        likelihood=LikelihoodTerms(p.y.size, p.prior_score, terms),
        name="logistic",
        params={"logistic": p},
    )


@dataclass(frozen=True, eq=False)
class HuberRegressionParams(_RegressionData):
    c: float = 1.0

    def __post_init__(self):
        super().__post_init__()
        if not self.c > 0:
            raise ConfigError("huber threshold c must be positive")


def huber_rho(r, c):
    a = np.abs(r)
    return np.where(a <= c, 0.5 * r * r, c * (a - 0.5 * c))


def huber_score(params: HuberRegressionParams, B):
    B, single = _batch(B, params.dim)
    r = params.y - B @ params.V.T
    return _single(params.prior_score(B) + np.clip(r, -params.c, params.c) @ params.V, single)


def huber_log_density(params: HuberRegressionParams, B):
    B, single = _batch(B, params.dim)
    r = params.y - B @ params.V.T
    return _single(params.prior_log(B) - huber_rho(r, params.c).sum(axis=1), single)


def huber(V, y, c=1.0, mu=None, prior_cov=None) -> TargetModel:
    p = HuberRegressionParams(V, y, mu, prior_cov, float(c))

    def terms(beta, idx):
        v = p.V[idx]
        return np.clip(p.y[idx] - v @ beta, -p.c, p.c)[:, None] * v

    return TargetModel(
        dim=p.dim,
        score_fn=lambda B: huber_score(p, B),
        log_density_fn=lambda B: huber_log_density(p, B),
        likelihood=LikelihoodTerms(p.y.size, p.prior_score, terms),
        name="huber",
        params={"huber": p},
    )


# ---------------------------------------------------------------------------
# multivariate Student's t regression with a pseudo-Huber prior
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class StudentTRegressionParams:
    V: np.ndarray
    y: np.ndarray
    nu: float
    noise_cov: np.ndarray
    delta: float

    def __post_init__(self):
        V = np.atleast_2d(np.asarray(self.V, dtype=float))
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if V.shape[0] != y.size:
            raise ConfigError(f"{V.shape[0]} design rows for {y.size} responses")
        if not (self.nu > 0 and self.delta > 0):
            raise ConfigError("nu and delta must be positive")
        S, _ = _cov(np.eye(y.size) if self.noise_cov is None else self.noise_cov, y.size, "noise covariance")
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "noise_cov", S)
        object.__setattr__(self, "_prec", np.linalg.inv(S))

    @property
    def dim(self):
        return self.V.shape[1]

    @property
    def L(self):
        return self.y.size


def _studentt_parts(p, B):
    R = p.y - B @ p.V.T
    PR = R @ p._prec.T
    xi = 1.0 + np.einsum("ij,ij->i", R, PR) / p.nu
    root = np.sqrt(1.0 + np.sum(B * B, axis=1) / p.delta**2)
    return B, PR, xi, root


def studentt_log_density(p: StudentTRegressionParams, B):
    B, single = _batch(B, p.dim)
    B, _, xi, root = _studentt_parts(p, B)
    return _single(p.delta**2 * (1.0 - root) - 0.5 * (p.nu + p.L) * np.log(xi), single)


def studentt_score(p: StudentTRegressionParams, B):
    """Gradient of the log density; the likelihood factor is (nu + L) / nu."""
    B, single = _batch(B, p.dim)
    B, PR, xi, root = _studentt_parts(p, B)
    lik = ((p.nu + p.L) / p.nu) * (PR @ p.V) / xi[:, None]
    return _single(-B / root[:, None] + lik, single)


def studentt_pseudohuber(V, y, nu, delta, noise_cov=None) -> TargetModel:
    p = StudentTRegressionParams(V, y, float(nu), noise_cov, float(delta))
    return TargetModel(
        dim=p.dim,
        score_fn=lambda B: studentt_score(p, B),
        log_density_fn=lambda B: studentt_log_density(p, B),
        name="studentt_pseudohuber",
        params={"studentt": p},
    )


def riemannian_spec_pseudo_huber(delta: float, dim: int = 1, scale: float = 1.0) -> DiffusionSpec:
    """a(beta) = scale * sqrt(1 + |beta|^2 / delta^2) I and c = 0.

    ``scale = 1`` is half of psi_0; ``scale = 2`` makes a equal to the
    inverse of the SGRLD pseudo-Huber metric.
    """
    if not delta > 0:
        raise ConfigError(f"delta must be positive, got {delta}")
    if not scale > 0:
        raise ConfigError(f"scale must be positive, got {scale}")
    d = int(dim)
    eye = np.eye(d)

    def root(X):
        return np.sqrt(1.0 + np.sum(X * X, axis=1) / delta**2)

    def a_fn(X):
        X = np.atleast_2d(X)
        return (scale * root(X))[:, None, None] * eye

    def c_fn(X):
        return np.zeros((np.atleast_2d(X).shape[0], d, d))

    def div_fn(X):
        X = np.atleast_2d(X)
        return scale * X / (delta**2 * root(X))[:, None]

    return DiffusionSpec(dim=d, a_fn=a_fn, c_fn=c_fn, div_m_fn=div_fn, name="riemannian_pseudo_huber")


def with_velocity(base: TargetModel) -> TargetModel:
    """The product p(x) N(v; 0, I) on R^{2d}, with points stacked as (x, v)."""
    d = base.dim

    def score(Z):
        return np.hstack([base.score(Z[:, :d]), -Z[:, d:]])

    logp = None
    if base.log_density_fn is not None:
        def logp(Z):
            return base.log_density(Z[:, :d]) - 0.5 * np.sum(Z[:, d:] ** 2, axis=1) - 0.5 * d * _LOG2PI

    sampler = None
    if base.sampler is not None:
        def sampler(n, rng):
            X = np.asarray(base.sampler(n, rng), dtype=float).reshape(n, d)
            return np.hstack([X, rng.standard_normal((n, d))])

    return TargetModel(2 * d, score, logp, sampler, None, name=base.name + "+velocity", params=base.params)


# ---------------------------------------------------------------------------
# JSON configuration
# ---------------------------------------------------------------------------
def _array_or_csv(value, base_dir, where):
    if isinstance(value, str):
        try:
            return load_matrix_csv(resolve_path(value, base_dir))
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from None
    return as_matrix(value, where)


def _regression_data(cfg, base_dir, where):
    """(V, y) from ``data`` (CSV, last column is the response) or from
    separate ``covariates`` and ``responses`` entries."""
    if "data" in cfg:
        D = np.atleast_2d(_array_or_csv(cfg["data"], base_dir, where + " data"))
        if D.shape[1] < 2:
            raise ConfigError(f"{where}: data needs covariate columns and a response column")
        return D[:, :-1], D[:, -1]
    V = np.atleast_2d(_array_or_csv(require(cfg, "covariates", where), base_dir, where + " covariates"))
    y = np.asarray(_array_or_csv(require(cfg, "responses", where), base_dir, where + " responses"), float).reshape(-1)
    return V, y


def target_from_config(cfg: dict, base_dir=None) -> TargetModel:
    """Build a target from its JSON section.

    Kinds and parameters:

    * ``gmm``: ``means`` (m x d), optional ``weights`` and ``cov`` (scalar or
      matrix); or the shortcut ``delta`` for the symmetric 1-D mixture.
    * ``logistic``: data, optional ``prior_mean`` and ``prior_cov``.
    * ``huber``: data, ``c``, optional prior.
    * ``studentt_pseudohuber``: data, ``nu``, ``delta``, optional ``noise_cov``.

    Regression data come from ``data`` (a CSV path or inline rows whose last
    column is the response) or from ``covariates`` and ``responses``.
    """
    kind = cfg.get("kind")
    where = f"target '{kind}'"
    try:
        if kind == "gmm":
            if "delta" in cfg:
                return symmetric_mixture(float(cfg["delta"]))
            means = as_matrix(require(cfg, "means", where), where + " means")
            weights = cfg.get("weights")
            if weights is not None:
                weights = as_matrix(weights, where + " weights")
            return gmm(weights, np.atleast_2d(means), as_matrix(cfg.get("cov", 1.0), where + " cov"))
        if kind in ("logistic", "huber"):
            V, y = _regression_data(cfg, base_dir, where)
            mu = cfg.get("prior_mean")
            S = cfg.get("prior_cov")
            mu = None if mu is None else as_matrix(mu, where + " prior_mean")
            S = None if S is None else as_matrix(S, where + " prior_cov")
            if kind == "logistic":
                return logistic(V, y, mu, S)
            return huber(V, y, float(require(cfg, "c", where)), mu, S)
        if kind == "studentt_pseudohuber":
            V, y = _regression_data(cfg, base_dir, where)
            S = cfg.get("noise_cov")
            S = None if S is None else as_matrix(S, where + " noise_cov")
            return studentt_pseudohuber(V, y, float(require(cfg, "nu", where)), float(require(cfg, "delta", where)), S)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{where}: {exc}") from None
    raise ConfigError(f"unknown target kind {kind!r}")
