"""Sample generators: exact draws, MALA and SGRLD with a scalar metric."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import ConfigError, SteinbenchError, TargetModel, WeightedSample, empirical_sample


class SamplerError(SteinbenchError, RuntimeError):
    """A chain reached a state where its update is undefined."""


@dataclass(frozen=True)
class ChainConfig:
    step_size: float
    n_steps: int
    thinning: int = 1
    minibatch: Optional[int] = None
    seed: int = 0
    beta0: Optional[tuple] = None
    burn_in: float = 0.1

    def __post_init__(self):
        if not (np.isfinite(self.step_size) and self.step_size > 0):
            raise ConfigError(f"step size must be positive, got {self.step_size}")
        if int(self.n_steps) < 1:
            raise ConfigError("n_steps must be at least 1")
        if int(self.thinning) < 1:
            raise ConfigError("thinning must be at least 1")
        if not 0 <= self.burn_in < 1:
            raise ConfigError("burn-in fraction must lie in [0, 1)")
        if self.minibatch is not None and int(self.minibatch) < 1:
            raise ConfigError("minibatch size must be at least 1")

    def start(self, dim: int) -> np.ndarray:
        if self.beta0 is None:
            return np.zeros(dim)
        b = np.asarray(self.beta0, dtype=float).reshape(-1)
        if b.size != dim:
            raise ConfigError(f"initial state has length {b.size}, target dimension is {dim}")
        return b.copy()

    def kept(self, states: np.ndarray) -> np.ndarray:
        """Post burn-in states, every ``thinning``-th one."""
        burn = int(np.floor(self.burn_in * self.n_steps))
        out = states[burn + self.thinning - 1 :: self.thinning]
        if out.shape[0] == 0:
            raise ConfigError("no states left after burn-in and thinning")
        return out


@dataclass
class ChainRun:
    sample: WeightedSample
    states: np.ndarray
    acceptance_rate: Optional[float]
    meta: dict = field(default_factory=dict)

    def save_meta(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.meta, fh, indent=2)
            fh.write("\n")


def _meta(kind, cfg: ChainConfig, **extra):
    m = {"sampler": kind}
    m.update(asdict(cfg))
    if m["beta0"] is not None:
        m["beta0"] = [float(v) for v in m["beta0"]]
    m.update(extra)
    return m


# ---------------------------------------------------------------------------
# i.i.d. draws
# ---------------------------------------------------------------------------
def iid_chain(target: TargetModel, n: int, seed=0) -> WeightedSample:
    """Exact draws from the target (mixtures only)."""
    return target.sample(n, seed)


# ---------------------------------------------------------------------------
# MALA
# ---------------------------------------------------------------------------
def mala_log_accept_ratio(target: TargetModel, beta, prop, eps, s_beta=None, s_prop=None) -> float:
    """log of the Metropolis-Hastings ratio for a MALA move beta -> prop."""
    beta = np.asarray(beta, dtype=float)
    prop = np.asarray(prop, dtype=float)
    s_beta = target.score(beta) if s_beta is None else s_beta
    s_prop = target.score(prop) if s_prop is None else s_prop
    fwd = prop - beta - 0.5 * eps * s_beta
    bwd = beta - prop - 0.5 * eps * s_prop
    log_q = (np.dot(fwd, fwd) - np.dot(bwd, bwd)) / (2 * eps)
    return float(target.log_density(prop) - target.log_density(beta) + log_q)


def run_mala(target: TargetModel, cfg: ChainConfig, noise_scale: float = 1.0) -> ChainRun:
    """Metropolis-adjusted Langevin chain.

    Proposal ``beta + eps/2 * score(beta) + sqrt(eps) * xi``.  ``noise_scale``
    multiplies the Gaussian noise and exists for deterministic tests.
    """
    if not target.has_log_density:
        raise ConfigError(f"MALA needs the log density of target {target.name}")
    eps = float(cfg.step_size)
    rng = np.random.default_rng(cfg.seed)
    beta = cfg.start(target.dim)
    s_beta = target.score(beta)
    lp_beta = target.log_density(beta)
    states = np.empty((cfg.n_steps, target.dim))
    accepted = 0
    root = np.sqrt(eps) * noise_scale
    for t in range(cfg.n_steps):
        xi = rng.standard_normal(target.dim)
        u = rng.random()
        prop = beta + 0.5 * eps * s_beta + root * xi
        s_prop = target.score(prop)
        lp_prop = target.log_density(prop)
        fwd = prop - beta - 0.5 * eps * s_beta
        bwd = beta - prop - 0.5 * eps * s_prop
        log_r = lp_prop - lp_beta + (np.dot(fwd, fwd) - np.dot(bwd, bwd)) / (2 * eps)
        if np.log(u) < log_r:
            beta, s_beta, lp_beta = prop, s_prop, lp_prop
            accepted += 1
        states[t] = beta
    rate = accepted / cfg.n_steps
    kept = cfg.kept(states)
    return ChainRun(empirical_sample(kept), kept, rate, _meta("mala", cfg, acceptance_rate=rate))


def mala_chain(target: TargetModel, cfg: ChainConfig, noise_scale: float = 1.0) -> WeightedSample:
    return run_mala(target, cfg, noise_scale).sample


# ---------------------------------------------------------------------------
# SGRLD
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class ScalarMetric:
    """Metric G(beta) = lam(beta) I with gradient ``grad_lam``."""

    lam: Callable
    grad_lam: Callable
    name: str = "scalar"

    def inverse(self, beta) -> float:
        return 1.0 / self.lam(beta)

    def correction(self, beta) -> np.ndarray:
        """Gamma_i = sum_j d/d beta_j [G^{-1}]_ij = -lam^{-2} d lam / d beta_i."""
        lam = self.lam(beta)
        return -np.asarray(self.grad_lam(beta), dtype=float) / lam**2


def identity_metric() -> ScalarMetric:
    return ScalarMetric(lambda b: 1.0, lambda b: np.zeros_like(np.asarray(b, float)), "identity")


def pseudo_huber_metric(delta: float) -> ScalarMetric:
    """G(beta) = I / (2 sqrt(1 + |beta / delta|^2))."""
    if not delta > 0:
        raise ConfigError(f"delta must be positive, got {delta}")

    def lam(b):
        b = np.asarray(b, dtype=float)
        return 0.5 / np.sqrt(1.0 + np.dot(b, b) / delta**2)

    def grad_lam(b):
        b = np.asarray(b, dtype=float)
        return -0.5 * (1.0 + np.dot(b, b) / delta**2) ** -1.5 * b / delta**2

    return ScalarMetric(lam, grad_lam, f"pseudo_huber(delta={delta})")


def minibatch_gradient(target: TargetModel, beta, idx) -> np.ndarray:
    """Prior score plus the likelihood terms ``idx`` rescaled by L / |idx|."""
    lik = target.likelihood
    if lik is None:
        raise ConfigError(f"target {target.name} has no per-datum likelihood terms")
    beta = np.asarray(beta, dtype=float)
    idx = np.asarray(idx, dtype=np.int64)
    terms = np.asarray(lik.term_scores(beta, idx), dtype=float)
    return lik.prior_score(beta[None, :])[0] + (lik.n_terms / idx.size) * terms.sum(axis=0)


def run_sgrld(target: TargetModel, metric: ScalarMetric, cfg: ChainConfig, noise_scale: float = 1.0) -> ChainRun:
    """Stochastic gradient Riemannian Langevin dynamics (no MH correction).

    ``beta' = beta + eps/2 (G^{-1} grad + Gamma) + N(0, eps G^{-1})``.  With
    ``cfg.minibatch`` set, the likelihood part of the gradient comes from
    a minibatch drawn without replacement and rescaled; otherwise the full
    score is used.
    """
    eps = float(cfg.step_size)
    rng = np.random.default_rng(cfg.seed)
    batch = cfg.minibatch
    if batch is not None:
        if target.likelihood is None:
            raise ConfigError(f"target {target.name} does not support minibatch gradients")
        L = target.likelihood.n_terms
        if batch > L:
            raise ConfigError(f"minibatch {batch} exceeds the {L} data terms")
    beta = cfg.start(target.dim)
    states = np.empty((cfg.n_steps, target.dim))
    for t in range(cfg.n_steps):
        if batch is None:
            grad = target.score(beta)
        else:
            grad = minibatch_gradient(target, beta, rng.choice(L, size=batch, replace=False))
        lam = metric.lam(beta)
        if not (np.isfinite(lam) and lam > 0):
            raise SamplerError(f"metric is not positive definite at state {beta.tolist()}")
        xi = rng.standard_normal(target.dim)
        beta = beta + 0.5 * eps * (grad / lam + metric.correction(beta)) + noise_scale * np.sqrt(eps / lam) * xi
        if not np.all(np.isfinite(beta)):
            raise SamplerError(f"chain diverged at step {t}")
        states[t] = beta
    kept = cfg.kept(states)
    return ChainRun(empirical_sample(kept), kept, None, _meta("sgrld", cfg, metric=metric.name))


def sgrld_chain(target: TargetModel, metric: ScalarMetric, cfg: ChainConfig, noise_scale: float = 1.0) -> WeightedSample:
    return run_sgrld(target, metric, cfg, noise_scale).sample
