"""Domain types and file ingestion shared by the rest of the package."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

WEIGHT_SUM_TOL = 1e-12
COLUMN_WEIGHT_TOL = 1e-9


class SteinbenchError(Exception):
    """Base class for package errors."""


class ConfigError(SteinbenchError, ValueError):
    """Invalid user configuration (bad parameters, missing fields, bad files)."""


class IngestionError(SteinbenchError, ValueError):
    """A data file could not be turned into a valid sample."""


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# weighted samples
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class WeightedSample:
    """A discrete probability measure: distinct points with positive weights.

    ``points`` is n x d and ``weights`` has length n.  Both are stored as
    read-only arrays, so a sample can be shared between threads.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise IngestionError(f"points must be an n x d array with n, d >= 1, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise IngestionError("points contain non-finite values")
        w = np.array(self.weights, dtype=float).reshape(-1)
        if w.shape[0] != pts.shape[0]:
            raise IngestionError(f"{w.shape[0]} weights for {pts.shape[0]} points")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise IngestionError("weights must be finite and strictly positive")
        if abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise IngestionError(f"weights sum to {w.sum():.17g}, not 1")
        dup = find_duplicate(pts)
        if dup is not None:
            raise IngestionError(f"duplicate point at rows {dup[0]} and {dup[1]}")
        object.__setattr__(self, "points", _readonly(pts))
        object.__setattr__(self, "weights", _readonly(w))

    @classmethod
    def uniform(cls, points) -> "WeightedSample":
        pts = np.asarray(points, dtype=float)
        n = pts.shape[0] if pts.ndim else 0
        return cls(pts, np.full(n, 1.0 / n) if n else np.zeros(0))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def prefix(self, k: int) -> "WeightedSample":
        """Uniform sample on the first ``k`` points."""
        return WeightedSample.uniform(self.points[:k])


def empirical_sample(points) -> WeightedSample:
    """Empirical measure of a sequence of draws.

    Repeated points (e.g. rejected MCMC proposals) are merged and carry
    weight proportional to their multiplicity, in order of first
    appearance.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    uniq, first, counts = np.unique(pts, axis=0, return_index=True, return_counts=True)
    order = np.argsort(first, kind="stable")
    return WeightedSample(uniq[order], counts[order] / pts.shape[0])


def find_duplicate(points):
    """Return the first pair of row indices holding equal points, or None.

    Equality is exact floating point equality of every coordinate.
    """
    pts = np.asarray(points, dtype=float)
    if pts.shape[0] < 2:
        return None
    order = np.lexsort(pts.T[::-1])
    srt = pts[order]
    same = np.all(srt[1:] == srt[:-1], axis=1)
    hit = np.flatnonzero(same)
    if hit.size == 0:
        return None
    i, l = order[hit[0]], order[hit[0] + 1]
    return (int(min(i, l)), int(max(i, l)))


def _header(path):
    """First '#' comment line of a file, without the marker, or None."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                s = line.strip()
                if not s:
                    continue
                return s.lstrip("#").strip() if s.startswith("#") else None
    except OSError:
        return None
    return None


def _parse_rows(path):
    rows = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                s = line.strip()
                if not s or s.startswith("#"):
                    continue
                try:
                    rows.append([float(tok) for tok in s.split(",")])
                except ValueError as exc:
                    raise IngestionError(f"{path}:{lineno}: {exc}") from None
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from None
    if not rows:
        raise IngestionError(f"{path}: no data rows")
    width = {len(r) for r in rows}
    if len(width) != 1:
        raise IngestionError(f"{path}: rows have differing column counts {sorted(width)}")
    return np.array(rows, dtype=float)


def load_sample(path, weight_mode: str = "uniform") -> WeightedSample:
    """Read a sample CSV.

    One point per row, comma separated.  Lines starting with '#' are
    skipped.  With ``weight_mode="column"`` the last column holds the
    weights, which must already sum to one (within 1e-9); they are not
    rescaled.  ``"auto"`` picks column mode when the header line names a
    ``weight`` column, as files written by :func:`save_sample` with
    weights do.
    """
    if weight_mode not in ("uniform", "column", "auto"):
        raise ConfigError(f"unknown weight mode {weight_mode!r}")
    data = _parse_rows(path)
    if weight_mode == "auto":
        head = _header(path)
        cols = [c.strip() for c in head.split(",")] if head else []
        weight_mode = "column" if cols and cols[-1] == "weight" else "uniform"
    if weight_mode == "uniform":
        return WeightedSample.uniform(data)
    if data.shape[1] < 2:
        raise IngestionError(f"{path}: column mode needs at least one coordinate and a weight")
    pts, w = data[:, :-1], data[:, -1]
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise IngestionError(f"{path}: nonpositive weight")
    total = w.sum()
    if abs(total - 1.0) > COLUMN_WEIGHT_TOL:
        raise IngestionError(f"{path}: weights sum to {total:.17g}, not 1")
    # tolerate the documented 1e-9 slack by absorbing it exactly
    w = w / total if total != 1.0 else w
    return WeightedSample(pts, w)


def format_float(x: float) -> str:
    """Shortest decimal string that reads back to the same double."""
    return repr(float(x))


def save_sample(sample: WeightedSample, path, with_weights: bool = False, header: Optional[str] = None):
    """Write a sample CSV that :func:`load_sample` reads back bit-exactly.

    With weights and no explicit header, a header ``x1,...,xd,weight`` is
    written so that ``weight_mode="auto"`` recognizes the file.
    """
    if header is None and with_weights:
        header = ",".join([f"x{k + 1}" for k in range(sample.d)] + ["weight"])
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            fh.write("# " + header.lstrip("# ") + "\n")
        for i in range(sample.n):
            vals = [format_float(v) for v in sample.points[i]]
            if with_weights:
                vals.append(format_float(sample.weights[i]))
            fh.write(",".join(vals) + "\n")


def load_matrix_csv(path) -> np.ndarray:
    """Numeric CSV (e.g. covariates) as a 2-D float array."""
    return _parse_rows(path)


# ---------------------------------------------------------------------------
# targets and diffusions
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class LikelihoodTerms:
    """Per-datum structure of a posterior, used for minibatch gradients.

    ``prior_score(B)`` returns the prior part of the score for an (n, d)
    batch; ``term_scores(beta, idx)`` returns the (len(idx), d) array of
    likelihood score contributions of the data points ``idx`` at a single
    parameter vector.
    """

    n_terms: int
    prior_score: Callable
    term_scores: Callable


@dataclass(frozen=True)
class TargetModel:
    """A target distribution known through its score.

    ``score_fn`` and ``log_density_fn`` act on (n, d) batches; use
    :meth:`score` and :meth:`log_density` for single points or batches.
    ``sampler(n, rng)`` draws exact samples when available.
    """

    dim: int
    score_fn: Callable
    log_density_fn: Optional[Callable] = None
    sampler: Optional[Callable] = None
    likelihood: Optional[LikelihoodTerms] = None
    name: str = "target"
    params: dict = field(default_factory=dict, compare=False, repr=False)

    def _batch(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = x[None, :] if single else x
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise ValueError(f"expected points of dimension {self.dim}, got shape {x.shape}")
        return X, single

    def score(self, x) -> np.ndarray:
        X, single = self._batch(x)
        out = np.asarray(self.score_fn(X), dtype=float)
        if out.shape != X.shape:
            raise ValueError(f"score returned shape {out.shape} for input {X.shape}")
        return out[0] if single else out

    def log_density(self, x):
        if self.log_density_fn is None:
            raise ValueError(f"target {self.name} has no log density")
        X, single = self._batch(x)
        out = np.asarray(self.log_density_fn(X), dtype=float).reshape(-1)
        return float(out[0]) if single else out

    @property
    def has_log_density(self) -> bool:
        return self.log_density_fn is not None

    def sample(self, n: int, seed) -> WeightedSample:
        if self.sampler is None:
            raise ValueError(f"target {self.name} has no exact sampler")
        rng = np.random.default_rng(seed)
        return WeightedSample.uniform(self.sampler(n, rng))


@dataclass(frozen=True)
class TargetReport:
    passed: bool
    max_rel_deviation: float
    checked: int
    tol: float


def fd_gradient(f, x, h=None):
    """Central finite-difference gradient of scalar f at a single point."""
    x = np.asarray(x, dtype=float)
    if h is None:
        h = 1e-5 * (1.0 + np.max(np.abs(x)))
    g = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def relative_deviation(approx, exact):
    """max |approx - exact| scaled by max(1, max |exact|)."""
    approx = np.asarray(approx, dtype=float)
    exact = np.asarray(exact, dtype=float)
    return float(np.max(np.abs(approx - exact)) / max(1.0, float(np.max(np.abs(exact)))))


def validate_target(target: TargetModel, probes, tol: float = 1e-4) -> TargetReport:
    """Compare the score with finite differences of the log density.

    The deviation at each probe is measured by :func:`relative_deviation`.
    Without a log density nothing can be checked and the report passes
    with ``checked = 0``.
    """
    P = np.asarray(probes, dtype=float)
    if P.ndim == 1:
        P = P[:, None] if target.dim == 1 else P[None, :]
    if P.shape[1] != target.dim:
        raise ValueError(f"probe dimension {P.shape[1]} does not match target dimension {target.dim}")
    if not target.has_log_density:
        return TargetReport(True, 0.0, 0, tol)
    worst = 0.0
    for x in P:
        fd = fd_gradient(target.log_density, x)
        worst = max(worst, relative_deviation(fd, target.score(x)))
    return TargetReport(worst <= tol, worst, P.shape[0], tol)


@dataclass(frozen=True)
class DiffusionSpec:
    """Coefficients of a P-invariant diffusion: m(x) = a(x) + c(x).

    ``a_fn`` and ``c_fn`` map an (n, d) batch to (n, d, d) arrays; ``div_m_fn``
    maps it to the (n, d) row divergences of m.  Constant specs carry the
    matrices directly in ``a_const`` / ``c_const``.
    """

    dim: int
    a_fn: Callable
    c_fn: Callable
    div_m_fn: Optional[Callable] = None
    constant: bool = False
    a_const: Optional[np.ndarray] = None
    c_const: Optional[np.ndarray] = None
    name: str = "diffusion"

    @classmethod
    def from_matrices(cls, a, c=None, name="constant") -> "DiffusionSpec":
        a = _readonly(np.atleast_2d(a))
        d = a.shape[0]
        c = _readonly(np.zeros((d, d)) if c is None else np.atleast_2d(c))
        if a.shape != (d, d) or c.shape != (d, d):
            raise ConfigError("a and c must be square matrices of equal size")
        return cls(
            dim=d,
            a_fn=lambda X: np.broadcast_to(a, (X.shape[0], d, d)),
            c_fn=lambda X: np.broadcast_to(c, (X.shape[0], d, d)),
            div_m_fn=lambda X: np.zeros((X.shape[0], d)),
            constant=True,
            a_const=a,
            c_const=c,
            name=name,
        )

    @property
    def m_const(self):
        if not self.constant:
            raise ValueError("m is not constant for this diffusion")
        return self.a_const + self.c_const

    def a(self, X):
        return np.asarray(self.a_fn(np.atleast_2d(X)), dtype=float)

    def c(self, X):
        return np.asarray(self.c_fn(np.atleast_2d(X)), dtype=float)

    def m(self, X):
        return self.a(X) + self.c(X)


def check_diffusion(spec: DiffusionSpec, probes) -> None:
    """Raise ConfigError unless a is symmetric PSD and c skew at the probes.

    The origin is always added to the probe set.
    """
    P = np.atleast_2d(np.asarray(probes, dtype=float))
    if P.shape[1] != spec.dim:
        raise ConfigError(f"diffusion has dimension {spec.dim}, probes have {P.shape[1]}")
    P = np.vstack([P, np.zeros((1, spec.dim))])
    A = spec.a(P)
    C = spec.c(P)
    if np.max(np.abs(A - np.swapaxes(A, 1, 2))) > 1e-12:
        raise ConfigError("covariance coefficient a is not symmetric")
    if np.min(np.linalg.eigvalsh(A)) < -1e-10:
        raise ConfigError("covariance coefficient a is not positive semidefinite")
    if np.max(np.abs(C + np.swapaxes(C, 1, 2))) > 1e-12:
        raise ConfigError("stream coefficient c is not skew-symmetric")
    if spec.constant and spec.div_m_fn is not None:
        if np.any(np.asarray(spec.div_m_fn(P)) != 0):
            raise ConfigError("constant diffusion with nonzero divergence")


# ---------------------------------------------------------------------------
# witness
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class SteinWitness:
    """Optimal discrete Stein function and the resulting discrepancy.

    ``psi[j, i] = g_j(x_i)``, ``Psi[j, k, i] = d g_j / d x_k at x_i`` and
    ``h_star[i] = (T g*)(x_i)``.
    """

    value: float
    coord_values: np.ndarray
    psi: np.ndarray
    Psi: np.ndarray
    h_star: np.ndarray
    info: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "value": float(self.value),
            "coord_values": [float(v) for v in self.coord_values],
            "psi": np.asarray(self.psi).tolist(),
            "Psi": np.asarray(self.Psi).tolist(),
            "h_star": np.asarray(self.h_star).tolist(),
        }

    def save_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def from_dict(cls, obj) -> "SteinWitness":
        return cls(
            value=float(obj["value"]),
            coord_values=np.asarray(obj["coord_values"], dtype=float),
            psi=np.asarray(obj["psi"], dtype=float),
            Psi=np.asarray(obj["Psi"], dtype=float),
            h_star=np.asarray(obj["h_star"], dtype=float),
        )

    @classmethod
    def load_json(cls, path) -> "SteinWitness":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# JSON configuration
# ---------------------------------------------------------------------------
def read_json(source) -> dict:
    """Load a JSON object from a path, a JSON string, or pass a dict through."""
    if isinstance(source, dict):
        return source
    if isinstance(source, (str, os.PathLike)) and os.path.exists(source):
        try:
            with open(source, "r", encoding="utf-8") as fh:
                obj = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read JSON from {source}: {exc}") from None
    elif isinstance(source, str) and source.lstrip().startswith("{"):
        try:
            obj = json.loads(source)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None
    else:
        raise ConfigError(f"config file not found: {source}")
    if not isinstance(obj, dict):
        raise ConfigError("configuration must be a JSON object")
    return obj


def split_config(obj: dict):
    """Return the ``target`` and ``diffusion`` sections of a config object.

    Either section may be missing (returned as None); a section must have a
    string ``kind``.
    """
    out = []
    for key in ("target", "diffusion"):
        sec = obj.get(key)
        if sec is not None:
            if not isinstance(sec, dict) or not isinstance(sec.get("kind"), str):
                raise ConfigError(f"'{key}' section needs a string 'kind'")
        out.append(sec)
    return tuple(out)


def require(params: dict, key: str, where: str):
    if key not in params:
        raise ConfigError(f"{where}: missing parameter '{key}'")
    return params[key]


def as_matrix(value, where: str, shape=None) -> np.ndarray:
    try:
        M = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: not a numeric array") from None
    if shape is not None and M.shape != shape:
        raise ConfigError(f"{where}: expected shape {shape}, got {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ConfigError(f"{where}: non-finite entries")
    return M


def resolve_path(path, base_dir):
    if base_dir is None or os.path.isabs(path):
        return path
    return os.path.join(base_dir, path)
