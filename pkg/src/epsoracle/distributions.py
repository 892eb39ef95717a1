"""Data distributions q(x_0) and their diffused marginals q(x_t).

Two data models are supported: a weighted point set (:class:`Discrete`) and a
full-covariance Gaussian mixture (:class:`GaussianMixture`). Under the forward
kernel ``q(x_t | x_0) = N(sqrt(ab) x_0, (1 - ab) I)`` both become Gaussian
mixtures, so one density/score implementation covers every marginal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.special import logsumexp

from epsoracle.schedule import NoiseSchedule

MAX_DIM = 8
_WEIGHT_TOL = 1e-12
_LOG_2PI = np.log(2.0 * np.pi)


def _as_weights(weights, n: int) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.size != n:
        raise ValueError(f"expected {n} weights, got {w.size}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    if abs(w.sum() - 1.0) > _WEIGHT_TOL:
        raise ValueError(f"weights must sum to 1 (got {w.sum()!r})")
    return w


def _check_dim(d: int) -> None:
    if not 1 <= d <= MAX_DIM:
        raise ValueError(f"dimension must be in [1, {MAX_DIM}], got {d}")


def _as_batch(x, d: int):
    """Return ``(x as (n, d), was_single)``."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim <= 1
    x2 = x.reshape(1, -1) if single else x
    if x2.ndim != 2 or x2.shape[1] != d:
        raise ValueError(f"dimension mismatch: expected trailing dim {d}, got shape {x.shape}")
    return x2, single


@dataclass(frozen=True, eq=False)
class Discrete:
    """Weighted empirical point set ``sum_i w_i delta(x - x_i)``."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        _check_dim(pts.shape[1])
        w = _as_weights(self.weights, pts.shape[0])
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def cov(self) -> np.ndarray:
        c = self.points - self.mean()
        return (self.weights[:, None] * c).T @ c

    def to_config(self) -> dict:
        return {"type": "discrete", "points": self.points.tolist(), "weights": self.weights.tolist()}


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    """Full-covariance Gaussian mixture with cached Cholesky factors.

    Used both as a data model q(x_0) and as the density of a diffused
    marginal q(x_t). Covariances are validated once, at construction.
    """

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    _chol: np.ndarray = field(init=False, repr=False)
    _log_norm: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        k, d = means.shape
        _check_dim(d)
        covs = np.asarray(self.covs, dtype=np.float64).reshape(k, d, d)
        w = _as_weights(self.weights, k)
        if not np.allclose(covs, np.swapaxes(covs, 1, 2), rtol=1e-12, atol=1e-14):
            raise ValueError("covariances must be symmetric")
        chol = np.empty_like(covs)
        for j in range(k):
            try:
                chol[j] = np.linalg.cholesky(covs[j])
            except np.linalg.LinAlgError as exc:
                raise ValueError(f"covariance {j} is not positive definite") from exc
        log_det = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
        with np.errstate(divide="ignore"):
            log_w = np.log(w)
        log_norm = log_w - 0.5 * (d * _LOG_2PI + log_det)
        for name, arr in (("weights", w), ("means", means), ("covs", covs), ("_chol", chol), ("_log_norm", log_norm)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def cov(self) -> np.ndarray:
        m = self.mean()
        second = np.einsum("k,kij->ij", self.weights, self.covs) + np.einsum(
            "k,ki,kj->ij", self.weights, self.means, self.means
        )
        return second - np.outer(m, m)

    def component_log_densities(self, x) -> np.ndarray:
        """``log(pi_k) + log N(x; mu_k, Sigma_k)`` for every component, shape ``(n, K)``."""
        x2, _ = _as_batch(x, self.dim)
        out = np.empty((x2.shape[0], self.n_components))
        for j in range(self.n_components):
            z = solve_triangular(self._chol[j], (x2 - self.means[j]).T, lower=True)
            out[:, j] = self._log_norm[j] - 0.5 * np.sum(z * z, axis=0)
        return out

    def to_config(self) -> dict:
        return {
            "type": "gmm",
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covs": self.covs.tolist(),
        }


DataDistribution = Union[Discrete, GaussianMixture]
# q(x_t) is always a mixture; the alias names that role.
GaussianMixtureDensity = GaussianMixture


def from_config(cfg: dict) -> DataDistribution:
    """Parse ``{"type": "discrete", ...}`` or ``{"type": "gmm", ...}``."""
    kind = cfg.get("type")
    if kind == "discrete":
        pts = cfg["points"]
        return Discrete(pts, cfg.get("weights", np.full(len(pts), 1.0 / len(pts))))
    if kind == "gmm":
        return GaussianMixture(cfg["weights"], cfg["means"], cfg["covs"])
    raise ValueError(f"unknown distribution type {kind!r}")


def marginal_qt(dist: DataDistribution, s: NoiseSchedule, t: int) -> GaussianMixture:
    """Diffused marginal q(x_t) as a Gaussian mixture.

    A point x_i becomes N(sqrt(ab) x_i, (1-ab) I); a component N(mu, Sigma)
    becomes N(sqrt(ab) mu, ab Sigma + (1-ab) I). Weights are unchanged.
    """
    if int(t) < 1:
        raise ValueError("marginal_qt needs t >= 1")
    ab = s.alpha_bar(t)
    eye = np.eye(dist.dim)
    if isinstance(dist, Discrete):
        k = dist.points.shape[0]
        covs = np.broadcast_to((1.0 - ab) * eye, (k, dist.dim, dist.dim)).copy()
        return GaussianMixture(dist.weights, np.sqrt(ab) * dist.points, covs)
    covs = ab * dist.covs + (1.0 - ab) * eye
    return GaussianMixture(dist.weights, np.sqrt(ab) * dist.means, covs)


def log_density(g: GaussianMixture, x):
    """Log-density of the mixture at ``x`` (shape ``(d,)`` or ``(n, d)``), via log-sum-exp."""
    _, single = _as_batch(x, g.dim)
    out = logsumexp(g.component_log_densities(x), axis=1)
    return float(out[0]) if single else out


def score(g: GaussianMixture, x):
    """Gradient of the log-density, ``sum_k r_k(x) Sigma_k^{-1} (mu_k - x)``.

    ``r_k`` are the component responsibilities at ``x``, normalised by
    subtracting the maximum log-weight before exponentiating.
    """
    x2, single = _as_batch(x, g.dim)
    logp = g.component_log_densities(x2)
    r = np.exp(logp - logp.max(axis=1, keepdims=True))
    r /= r.sum(axis=1, keepdims=True)
    out = np.zeros_like(x2)
    for j in range(g.n_components):
        prec_dir = cho_solve((g._chol[j], True), (g.means[j] - x2).T).T
        out += r[:, j : j + 1] * prec_dir
    return out[0] if single else out


def sample(dist: DataDistribution, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw ``n`` i.i.d. samples of shape ``(n, d)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if isinstance(dist, Discrete):
        idx = rng.choice(dist.points.shape[0], size=n, p=dist.weights)
        return dist.points[idx].copy()
    idx = rng.choice(dist.n_components, size=n, p=dist.weights)
    z = rng.standard_normal((n, dist.dim))
    return dist.means[idx] + np.einsum("nij,nj->ni", dist._chol[idx], z)


def responsibilities(g: GaussianMixture, x) -> np.ndarray:
    """Posterior component probabilities at ``x``, shape ``(n, K)``."""
    logp = g.component_log_densities(x)
    return np.exp(logp - logsumexp(logp, axis=1, keepdims=True))
