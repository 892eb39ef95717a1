"""Least-squares fits of the denoising objective at a single timestep.

Each predictor serves exactly one timestep. Two finite-dimensional families
stand in for "all functions of x_t":

* :class:`GridPredictor` - node values on a tensor grid, multilinear in
  between. Its least-squares fit is the tent-weighted mean of the sampled
  noise around each node, so no iterative optimiser is involved.
* :class:`RBFPredictor` - Gaussian bumps with ridge-regularised coefficients.

The remaining functions measure how close a predictor is to the closed-form
optimum and probe the first-order optimality condition directly.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy.ndimage import distance_transform_edt

from epsoracle import distributions as D
from epsoracle.oracle import epsilon_star
from epsoracle.schedule import NoiseSchedule

Predictor = Callable[[np.ndarray], np.ndarray]


class UndersampledError(ValueError):
    """Raised when a fit has fewer than 10 samples per free parameter."""


# -- families -----------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    """Grid family. ``resolution=None`` picks nodes per axis from the sample size."""

    resolution: Optional[int] = None
    lower: Optional[tuple] = None
    upper: Optional[tuple] = None


@dataclass(frozen=True)
class RBFSpec:
    n_centers: int = 25
    bandwidth: Optional[float] = None
    ridge: float = 1e-8


FamilySpec = Union[GridSpec, RBFSpec]


def _corners(x: np.ndarray, lower: np.ndarray, upper: np.ndarray, shape: tuple):
    """Yield ``(flat_node_index, weight)`` for the 2^d corners around each row of ``x``.

    Points outside the box are clamped onto it.
    """
    res = np.asarray(shape)
    u = (np.clip(x, lower, upper) - lower) / (upper - lower) * (res - 1)
    base = np.minimum(np.floor(u).astype(int), res - 2)
    frac = u - base
    for offs in itertools.product((0, 1), repeat=x.shape[1]):
        offs = np.asarray(offs)
        idx = base + offs
        w = np.prod(np.where(offs == 1, frac, 1.0 - frac), axis=1)
        yield np.ravel_multi_index(tuple(idx.T), shape), w


@dataclass
class GridPredictor:
    """Multilinear interpolant of node values; constant extrapolation outside the box."""

    t: int
    lower: np.ndarray
    upper: np.ndarray
    values: np.ndarray  # shape (*resolution, d)
    flagged: np.ndarray  # nodes filled from a neighbour, shape resolution

    @property
    def shape(self) -> tuple:
        return self.flagged.shape

    @property
    def n_params(self) -> int:
        return int(self.values.size)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        x2 = np.atleast_2d(x)
        flat = self.values.reshape(-1, self.values.shape[-1])
        out = np.zeros((x2.shape[0], flat.shape[1]))
        for idx, w in _corners(x2, self.lower, self.upper, self.shape):
            out += w[:, None] * flat[idx]
        return out[0] if x.ndim <= 1 else out

    def in_flagged_cell(self, x) -> np.ndarray:
        x2 = np.atleast_2d(np.asarray(x, dtype=np.float64))
        bad = np.zeros(x2.shape[0], dtype=bool)
        fl = self.flagged.reshape(-1)
        for idx, w in _corners(x2, self.lower, self.upper, self.shape):
            bad |= fl[idx] & (w > 0)
        return bad

    def to_dict(self) -> dict:
        return {
            "family": "grid",
            "t": self.t,
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
            "resolution": list(self.shape),
            "values": self.values.tolist(),
            "flagged": self.flagged.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridPredictor":
        return cls(
            t=int(d["t"]),
            lower=np.asarray(d["lower"], dtype=np.float64),
            upper=np.asarray(d["upper"], dtype=np.float64),
            values=np.asarray(d["values"], dtype=np.float64),
            flagged=np.asarray(d["flagged"], dtype=bool),
        )


@dataclass
class RBFPredictor:
    t: int
    centers: np.ndarray
    bandwidth: float
    coefs: np.ndarray
    ridge: float = 1e-8

    @property
    def n_params(self) -> int:
        return int(self.coefs.size)

    def features(self, x: np.ndarray) -> np.ndarray:
        sq = np.sum((x[:, None, :] - self.centers[None, :, :]) ** 2, axis=2)
        return np.exp(-0.5 * sq / self.bandwidth**2)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = self.features(np.atleast_2d(x)) @ self.coefs
        return out[0] if x.ndim <= 1 else out

    def in_flagged_cell(self, x) -> np.ndarray:
        return np.zeros(np.atleast_2d(x).shape[0], dtype=bool)

    def to_dict(self) -> dict:
        return {
            "family": "rbf",
            "t": self.t,
            "centers": self.centers.tolist(),
            "bandwidth": self.bandwidth,
            "coefs": self.coefs.tolist(),
            "ridge": self.ridge,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RBFPredictor":
        return cls(
            int(d["t"]),
            np.asarray(d["centers"], dtype=np.float64),
            float(d["bandwidth"]),
            np.asarray(d["coefs"], dtype=np.float64),
            float(d.get("ridge", 1e-8)),
        )


PredictorFunction = Union[GridPredictor, RBFPredictor]


def predictor_from_dict(d: dict) -> PredictorFunction:
    if d["family"] == "grid":
        return GridPredictor.from_dict(d)
    if d["family"] == "rbf":
        return RBFPredictor.from_dict(d)
    raise ValueError(f"unknown predictor family {d['family']!r}")


def auto_resolution(n_samples: int, d: int) -> int:
    """Nodes per axis growing like n^(1/(4+d)), the bias/variance balance for tent smoothing."""
    return max(9, int(round(AUTO_RES_SCALE * n_samples ** (1.0 / (4 + d)))))


def _grid_resolution(spec: GridSpec, n_samples: int, d: int) -> int:
    return spec.resolution if spec.resolution is not None else auto_resolution(n_samples, d)


def _n_params(spec: FamilySpec, d: int, n_samples: int) -> int:
    if isinstance(spec, GridSpec):
        return _grid_resolution(spec, n_samples, d) ** d * d
    return spec.n_centers**d * d


BOX_QUANTILE = 5e-4
AUTO_RES_SCALE = 8.0


def _box(spec_lower, spec_upper, xt):
    """Explicit bounds, or central sample quantiles (stable as n grows, unlike min/max)."""
    lo_q, hi_q = np.quantile(xt, [BOX_QUANTILE, 1.0 - BOX_QUANTILE], axis=0)
    lower = lo_q if spec_lower is None else np.asarray(spec_lower, dtype=np.float64)
    upper = hi_q if spec_upper is None else np.asarray(spec_upper, dtype=np.float64)
    if np.any(upper <= lower):
        raise ValueError("grid box is empty")
    return lower, upper


def _fit_grid(spec: GridSpec, t: int, xt: np.ndarray, eps: np.ndarray) -> GridPredictor:
    d = xt.shape[1]
    res = _grid_resolution(spec, len(xt), d)
    if res < 2:
        raise ValueError("grid resolution must be >= 2")
    lower, upper = _box(spec.lower, spec.upper, xt)
    inside = np.all((xt >= lower) & (xt <= upper), axis=1)
    xt, eps = xt[inside], eps[inside]
    shape = (res,) * d
    size = res**d
    den = np.zeros(size)
    num = np.zeros((size, d))
    for idx, w in _corners(xt, lower, upper, shape):
        den += np.bincount(idx, weights=w, minlength=size)
        for j in range(d):
            num[:, j] += np.bincount(idx, weights=w * eps[:, j], minlength=size)
    empty = den <= 0
    if np.all(empty):
        raise ValueError("no training samples fell inside the grid")
    values = np.zeros_like(num)
    values[~empty] = num[~empty] / den[~empty, None]
    empty = empty.reshape(shape)
    values = values.reshape(shape + (d,))
    if np.any(empty):
        _, nearest = distance_transform_edt(empty, return_indices=True)
        values = values[tuple(nearest)]
    return GridPredictor(t, lower, upper, values, empty)


def _fit_rbf(spec: RBFSpec, t: int, xt: np.ndarray, eps: np.ndarray) -> RBFPredictor:
    d = xt.shape[1]
    lower, upper = _box(None, None, xt)
    axes = [np.linspace(lower[i], upper[i], spec.n_centers) for i in range(d)]
    centers = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    spacing = float(np.max((upper - lower) / max(spec.n_centers - 1, 1)))
    bandwidth = spec.bandwidth or spacing
    pred = RBFPredictor(t, centers, bandwidth, np.zeros((len(centers), d)), spec.ridge)
    phi = pred.features(xt)
    gram = phi.T @ phi / len(xt)
    rhs = phi.T @ eps / len(xt)
    ridge = spec.ridge
    while True:
        try:
            chol = np.linalg.cholesky(gram + ridge * np.eye(len(centers)))
            break
        except np.linalg.LinAlgError:
            ridge = ridge * 100 if ridge > 0 else 1e-12
            warnings.warn(f"normal equations singular; increasing ridge to {ridge:g}", RuntimeWarning)
    pred.coefs = np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))
    pred.ridge = ridge
    return pred


# -- evaluation ---------------------------------------------------------------


@dataclass
class OracleComparison:
    """Predictor vs. closed-form optimum on points drawn from q(x_t).

    Sampling from q(x_t) makes every mean here density-weighted. ``rmse`` is
    restricted to the region where q(x_t) is at least ``region_frac`` of its
    maximum; ``rmse_by_decile[0]`` is the highest-density tenth.
    """

    rmse: float
    rmse_all: float
    rmse_by_decile: list
    n_eval: int
    n_region: int
    n_excluded: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class FitReport:
    family: str
    t: int
    n_samples: int
    n_params: int
    final_loss: float
    comparison: Optional[OracleComparison] = None
    stationarity_mean_norm: Optional[float] = None
    n_flagged: int = 0
    ridge: Optional[float] = None

    def to_dict(self) -> dict:
        out = {k: v for k, v in self.__dict__.items() if k != "comparison"}
        out["comparison"] = None if self.comparison is None else self.comparison.to_dict()
        return out


def _draw_xt(dist, s, t, n, rng):
    x0 = D.sample(dist, rng, n)
    ab = s.alpha_bar(t)
    eps = rng.standard_normal(x0.shape)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps, eps


def compare_to_oracle(
    f: Predictor,
    dist: D.DataDistribution,
    s: NoiseSchedule,
    t: int,
    n_eval: int,
    rng: np.random.Generator,
    region_frac: float = 0.01,
) -> OracleComparison:
    if n_eval < 1000:
        raise ValueError("n_eval must be >= 1000")
    x, _ = _draw_xt(dist, s, t, n_eval, rng)
    g = D.marginal_qt(dist, s, t)
    logq = D.log_density(g, x)
    logq_max = max(logq.max(), D.log_density(g, g.means).max())
    sq = np.sum((np.asarray(f(x)).reshape(x.shape) - epsilon_star(dist, s, t, x)) ** 2, axis=1)
    excluded = getattr(f, "in_flagged_cell", lambda z: np.zeros(len(z), bool))(x)
    keep = ~excluded
    region = keep & (logq >= logq_max + np.log(region_frac))
    order = np.argsort(-logq[keep])
    deciles = [float(np.sqrt(np.mean(chunk))) for chunk in np.array_split(sq[keep][order], 10)]
    return OracleComparison(
        rmse=float(np.sqrt(np.mean(sq[region]))) if region.any() else float("nan"),
        rmse_all=float(np.sqrt(np.mean(sq[keep]))),
        rmse_by_decile=deciles,
        n_eval=n_eval,
        n_region=int(region.sum()),
        n_excluded=int(excluded.sum()),
    )


def stationarity_residual(f: Predictor, dist: D.DataDistribution, s: NoiseSchedule, t: int, xt) -> np.ndarray:
    """``g(x_t) = q(x_t) (eps*(x_t) - f(x_t))``; vanishes exactly at the optimum."""
    x = np.asarray(xt, dtype=np.float64)
    x2 = np.atleast_2d(x)
    q = np.exp(D.log_density(D.marginal_qt(dist, s, t), x2))
    out = q[:, None] * (epsilon_star(dist, s, t, x2) - np.asarray(f(x2)).reshape(x2.shape))
    return out[0] if x.ndim <= 1 else out


def fit_least_squares(
    spec: FamilySpec,
    dist: D.DataDistribution,
    s: NoiseSchedule,
    t: int,
    n_samples: int,
    rng: np.random.Generator,
    n_eval: Optional[int] = 10_000,
):
    """Fit one predictor for timestep ``t`` on ``n_samples`` forward draws.

    Args:
        spec: :class:`GridSpec` or :class:`RBFSpec`.
        dist: Data distribution q(x_0).
        s: Noise schedule.
        t: Timestep served by the fitted predictor.
        n_samples: Number of ``(x_t, eps)`` training pairs; must be at least
            ten times the number of free parameters.
        rng: Generator for training and evaluation draws.
        n_eval: Evaluation points for the oracle comparison, or ``None`` to
            skip it.

    Returns:
        ``(predictor, FitReport)``.
    """
    need = 10 * _n_params(spec, dist.dim, n_samples)
    if n_samples < need:
        raise UndersampledError(f"{n_samples} samples for {need // 10} parameters; need >= {need}")
    xt, eps = _draw_xt(dist, s, t, n_samples, rng)
    if isinstance(spec, GridSpec):
        pred = _fit_grid(spec, t, xt, eps)
        family, n_flagged, ridge = "grid", int(pred.flagged.sum()), None
    elif isinstance(spec, RBFSpec):
        pred = _fit_rbf(spec, t, xt, eps)
        family, n_flagged, ridge = "rbf", 0, pred.ridge
    else:
        raise TypeError(f"unsupported family spec {spec!r}")
    loss = float(np.mean(np.sum((eps - pred(xt)) ** 2, axis=1)))
    report = FitReport(family, int(t), n_samples, pred.n_params, loss, n_flagged=n_flagged, ridge=ridge)
    if n_eval:
        report.comparison = compare_to_oracle(pred, dist, s, t, n_eval, rng)
        xe, _ = _draw_xt(dist, s, t, n_eval, rng)
        report.stationarity_mean_norm = float(
            np.mean(np.linalg.norm(stationarity_residual(pred, dist, s, t, xe), axis=1))
        )
    return pred, report


# -- first-order optimality -----------------------------------------------------


def random_perturbation(d: int, rng: np.random.Generator, n_terms: int = 3, scale: float = 0.5) -> Predictor:
    """Smooth bounded direction ``h(x) = sum_m a_m sin(w_m . x + phi_m)`` with random parameters."""
    amp = scale * rng.standard_normal((n_terms, d))
    freq = rng.standard_normal((n_terms, d))
    phase = rng.uniform(0.0, 2.0 * np.pi, n_terms)

    def h(x):
        x2 = np.atleast_2d(x)
        return np.sin(x2 @ freq.T + phase) @ amp

    return h


@dataclass
class GateauxReport:
    """Quadratic fit ``F_h(s) ~ c0 + linear * s + quadratic * s^2``."""

    s_values: list
    f_values: list
    linear: float
    linear_stderr: float
    quadratic: float
    quadratic_stderr: float
    n: int

    def linear_is_zero(self, n_sigma: float = 3.0) -> bool:
        """``|linear| <= n_sigma * stderr``, with a rounding floor for noiseless cases."""
        floor = 1e3 * np.finfo(float).eps * max(abs(v) for v in self.f_values)
        return abs(self.linear) <= n_sigma * self.linear_stderr + floor

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        out["linear_is_zero"] = self.linear_is_zero()
        return out


def gateaux_derivative_check(
    f: Predictor,
    h: Predictor,
    dist: D.DataDistribution,
    s: NoiseSchedule,
    t: int,
    s_values,
    n: int,
    rng: np.random.Generator,
) -> GateauxReport:
    """Estimate the objective along ``f + s h`` and fit a quadratic in ``s``.

    The same ``(x_0, eps)`` draws are reused for every ``s`` (common random
    numbers). The quadratic is fitted per draw and averaged, which gives a
    standard error for each coefficient; at the optimum the linear
    coefficient should vanish up to sampling noise.
    """
    s_values = np.asarray(s_values, dtype=np.float64)
    if s_values.size < 3 or not np.allclose(np.sort(s_values), np.sort(-s_values)):
        raise ValueError("s_values must be a symmetric set of at least 3 points")
    xt, eps = _draw_xt(dist, s, t, n, rng)
    r = eps - np.asarray(f(xt)).reshape(xt.shape)
    hv = np.asarray(h(xt)).reshape(xt.shape)
    per = np.stack([np.sum((r - sv * hv) ** 2, axis=1) for sv in s_values], axis=1)
    design = np.vander(s_values, 3, increasing=True)
    coefs = per @ np.linalg.pinv(design).T
    mean = coefs.mean(axis=0)
    se = coefs.std(axis=0, ddof=1) / np.sqrt(n)
    return GateauxReport(
        s_values=s_values.tolist(),
        f_values=per.mean(axis=0).tolist(),
        linear=float(mean[1]),
        linear_stderr=float(se[1]),
        quadratic=float(mean[2]),
        quadratic_stderr=float(se[2]),
        n=n,
    )
