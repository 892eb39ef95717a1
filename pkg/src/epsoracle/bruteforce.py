"""Brute-force evaluations used as ground truth for the closed forms.

Nothing here calls :mod:`epsoracle.oracle`; the integrals are evaluated from
the joint density ``q(x_t | x_0) q(x_0)`` directly, by grid quadrature or
self-normalised importance sampling with the data distribution as proposal.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.integrate import trapezoid

from epsoracle import distributions as D
from epsoracle.schedule import NoiseSchedule

DEFAULT_NODES = {1: 2049, 2: 257}
GRID_HALF_WIDTH = 8.0
MIN_ESS = 10.0


@dataclass(frozen=True)
class EstimateWithError:
    """A vector estimate plus its error measure.

    Monte Carlo fills ``stderr`` (and ``ess``); quadrature fills ``bound``,
    the max-norm change under halving the grid resolution. The bound is a
    refinement heuristic, not a rigorous enclosure.
    """

    value: np.ndarray
    n_evals: int
    stderr: Optional[np.ndarray] = None
    bound: Optional[float] = None
    ess: Optional[float] = None
    unreliable: bool = False
    coarse: bool = False


def _log_kernel(ab: float, xt: np.ndarray, x0: np.ndarray) -> np.ndarray:
    """log q(x_t | x_0) for rows of ``x0`` (shape ``(..., d)``)."""
    d = x0.shape[-1]
    var = 1.0 - ab
    diff = xt - np.sqrt(ab) * x0
    return -0.5 * np.sum(diff * diff, axis=-1) / var - 0.5 * d * np.log(2.0 * np.pi * var)


def _log_gauss(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    d = mean.size
    prec = np.linalg.inv(cov)
    diff = x - mean
    quad = np.einsum("...i,ij,...j->...", diff, prec, diff)
    return -0.5 * (quad + d * np.log(2.0 * np.pi) + np.log(np.linalg.det(cov)))


def _component_box(mean, cov, ab, xt):
    """Axis-aligned box of +-8 std around one component's posterior bulk."""
    d = mean.size
    prec = np.linalg.inv(cov) + (ab / (1.0 - ab)) * np.eye(d)
    post_cov = np.linalg.inv(prec)
    centre = post_cov @ (np.linalg.solve(cov, mean) + np.sqrt(ab) / (1.0 - ab) * xt)
    half = GRID_HALF_WIDTH * np.sqrt(np.diag(post_cov))
    return centre - half, centre + half


def _grid_integrals(dist: D.GaussianMixture, ab: float, xt: np.ndarray, nodes: int, stride: int):
    """Per-component log-integrand on tensor grids, plus the node axes."""
    pieces = []
    for k in range(dist.n_components):
        lo, hi = _component_box(dist.means[k], dist.covs[k], ab, xt)
        axes = [np.linspace(lo[i], hi[i], nodes)[::stride] for i in range(dist.dim)]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        with np.errstate(divide="ignore"):
            logw = (
                np.log(dist.weights[k])
                + _log_gauss(mesh, dist.means[k], dist.covs[k])
                + _log_kernel(ab, xt, mesh)
            )
        pieces.append((axes, mesh, logw))
    return pieces


def _integrate(pieces, ab: float, xt: np.ndarray) -> np.ndarray:
    shift = max(np.max(p[2]) for p in pieces)
    num = np.zeros(xt.size)
    den = 0.0
    for axes, mesh, logw in pieces:
        w = np.exp(logw - shift)
        eps = (xt - np.sqrt(ab) * mesh) / np.sqrt(1.0 - ab)
        integrand = np.concatenate([w[..., None], eps * w[..., None]], axis=-1)
        for ax in axes:
            integrand = trapezoid(integrand, ax, axis=0)
        den += integrand[0]
        num += integrand[1:]
    return num / den


def epsilon_star_quadrature(
    dist: D.DataDistribution,
    s: NoiseSchedule,
    t: int,
    xt,
    nodes: Optional[int] = None,
    tol: Optional[float] = None,
) -> EstimateWithError:
    """Ratio of grid integrals ``∫ eps q(x_t|x_0) q(x_0) dx_0 / ∫ q(x_t|x_0) q(x_0) dx_0``.

    Each mixture component is integrated on its own tensor grid (trapezoid
    rule, ``nodes`` per axis, odd so the grid halves cleanly). Discrete data
    reduce to an exact weighted sum over atoms. ``bound`` is the change
    obtained by dropping every other node; when it exceeds ``tol`` the
    estimate is flagged ``coarse``.
    """
    ab = s.alpha_bar(t)
    xt = np.asarray(xt, dtype=np.float64).reshape(-1)
    if xt.size != dist.dim:
        raise ValueError("probe dimension mismatch")

    if isinstance(dist, D.Discrete):
        with np.errstate(divide="ignore"):
            logw = np.log(dist.weights) + _log_kernel(ab, xt, dist.points)
        w = np.exp(logw - logw.max())
        eps = (xt - np.sqrt(ab) * dist.points) / np.sqrt(1.0 - ab)
        return EstimateWithError(value=(w @ eps) / w.sum(), n_evals=len(w), bound=0.0)

    if dist.dim > 2:
        raise ValueError("grid quadrature is limited to d <= 2")
    nodes = nodes or DEFAULT_NODES[dist.dim]
    if nodes % 2 == 0 or nodes < 5:
        raise ValueError("nodes must be odd and >= 5")
    fine = _integrate(_grid_integrals(dist, ab, xt, nodes, 1), ab, xt)
    coarse = _integrate(_grid_integrals(dist, ab, xt, nodes, 2), ab, xt)
    bound = float(np.max(np.abs(fine - coarse)))
    n_evals = dist.n_components * nodes**dist.dim
    return EstimateWithError(
        value=fine,
        n_evals=n_evals,
        bound=bound,
        coarse=tol is not None and bound > tol,
    )


def epsilon_star_monte_carlo(
    dist: D.DataDistribution,
    s: NoiseSchedule,
    t: int,
    xt,
    n: int,
    rng: np.random.Generator,
) -> EstimateWithError:
    """Self-normalised importance sampling with proposal q(x_0) and weights q(x_t | x_0).

    The standard error comes from the delta method for the ratio estimator,
    ``sqrt(sum_j W_j^2 (eps_j - estimate)^2)`` with normalised weights ``W``.
    Estimates with effective sample size below 10 are flagged unreliable.
    """
    if n < 100:
        raise ValueError("Monte Carlo estimate needs n >= 100")
    ab = s.alpha_bar(t)
    xt = np.asarray(xt, dtype=np.float64).reshape(-1)
    x0 = D.sample(dist, rng, n)
    logw = _log_kernel(ab, xt, x0)
    w = np.exp(logw - logw.max())
    w /= w.sum()
    eps = (xt - np.sqrt(ab) * x0) / np.sqrt(1.0 - ab)
    est = w @ eps
    stderr = np.sqrt(np.sum((w * w)[:, None] * (eps - est) ** 2, axis=0))
    ess = float(1.0 / np.sum(w * w))
    return EstimateWithError(value=est, n_evals=n, stderr=stderr, ess=ess, unreliable=ess < MIN_ESS)


def score_finite_difference(g: D.GaussianMixture, x, h: float = 1e-5) -> np.ndarray:
    """Central difference of :func:`distributions.log_density`, one coordinate at a time."""
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.asarray(x, dtype=np.float64)
    x2 = np.atleast_2d(x)
    out = np.empty_like(x2)
    for j in range(x2.shape[1]):
        step = np.zeros(x2.shape[1])
        step[j] = h
        out[:, j] = (D.log_density(g, x2 + step) - D.log_density(g, x2 - step)) / (2.0 * h)
    return out[0] if x.ndim <= 1 else out


def loss_functional(
    f: Callable[[np.ndarray], np.ndarray],
    dist: D.DataDistribution,
    s: NoiseSchedule,
    t: int,
    n: int,
    rng: np.random.Generator,
):
    """Monte Carlo estimate of the denoising objective ``E |eps - f(x_t)|^2``.

    Returns:
        ``(loss, stderr)``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    x0 = D.sample(dist, rng, n)
    ab = s.alpha_bar(t)
    eps = rng.standard_normal(x0.shape)
    xt = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
    per = np.sum((eps - np.asarray(f(xt)).reshape(xt.shape)) ** 2, axis=1)
    stderr = float(per.std(ddof=1) / np.sqrt(n)) if n > 1 else float("inf")
    return float(per.mean()), stderr
