"""Discrete noise schedule and the forward diffusion process.

With ``alpha_t = 1 - beta_t`` and ``alpha_bar_t = prod_{s<=t} alpha_s`` the
forward process at timestep ``t`` is::

    x_t = sqrt(alpha_bar_t) * x_0 + sqrt(1 - alpha_bar_t) * eps,  eps ~ N(0, I)

Timesteps are 1-based; ``alpha_bar(0) == 1`` by convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Immutable table of ``beta_t``, ``alpha_t`` and ``alpha_bar_t`` for t = 1..T.

    Arrays are stored 0-based (``betas[t - 1]`` is beta_t); use the accessor
    methods for 1-based lookups.
    """

    betas: np.ndarray
    alphas: np.ndarray = field(init=False, repr=False)
    alpha_bars: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        betas = np.array(self.betas, dtype=np.float64).reshape(-1)
        if betas.size == 0:
            raise ValueError("schedule needs at least one timestep")
        if not np.all((betas > 0.0) & (betas < 1.0)):
            raise ValueError("all betas must lie strictly inside (0, 1)")
        alphas = 1.0 - betas
        # extended-precision cumulative product, rounded once
        alpha_bars = np.cumprod(alphas.astype(np.longdouble)).astype(np.float64)
        for name, arr in (("betas", betas), ("alphas", alphas), ("alpha_bars", alpha_bars)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def T(self) -> int:
        return int(self.betas.size)

    def _check(self, t: int, allow_zero: bool = False) -> int:
        t = int(t)
        lo = 0 if allow_zero else 1
        if not lo <= t <= self.T:
            raise ValueError(f"timestep {t} outside [{lo}, {self.T}]")
        return t

    def beta(self, t: int) -> float:
        return float(self.betas[self._check(t) - 1])

    def alpha(self, t: int) -> float:
        return float(self.alphas[self._check(t) - 1])

    def alpha_bar(self, t: int) -> float:
        t = self._check(t, allow_zero=True)
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])

    def to_config(self) -> dict:
        return {"type": "explicit", "betas": self.betas.tolist()}

    @classmethod
    def from_config(cls, cfg: dict) -> "NoiseSchedule":
        """Build a schedule from its JSON form.

        Accepts ``{"type": "linear", "T", "beta_start", "beta_end"}`` or
        ``{"type": "explicit", "betas": [...]}``.
        """
        kind = cfg.get("type", "linear")
        if kind == "linear":
            return build_linear_schedule(
                int(cfg.get("T", 1000)),
                float(cfg.get("beta_start", 1e-4)),
                float(cfg.get("beta_end", 0.02)),
            )
        if kind == "explicit":
            return cls(np.asarray(cfg["betas"], dtype=np.float64))
        raise ValueError(f"unknown schedule type {kind!r}")


def build_linear_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linearly spaced betas from ``beta_start`` (t=1) to ``beta_end`` (t=T)."""
    if T < 1:
        raise ValueError("T must be a positive integer")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    return NoiseSchedule(np.linspace(beta_start, beta_end, T))


def forward_sample(s: NoiseSchedule, x0, t: int, rng: np.random.Generator):
    """Diffuse ``x0`` to timestep ``t``.

    Args:
        s: Noise schedule.
        x0: Clean data, shape ``(d,)`` or ``(n, d)``.
        t: Timestep in ``1..T``.
        rng: Source of the Gaussian noise.

    Returns:
        Tuple ``(xt, eps)`` with the same shape as ``x0``.
    """
    if int(t) == 0:
        raise ValueError("forward_sample needs t >= 1; t = 0 adds no noise")
    ab = s.alpha_bar(t)
    x0 = np.asarray(x0, dtype=np.float64)
    eps = rng.standard_normal(x0.shape)
    xt = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
    return xt, eps


def noise_from_pair(s: NoiseSchedule, x0, xt, t: int) -> np.ndarray:
    """Recover the forward noise ``(xt - sqrt(ab) x0) / sqrt(1 - ab)`` from a pair."""
    if int(t) == 0:
        raise ValueError("noise is undefined at t = 0")
    ab = s.alpha_bar(t)
    x0 = np.asarray(x0, dtype=np.float64)
    xt = np.asarray(xt, dtype=np.float64)
    return (xt - np.sqrt(ab) * x0) / np.sqrt(1.0 - ab)
