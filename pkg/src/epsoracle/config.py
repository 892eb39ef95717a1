"""JSON experiment configuration and the bundled golden configs."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

from epsoracle import distributions as D
from epsoracle.schedule import NoiseSchedule

GOLDEN = ("dirac", "gauss1d", "twopoint1d", "gmm3_1d", "gmm2_2d")

DEFAULT_TOLERANCES = {
    "identity": 1e-8,
    "quadrature": 1e-6,
    "mc_sigma": 4.0,
    "mc_pass_rate": 0.99,
    "score_fd": 1e-5,
    "rmse": 0.05,
    "stationarity": 1e-12,
    "gateaux_sigma": 3.0,
    "gateaux_min_pass": 9,
    "w1": 0.1,
    "var_rtol": 0.1,
}

DEFAULT_SECTIONS = {
    "theorem": {"n_probes": 20, "mc_samples": 100_000, "quad_nodes": None},
    "identity": {"n_probes": 100, "far_tail": False, "fd_step": 1e-5},
    "train": {
        "family": "grid",
        "resolution": None,
        "n_centers": 25,
        "ridge": 1e-8,
        "n_samples": 200_000,
        "n_eval": 20_000,
        "timesteps": None,
        "gateaux_directions": 10,
        "gateaux_n": 20_000,
        "s_values": [-0.2, -0.1, -0.05, 0.05, 0.1, 0.2],
    },
    "sample": {"n_samples": 10_000, "variance": "beta", "predictor": "oracle", "init": "standard"},
}

_TOP_KEYS = {"name", "seed", "schedule", "distribution", "timesteps", "tolerances", "output_dir"} | set(DEFAULT_SECTIONS)


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    name: str
    seed: int
    schedule: NoiseSchedule
    distribution: D.DataDistribution
    timesteps: list
    tolerances: dict
    sections: dict
    output_dir: Optional[str] = None
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, cfg: dict) -> "ExperimentConfig":
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(cfg) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "seed" not in cfg:
            raise ConfigError("config needs an explicit integer seed")
        for key in ("schedule", "distribution"):
            if key not in cfg:
                raise ConfigError(f"config is missing {key!r}")
        try:
            seed = int(cfg["seed"])
            schedule = NoiseSchedule.from_config(cfg["schedule"])
            dist = D.from_config(cfg["distribution"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        timesteps = [int(t) for t in cfg.get("timesteps", [schedule.T])]
        if not timesteps or any(not 1 <= t <= schedule.T for t in timesteps):
            raise ConfigError(f"timesteps must lie in [1, {schedule.T}]")
        tolerances = {**DEFAULT_TOLERANCES, **cfg.get("tolerances", {})}
        if any(float(v) < 0 for v in tolerances.values()):
            raise ConfigError("tolerances must be nonnegative")
        sections = {}
        for name, defaults in DEFAULT_SECTIONS.items():
            given = cfg.get(name, {})
            extra = set(given) - set(defaults)
            if extra:
                raise ConfigError(f"unknown keys in {name!r}: {sorted(extra)}")
            sections[name] = {**defaults, **given}
        return cls(
            name=str(cfg.get("name", "experiment")),
            seed=seed,
            schedule=schedule,
            distribution=dist,
            timesteps=timesteps,
            tolerances=tolerances,
            sections=sections,
            output_dir=cfg.get("output_dir"),
            raw=copy.deepcopy(cfg),
        )

    def with_overrides(self, seed: Optional[int] = None, tol: Optional[dict] = None) -> "ExperimentConfig":
        raw = copy.deepcopy(self.raw)
        if seed is not None:
            raw["seed"] = int(seed)
        if tol:
            raw["tolerances"] = {**raw.get("tolerances", {}), **tol}
        return ExperimentConfig.from_dict(raw)


def golden_path(name: str) -> Path:
    return Path(str(resources.files("epsoracle") / "configs" / f"{name}.json"))


def load_config(path_or_name: str) -> ExperimentConfig:
    """Load a config file, or a bundled golden config by bare name."""
    path = Path(path_or_name)
    if not path.exists() and not path.suffix:
        path = golden_path(path_or_name)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path_or_name!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    return ExperimentConfig.from_dict(raw)
