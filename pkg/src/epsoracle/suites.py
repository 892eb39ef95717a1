"""Verification suites behind the CLI subcommands.

Each suite returns a :class:`SuiteResult` holding JSONL-ready rows, CSV
aggregate rows and a pass flag. Randomness is keyed on ``(seed, suite, t)``
so results do not depend on how timesteps are spread over worker threads.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from epsoracle import bruteforce as B
from epsoracle import distributions as D
from epsoracle import oracle as O
from epsoracle import sampler as S
from epsoracle import trainer as TR
from epsoracle.config import ExperimentConfig

log = logging.getLogger(__name__)

SUITES = ("theorem", "identity", "train", "sample")
_SUITE_KEY = {name: i for i, name in enumerate(SUITES)}


@dataclass
class SuiteResult:
    suite: str
    passed: bool
    worst_error: float
    rows: list = field(default_factory=list)
    aggregate: list = field(default_factory=list)
    artifacts: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)


def suite_rng(seed: int, suite: str, t: int = 0) -> np.random.Generator:
    return np.random.default_rng([int(seed), _SUITE_KEY[suite], int(t)])


def _map(fn: Callable, items, jobs: int):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _mixed_err(a, b):
    abs_err, rel_err = O.identity_errors(np.atleast_2d(a), np.atleast_2d(b))
    return float(abs_err[0]), float(rel_err[0])


def _aggregate(rows, method: str, t: int) -> dict:
    sel = [r for r in rows if r["method"] == method and r["t"] == t]
    return {
        "t": t,
        "method": method,
        "n_probes": len(sel),
        "max_abs_err": max((r["abs_err"] for r in sel), default=float("nan")),
        "max_rel_err": max((r["rel_err"] for r in sel), default=float("nan")),
        "pass_rate": float(np.mean([r["pass"] for r in sel])) if sel else float("nan"),
    }


def _row(cfg: ExperimentConfig, suite: str, method: str, t: int, i: int, probe, **extra) -> dict:
    return {
        "suite": suite,
        "config": cfg.name,
        "config_hash": cfg.config_hash,
        "seed": cfg.seed,
        "method": method,
        "t": int(t),
        "probe_index": int(i),
        "probe": np.asarray(probe).tolist(),
        **extra,
    }


# -- verify-theorem -------------------------------------------------------------


def run_theorem(cfg: ExperimentConfig, jobs: int = 1) -> SuiteResult:
    """Closed-form optimum vs. grid quadrature and self-normalised IS."""
    sec, tol = cfg.sections["theorem"], cfg.tolerances
    dist, s = cfg.distribution, cfg.schedule
    use_quad = dist.dim <= 2

    def one(t):
        rng = suite_rng(cfg.seed, "theorem", t)
        probes = O.draw_probes(dist, s, t, sec["n_probes"], rng)
        closed = O.epsilon_star(dist, s, t, probes)
        rows = []
        for i, x in enumerate(probes):
            rows.append(_row(cfg, "theorem", "closed_form", t, i, x, value=closed[i].tolist()))
            if use_quad:
                q = B.epsilon_star_quadrature(dist, s, t, x, nodes=sec["quad_nodes"], tol=tol["quadrature"])
                a, r = _mixed_err(closed[i], q.value)
                rows.append(
                    _row(cfg, "theorem", "quadrature", t, i, x, value=q.value.tolist(), bound=q.bound,
                         coarse=q.coarse, n_evals=q.n_evals, abs_err=a, rel_err=r,
                         **{"pass": min(a, r) <= tol["quadrature"]})
                )
            mc = B.epsilon_star_monte_carlo(dist, s, t, x, sec["mc_samples"], rng)
            a, r = _mixed_err(closed[i], mc.value)
            # roundoff floor: a single-atom estimate has zero stderr
            within = bool(np.all(np.abs(mc.value - closed[i]) <= tol["mc_sigma"] * mc.stderr + 1e-12))
            rows.append(
                _row(cfg, "theorem", "monte_carlo", t, i, x, value=mc.value.tolist(), stderr=mc.stderr.tolist(),
                     ess=mc.ess, unreliable=mc.unreliable, abs_err=a, rel_err=r,
                     **{"pass": within and not mc.unreliable})
            )
        return rows

    per_t = _map(one, cfg.timesteps, jobs)
    rows = [r for chunk in per_t for r in chunk]
    methods = ["quadrature", "monte_carlo"] if use_quad else ["monte_carlo"]
    aggregate = [_aggregate(rows, m, t) for t in cfg.timesteps for m in methods]
    quad_rows = [r for r in rows if r["method"] == "quadrature"]
    mc_rows = [r for r in rows if r["method"] == "monte_carlo"]
    quad_ok = all(r["pass"] for r in quad_rows)
    mc_rate = float(np.mean([r["pass"] for r in mc_rows]))
    passed = quad_ok and mc_rate >= tol["mc_pass_rate"]
    worst = max((min(r["abs_err"], r["rel_err"]) for r in quad_rows), default=0.0)
    notes = [] if use_quad else [f"quadrature skipped for d={dist.dim} > 2"]
    notes.append(f"monte carlo pass rate {mc_rate:.4f}")
    return SuiteResult("theorem", passed, worst, rows, aggregate, notes=notes)


# -- verify-identity --------------------------------------------------------------


def run_identity(cfg: ExperimentConfig, jobs: int = 1, corrupt: float = 1.0) -> SuiteResult:
    """Posterior-mean route vs. score route, plus analytic score vs. finite differences."""
    sec, tol = cfg.sections["identity"], cfg.tolerances
    dist, s = cfg.distribution, cfg.schedule

    def one(t):
        rng = suite_rng(cfg.seed, "identity", t)
        probes = O.draw_probes(dist, s, t, sec["n_probes"], rng, far_tail=sec["far_tail"])
        rows = []
        for i, rep in enumerate(O.identity_sweep(dist, s, t, probes, tol["identity"], corrupt)):
            rows.append(_row(cfg, "identity", "closed_form", t, i, rep.probe, eps_direct=rep.eps_direct.tolist(),
                             eps_score=rep.eps_score.tolist(), abs_err=rep.abs_err, rel_err=rep.rel_err,
                             **{"pass": rep.passed}))
        g = D.marginal_qt(dist, s, t)
        analytic = D.score(g, probes)
        fd = B.score_finite_difference(g, probes, sec["fd_step"])
        abs_err, rel_err = O.identity_errors(analytic, fd)
        for i in range(len(probes)):
            rows.append(_row(cfg, "identity", "finite_difference", t, i, probes[i], abs_err=float(abs_err[i]),
                             rel_err=float(rel_err[i]), **{"pass": bool(min(abs_err[i], rel_err[i]) <= tol["score_fd"])}))
        return rows

    per_t = _map(one, cfg.timesteps, jobs)
    rows = [r for chunk in per_t for r in chunk]
    aggregate = [_aggregate(rows, m, t) for t in cfg.timesteps for m in ("closed_form", "finite_difference")]
    id_rows = [r for r in rows if r["method"] == "closed_form"]
    worst = max(min(r["abs_err"], r["rel_err"]) for r in id_rows)
    return SuiteResult("identity", all(r["pass"] for r in rows), worst, rows, aggregate)


# -- train ------------------------------------------------------------------------


def family_spec(sec: dict):
    if sec["family"] == "grid":
        return TR.GridSpec(resolution=sec["resolution"])
    if sec["family"] == "rbf":
        return TR.RBFSpec(n_centers=sec["n_centers"], ridge=sec["ridge"])
    raise ValueError(f"unknown family {sec['family']!r}")


def run_train(cfg: ExperimentConfig, jobs: int = 1) -> SuiteResult:
    """Least-squares fit vs. oracle, stationarity at the oracle, Gateaux check at the oracle."""
    sec, tol = cfg.sections["train"], cfg.tolerances
    dist, s = cfg.distribution, cfg.schedule
    timesteps = sec["timesteps"] or cfg.timesteps
    spec = family_spec(sec)

    def one(t):
        rng = suite_rng(cfg.seed, "train", t)
        rows, predictor = [], None
        try:
            predictor, rep = TR.fit_least_squares(spec, dist, s, t, sec["n_samples"], rng, n_eval=sec["n_eval"])
        except TR.UndersampledError as exc:
            log.warning("t=%d: %s", t, exc)
            rows.append(_row(cfg, "train", "fit", t, 0, [], error=str(exc), abs_err=float("inf"),
                             rel_err=float("inf"), **{"pass": False}))
        else:
            rmse = rep.comparison.rmse
            rows.append(_row(cfg, "train", "fit", t, 0, [], report=rep.to_dict(), abs_err=rmse, rel_err=rmse,
                             **{"pass": bool(rmse <= tol["rmse"])}))

        oracle_f = lambda x: O.epsilon_star(dist, s, t, x)  # noqa: E731
        probes = O.draw_probes(dist, s, t, 200, rng)
        g = TR.stationarity_residual(oracle_f, dist, s, t, probes)
        gmax = float(np.max(np.abs(g)))
        rows.append(_row(cfg, "train", "stationarity", t, 0, [], abs_err=gmax, rel_err=gmax,
                         **{"pass": gmax <= tol["stationarity"]}))

        n_zero = 0
        for k in range(sec["gateaux_directions"]):
            h = TR.random_perturbation(dist.dim, rng)
            gr = TR.gateaux_derivative_check(oracle_f, h, dist, s, t, sec["s_values"], sec["gateaux_n"], rng)
            ok = gr.linear_is_zero(tol["gateaux_sigma"])
            n_zero += ok
            z = abs(gr.linear) / gr.linear_stderr if gr.linear_stderr > 0 else float("inf")
            rows.append(_row(cfg, "train", "gateaux", t, k, [], linear=gr.linear, linear_stderr=gr.linear_stderr,
                             quadratic=gr.quadratic, abs_err=abs(gr.linear), rel_err=z, **{"pass": bool(ok)}))
        gate_ok = n_zero >= min(tol["gateaux_min_pass"], sec["gateaux_directions"])
        rows.append(_row(cfg, "train", "gateaux_gate", t, 0, [], n_zero=int(n_zero),
                         n_directions=sec["gateaux_directions"], abs_err=0.0, rel_err=0.0, **{"pass": bool(gate_ok)}))
        return rows, predictor

    results = _map(one, timesteps, jobs)
    rows = [r for chunk, _ in results for r in chunk]
    predictors = {str(t): p.to_dict() for t, (_, p) in zip(timesteps, results) if p is not None}
    aggregate = [_aggregate(rows, m, t) for t in timesteps for m in ("fit", "stationarity", "gateaux")]
    gated = [r for r in rows if r["method"] != "gateaux"]
    worst = max((r["abs_err"] for r in rows if r["method"] == "fit"), default=float("nan"))
    return SuiteResult("train", all(r["pass"] for r in gated), worst, rows, aggregate,
                       artifacts={"train_predictors.json": predictors})


# -- sample -----------------------------------------------------------------------


def run_sample(cfg: ExperimentConfig, jobs: int = 1) -> SuiteResult:
    """Ancestral sampling with the configured predictor, matched against the data distribution."""
    sec, tol = cfg.sections["sample"], cfg.tolerances
    dist, s = cfg.distribution, cfg.schedule
    scfg = S.SamplerConfig(variance=sec["variance"], n_samples=sec["n_samples"], seed=cfg.seed,
                           predictor=sec["predictor"], init=sec["init"])
    predictor = None
    if scfg.predictor == "fitted":
        tsec = cfg.sections["train"]
        spec = family_spec(tsec)

        def fit(t):
            return TR.fit_least_squares(spec, dist, s, t, tsec["n_samples"], suite_rng(cfg.seed, "sample", t),
                                        n_eval=None)[0]

        predictor = dict(zip(range(1, s.T + 1), _map(fit, range(1, s.T + 1), jobs)))
    samples = S.ancestral_sample(predictor, dist, s, scfg, suite_rng(cfg.seed, "sample"))
    metrics = S.distribution_match_report(samples, dist)
    gates = S.match_gates(metrics, dist, w1_max=tol["w1"], var_rtol=tol["var_rtol"])
    metrics["gates"] = gates
    metrics["sampler"] = scfg.__dict__
    worst = float(metrics.get("w1", np.max(np.abs(metrics["mean_error"]))))
    row = _row(cfg, "sample", "ancestral", s.T, 0, [], metrics=metrics, abs_err=worst, rel_err=worst,
               **{"pass": all(gates.values())})
    aggregate = [{"t": 0, "method": "ancestral", "n_probes": metrics["n"], "max_abs_err": worst,
                  "max_rel_err": worst, "pass_rate": float(all(gates.values()))}]
    return SuiteResult("sample", all(gates.values()), worst, [row], aggregate,
                       artifacts={"samples.csv": samples, "sample_metrics.json": metrics})
