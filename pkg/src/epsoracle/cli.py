"""Command-line front end.

Subcommands ``verify-theorem``, ``verify-identity``, ``train`` and ``sample``
run one suite on a JSON config; ``report`` tabulates a results directory.

Exit codes: 0 all gates pass, 1 config or IO error, 2 gate failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from epsoracle import suites
from epsoracle.config import ConfigError, load_config

EXIT_OK, EXIT_CONFIG, EXIT_GATE = 0, 1, 2
CSV_SCHEMA_VERSION = 1
CSV_HEADER = ["t", "method", "n_probes", "max_abs_err", "max_rel_err", "pass_rate"]
ENV_OUT = "EPSORACLE_OUT"
DEFAULT_OUT = "epsoracle_out"

# which tolerance --tol overrides for each suite
_PRIMARY_TOL = {"theorem": "quadrature", "identity": "identity", "train": "rmse", "sample": "w1"}

log = logging.getLogger("epsoracle")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"not JSON serialisable: {type(obj)!r}")


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, default=_jsonable)


def _write_outputs(res: suites.SuiteResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / f"{res.suite}.jsonl", "w") as fh:
        for row in res.rows:
            fh.write(_dump(row) + "\n")
    with open(out / f"{res.suite}.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_HEADER)
        w.writeheader()
        for row in res.aggregate:
            w.writerow({k: row[k] for k in CSV_HEADER})
    for name, payload in res.artifacts.items():
        path = out / name
        if name.endswith(".csv"):
            arr = np.atleast_2d(payload)
            header = ",".join(f"x{i}" for i in range(arr.shape[1]))
            np.savetxt(path, arr, delimiter=",", header=header, comments="", fmt="%.17g")
        else:
            path.write_text(json.dumps(payload, sort_keys=True, indent=1, default=_jsonable) + "\n")


def _summary(res, cfg, runtime: float) -> dict:
    worst = res.worst_error
    return {
        "suite": res.suite,
        "config": cfg.name,
        "config_hash": cfg.config_hash,
        "seed": cfg.seed,
        "passed": bool(res.passed),
        "worst_error": None if worst is None or math.isnan(worst) else float(worst),
        "runtime_s": round(runtime, 3),
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "csv_schema_version": CSV_SCHEMA_VERSION,
        "n_rows": len(res.rows),
        "notes": res.notes,
    }


def _out_dir(args, cfg) -> Path:
    return Path(args.out or os.environ.get(ENV_OUT) or cfg.output_dir or DEFAULT_OUT)


def _run_suite(args, suite: str) -> int:
    try:
        cfg = load_config(args.config)
        tol = {_PRIMARY_TOL[suite]: args.tol} if args.tol is not None else None
        cfg = cfg.with_overrides(seed=args.seed, tol=tol)
    except ConfigError as exc:
        log.error("invalid config: %s", exc)
        return EXIT_CONFIG

    t0 = time.perf_counter()
    try:
        if suite == "theorem":
            res = suites.run_theorem(cfg, jobs=args.jobs)
        elif suite == "identity":
            res = suites.run_identity(cfg, jobs=args.jobs, corrupt=args.debug_corrupt)
        elif suite == "train":
            res = suites.run_train(cfg, jobs=args.jobs)
        else:
            res = suites.run_sample(cfg, jobs=args.jobs)
    except ValueError as exc:
        log.error("%s failed: %s", suite, exc)
        return EXIT_CONFIG
    runtime = time.perf_counter() - t0

    out = _out_dir(args, cfg)
    try:
        _write_outputs(res, out)
        summary = _summary(res, cfg, runtime)
        (out / f"{suite}_summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    except OSError as exc:
        log.error("cannot write results to %s: %s", out, exc)
        return EXIT_CONFIG

    status = "PASS" if res.passed else "FAIL"
    print(f"{suite:<9} {cfg.name:<16} {status}  worst={summary['worst_error']}  ({runtime:.2f}s) -> {out}")
    for note in res.notes:
        print(f"  note: {note}")
    return EXIT_OK if res.passed else EXIT_GATE


def cmd_report(directory: str) -> int:
    d = Path(directory)
    if not d.is_dir():
        log.error("no such directory: %s", d)
        return EXIT_CONFIG
    found = {}
    for suite in suites.SUITES:
        path = d / f"{suite}_summary.json"
        if path.exists():
            try:
                found[suite] = json.loads(path.read_text())
            except json.JSONDecodeError as exc:
                log.error("corrupt summary %s: %s", path, exc)
                return EXIT_CONFIG
    if not found:
        log.error("no suite summaries in %s", d)
        return EXIT_CONFIG
    print(f"{'suite':<10}{'config':<18}{'status':<9}{'worst error':<14}{'runtime (s)':>11}")
    for suite in suites.SUITES:
        s = found.get(suite)
        if s is None:
            print(f"{suite:<10}{'-':<18}{'MISSING':<9}{'-':<14}{'-':>11}")
            continue
        worst = "-" if s["worst_error"] is None else f"{s['worst_error']:.3e}"
        status = "PASS" if s["passed"] else "FAIL"
        print(f"{suite:<10}{s['config']:<18}{status:<9}{worst:<14}{s['runtime_s']:>11.2f}")
    return EXIT_OK if all(s["passed"] for s in found.values()) else EXIT_GATE


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="epsoracle", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("verify-theorem", "closed form vs quadrature and Monte Carlo"),
        ("verify-identity", "posterior-mean route vs score route"),
        ("train", "least-squares fits vs the closed-form optimum"),
        ("sample", "ancestral sampling vs the data distribution"),
    ):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True, help="config path or golden config name")
        sp.add_argument("--out", help=f"output directory (default: ${ENV_OUT}, config, or ./{DEFAULT_OUT})")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--tol", type=float, help="override the suite's primary tolerance")
        sp.add_argument("--jobs", type=int, default=1, help="worker threads across timesteps")
        if name == "verify-identity":
            sp.add_argument("--debug-corrupt", type=float, default=1.0, help=argparse.SUPPRESS)
    rp = sub.add_parser("report", help="summarise a results directory")
    rp.add_argument("dir", nargs="?", default=None)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    if args.command == "report":
        return cmd_report(args.dir or os.environ.get(ENV_OUT) or DEFAULT_OUT)
    suite = {"verify-theorem": "theorem", "verify-identity": "identity"}.get(args.command, args.command)
    return _run_suite(args, suite)


if __name__ == "__main__":
    sys.exit(main())
