"""Batch command-line front end.

Every subcommand reads one JSON config, writes CSV/JSON artifacts into
``--out`` and finishes with ``manifest.json``. Exit codes: 0 success,
2 invalid or unreadable config, 3 numerical-invariant failure, 64 unknown
subcommand.
"""
from __future__ import annotations

import argparse
import hashlib
import os
import platform
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from . import __version__, io
from .checks import model_checks, run_all
from .config import (
    potential_from_dict,
    build_cv,
    build_model,
    build_sets,
    config_hash,
    family_params,
    load_config,
    require,
)
from .cv_search import CVFamily, eigen_comparison, rate_comparison, scan
from .dynamics import SimConfig, simulate_chain
from .effective import CVAssignment, build_effective
from .errors import ConfigurationError, EffdynError, InvariantError
from .kl import kl_score, mutual_information
from .langevin_marginal import detailed_balance_report, gibbs_density, marginal_model, velocity_variance
from .operators import Grid, detailed_balance_residual, nonnegativity_check
from .spectral import solve_spectrum
from .tpt import analyze, rate_count

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT, EXIT_USAGE = 0, 2, 3, 64


class _Run:
    """Per-invocation state: output directory, seed, and the files written so far."""

    def __init__(self, cfg, out: Path, seed: int, threads: int, strict: bool):
        self.cfg, self.out, self.seed, self.threads, self.strict = cfg, out, seed, threads, strict
        self.files: list[Path] = []
        self.soft_failures: list[str] = []
        self.hard_failures: list[str] = []

    def path(self, name: str) -> Path:
        p = self.out / name
        self.files.append(p)
        return p

    def json(self, name, obj):
        io.write_json(self.path(name), obj)

    def csv(self, name, rows, columns=None):
        io.write_csv(self.path(name), rows, columns)


# -- subcommands ---------------------------------------------------------------


def cmd_build_operator(run: _Run):
    model = build_model(run.cfg, run.seed)
    stem = run.out / "operator"
    run.files += list(io.write_model(model, stem))
    io.write_mu_csv(model, run.path("mu.csv"))
    nn = nonnegativity_check(model)
    run.json(
        "operator_summary.json",
        {
            "n": model.n,
            "source": model.source,
            "detailed_balance_residual": detailed_balance_residual(model),
            "nonnegative_spectrum": nn.nonnegative,
            "min_eigenvalue": nn.min_eigenvalue,
        },
    )


def cmd_spectrum(run: _Run):
    model = build_model(run.cfg, run.seed)
    m = run.cfg.get("spectrum", {}).get("m")
    m = None if m is None else min(int(m), model.n - 1)
    res = solve_spectrum(model, m)
    io.write_spectrum(res, run.path("spectrum.csv").with_suffix(""))
    run.files.append(run.out / "spectrum.json")


def cmd_committor(run: _Run):
    model = build_model(run.cfg, run.seed)
    res = analyze(model, build_sets(run.cfg, model.n))
    io.write_tpt(res, run.path("committor.json").with_suffix(""))
    run.files.append(run.out / "committor.csv")


def cmd_rates(run: _Run):
    model = build_model(run.cfg, run.seed)
    sets = build_sets(run.cfg, model.n)
    res = analyze(model, sets)
    block = run.cfg.get("rates", {})
    n_steps = block.get("n_steps", 1_000_000)
    chain = simulate_chain(np.array(model.P), n_steps, run.seed)
    rc = rate_count(chain, sets, n_batches=block.get("n_batches", 20))
    z = abs(rc.rate - res.k_flux_A) / rc.stderr if rc.stderr > 0 else float("inf")
    if z > 3.0:
        run.soft_failures.append(f"counted rate {z:.2f} stderr from the matrix rate")
    rows = [
        {"method": "flux_A", "rate": res.k_flux_A, "stderr": 0.0},
        {"method": "flux_B", "rate": res.k_flux_B, "stderr": 0.0},
        {"method": "energy", "rate": res.k_energy, "stderr": 0.0},
        {"method": "count", "rate": rc.rate, "stderr": rc.stderr},
    ]
    run.csv("rates.csv", rows, ["method", "rate", "stderr"])
    d = res.to_dict()
    d.update({"k_count": rc.rate, "count_stderr": rc.stderr, "n_segments": rc.n_segments, "n_steps": rc.n_steps})
    run.json("rates.json", d)


def cmd_effective(run: _Run):
    model = build_model(run.cfg, run.seed)
    cv = build_cv(run.cfg, model)
    eff = build_effective(model, cv)
    run.files += list(io.write_effective(eff, run.out / "effective"))
    io.write_cv(cv, run.path("cv.json"))
    run.json(
        "effective_summary.json",
        {
            "k": cv.k,
            "kl_score": kl_score(model, cv),
            "mutual_information": mutual_information(model),
            "detailed_balance_residual": detailed_balance_residual(eff.model),
        },
    )


def cmd_compare(run: _Run):
    model = build_model(run.cfg, run.seed)
    cv = build_cv(run.cfg, model)
    m = max(1, int(run.cfg.get("spectrum", {}).get("m", 1)))
    cmp = eigen_comparison(model, cv, m)
    run.csv("compare_eigen.csv", cmp.rows(), ["i", "lambda", "lambda_eff", "gap", "identity_residual"])
    summary = {"m": m, "padded": cmp.padded, "max_identity_residual": float(np.nanmax(cmp.residuals)) if cmp.residuals.size else 0.0}
    if np.any(cmp.effective - cmp.full > 1e-10):
        raise InvariantError("an effective eigenvalue exceeds its full counterpart")
    if "rate_bins" in run.cfg:
        rb = run.cfg["rate_bins"]
        rc = rate_comparison(model, cv, rb["A"], rb["B"])
        summary["rates"] = rc.row()
    run.json("compare.json", summary)


def _family(cfg, model) -> CVFamily:
    block = cfg["cv_family"]
    kind = block["kind"]
    k = block.get("k", 10)
    if kind == "explicit-list":
        members = tuple(CVAssignment.from_lumps(lumps, model.n) for lumps in block.get("members", []))
        if not members:
            raise ConfigurationError("explicit-list family needs members")
        return CVFamily(kind, family_params(block), k, None, members)
    if model.grid is None or model.states is not None:
        raise ConfigurationError(f"{kind} family needs an unpruned grid model")
    return CVFamily(kind, family_params(block), k, model.grid)


def cmd_optimize_cv(run: _Run):
    model = build_model(run.cfg, run.seed)
    require(run.cfg, "cv_family", "optimize-cv")
    obj = run.cfg.get("objective", {"kind": "timescale"})
    family = _family(run.cfg, model)
    rb = run.cfg.get("rate_bins")
    res = scan(
        model,
        family,
        obj["kind"],
        m=obj.get("m", 1),
        weights=obj.get("weights"),
        rate_bins=None if rb is None else (rb["A"], rb["B"]),
        threads=run.threads,
    )
    io.write_scan(res, run.path("scan.csv").with_suffix(""), obj["kind"], run.cfg["cv_family"])
    run.files.append(run.out / "scan.json")


def cmd_langevin_check(run: _Run):
    block = require(run.cfg, "langevin", "langevin-check")
    grid = Grid.from_dict(block["grid"])
    pot = potential_from_dict(block["potential"])
    sim = SimConfig(block["beta"], block["dt"], block["n_steps"], seed=run.seed, gamma=block["gamma"], extent=grid.extent)
    mr = marginal_model(pot, sim, block["lag"], grid)
    ref = gibbs_density(pot, block["beta"], grid)
    rep = detailed_balance_report(mr.model, ref, states=mr.states, n_batches=block.get("n_batches", 20))
    if not rep.verdict:
        run.soft_failures.append(f"detailed-balance verdict failed (max z {rep.max_z:.2f})")
    out = rep.to_dict()
    out["velocity_variance"] = [{"value": e.value, "stderr": e.stderr, "target": 1.0 / block["beta"]} for e in velocity_variance(mr.trajectory)]
    run.json("langevin.json", out)


def cmd_verify_all(run: _Run):
    block = run.cfg.get("verify", {})
    model = sets = cv = None
    if "system" in run.cfg:
        model = build_model(run.cfg, run.seed)
        sets = build_sets(run.cfg, model.n) if "sets" in run.cfg else None
        cv = build_cv(run.cfg, model) if "cv" in run.cfg else None
    results = run_all(run.seed, n_instances=block.get("n_instances", 25), n_steps=block.get("n_steps", 200_000))
    if model is not None:
        results += model_checks(model, sets, cv)
    run.csv("verify.csv", [r.row() for r in results], ["name", "value", "tol", "passed", "kind"])
    for r in results:
        if not r.passed:
            (run.soft_failures if r.statistical else run.hard_failures).append(r.name)
    run.json(
        "verify.json",
        {"n_checks": len(results), "failed": [r.name for r in results if not r.passed]},
    )


COMMANDS = {
    "build-operator": cmd_build_operator,
    "spectrum": cmd_spectrum,
    "committor": cmd_committor,
    "rates": cmd_rates,
    "effective": cmd_effective,
    "compare": cmd_compare,
    "optimize-cv": cmd_optimize_cv,
    "langevin-check": cmd_langevin_check,
    "verify-all": cmd_verify_all,
}


# -- plumbing ------------------------------------------------------------------


def _versions() -> dict:
    out = {"effdyn": __version__}
    for dist in ("numpy", "scipy", "numba", "jsonschema"):
        try:
            out[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            out[dist] = "unknown"
    out["python"] = platform.python_version()
    return out


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(run: _Run, command: str, config_path) -> None:
    files = sorted({p.name for p in run.files})
    run.out.mkdir(parents=True, exist_ok=True)
    io.write_json(
        run.out / "manifest.json",
        {
            "command": command,
            "config": "default" if config_path is None else Path(config_path).name,
            "config_sha256": config_hash(run.cfg),
            "seed": run.seed,
            "versions": _versions(),
            "files": {name: _sha256(run.out / name) for name in files},
            "soft_failures": run.soft_failures,
            "invariant_failures": run.hard_failures,
        },
    )


def _threads(value) -> int:
    if value is None:
        value = os.environ.get("EFFDYN_THREADS", "1")
    try:
        n = int(value)
    except ValueError:
        raise ConfigurationError(f"thread count {value!r} is not an integer") from None
    if n < 1:
        raise ConfigurationError("thread count must be positive")
    return n


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="effdyn", description=__doc__.splitlines()[0])
    p.add_argument("command", metavar="{" + ",".join(COMMANDS) + "}", help="subcommand to run")
    p.add_argument("--config", help="JSON config (default: the shipped default config)")
    p.add_argument("--out", default="effdyn-out", help="output directory")
    p.add_argument("--seed", type=int, help="RNG seed, overrides the config")
    p.add_argument("--threads", help="worker threads (fallback: EFFDYN_THREADS)")
    p.add_argument("--strict", action="store_true", help="statistical check failures also exit 3")
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = make_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    if args.command not in COMMANDS:
        parser.print_usage(sys.stderr)
        print(f"effdyn: unknown subcommand {args.command!r}", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = load_config(args.config)
        seed = args.seed if args.seed is not None else cfg.get("seed", 0)
        if not 0 <= seed < 2**64:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")
        run = _Run(cfg, Path(args.out), int(seed), _threads(args.threads), args.strict)
        COMMANDS[args.command](run)
        write_manifest(run, args.command, args.config)
    except InvariantError as exc:
        print(f"effdyn: invariant failure: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except EffdynError as exc:
        print(f"effdyn: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if run.hard_failures or (args.strict and run.soft_failures):
        for name in run.hard_failures + (run.soft_failures if args.strict else []):
            print(f"effdyn: failed check {name}", file=sys.stderr)
        return EXIT_INVARIANT
    for msg in run.soft_failures:
        print(f"effdyn: warning: {msg}", file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
