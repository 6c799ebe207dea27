"""Command-line interface.

Subcommands: ``sample``, ``estimate-p``, ``verify SUITE`` and ``constant``.
Options may also come from ``--config FILE.json`` (flags win).  The only
environment variable read is ``HARDEDGE_SEED``, the default seed.

Exit codes: 0 success, 1 failed invariant, 2 usage error, 3 statistical
quality flag (weight degeneracy or flatness above threshold).
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .asymptotics import P1Table, build_p1_table, leading_log_factor, solve_p1_table, tail_fit
from .core import DomainError, RngStream, SimConfig, make_params
from .diffusion import estimate_p_direct
from .girsanov import estimate_p_importance
from .matrix_model import sample_hard_edge
from .operator_model import sample_operator_lambda
from . import verify

EXIT_OK, EXIT_INVARIANT, EXIT_USAGE, EXIT_FLAG = 0, 1, 2, 3
CSV_MAGIC = "# hardedge v1"


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    beta: float = 2.0
    a: float = 0.0
    lam: float = 4.0
    lambdas: list = field(default_factory=lambda: [16.0, 25.0, 36.0])
    n: int = 200
    n_samples: int = 1000
    dt: float | None = None
    seed: int = 0
    method: str | None = None
    format: str | None = None
    output: str | None = None
    threads: int = 1
    p1: str = "pde"
    p1_cache: str | None = None
    p1_paths: int = 4000
    T_op: float = 30.0
    suite: str | None = None

    def echo(self) -> dict:
        """Settings that determine the output (threads and destination excluded)."""
        d = asdict(self)
        for k in ("threads", "output", "p1_cache", "format"):
            d.pop(k)
        return {k: v for k, v in d.items() if v is not None}


DEFAULTS = {
    "sample": {"method": "matrix", "dt": 1e-2},
    "estimate-p": {"method": "importance", "dt": 2e-3, "n_samples": 100_000},
    "constant": {"method": "importance", "dt": 2e-3, "n_samples": 100_000},
    "verify": {},
}


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g") if math.isfinite(x) else "null"
    if isinstance(x, (list, tuple)):
        return "[" + ", ".join(_fmt(v) for v in x) + "]"
    return json.dumps(x)


def to_json(record: dict) -> str:
    """Flat JSON object with floats printed to 17 significant digits."""
    return "{" + ", ".join(f"{json.dumps(k)}: {_fmt(v)}" for k, v in record.items()) + "}\n"


def _write(text: str, output: str | None) -> None:
    if output:
        Path(output).write_text(text)
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    common.add_argument("--config", help="JSON file with option values (flags win)")
    common.add_argument("--beta", type=float, default=S)
    common.add_argument("--a", type=float, default=S)
    common.add_argument("--seed", type=int, default=S, help="default: $HARDEDGE_SEED or 0")
    common.add_argument("--dt", type=float, default=S)
    common.add_argument("--threads", type=int, default=S)
    common.add_argument("--output", "-o", default=S)
    common.add_argument("--format", choices=["csv", "json"], default=S)

    p1 = argparse.ArgumentParser(add_help=False)
    p1.add_argument("--p1", choices=["pde", "mc"], default=S, help="p1 table construction")
    p1.add_argument("--p1-cache", dest="p1_cache", default=S, help="CSV cache for the p1 table")
    p1.add_argument("--p1-paths", dest="p1_paths", type=int, default=S)

    ap = argparse.ArgumentParser(prog="hardedge", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sample", parents=[common], help="draw scaled smallest eigenvalues")
    s.add_argument("--method", choices=["matrix", "operator"], default=S)
    s.add_argument("--n", type=int, default=S, help="matrix size")
    s.add_argument("--samples", dest="n_samples", type=int, default=S)
    s.add_argument("--T-op", dest="T_op", type=float, default=S)

    e = sub.add_parser("estimate-p", parents=[common, p1], help="estimate P(Lambda > lambda)")
    e.add_argument("--method", choices=["direct", "importance"], default=S)
    e.add_argument("--lambda", dest="lam", type=float, default=S)
    e.add_argument("--paths", "--samples", dest="n_samples", type=int, default=S)

    v = sub.add_parser("verify", parents=[common], help="run an invariant suite")
    v.add_argument("suite", choices=sorted(verify.SUITES))
    v.add_argument("--paths", "--samples", dest="n_samples", type=int, default=S)

    c = sub.add_parser("constant", parents=[common, p1], help="estimate the tail constant")
    c.add_argument("--lambdas", type=lambda s: [float(x) for x in s.split(",")], default=S)
    c.add_argument("--paths", "--samples", dest="n_samples", type=int, default=S)
    return ap


def resolve_config(ns: argparse.Namespace) -> RunConfig:
    values = {}
    env_seed = os.environ.get("HARDEDGE_SEED")
    if env_seed is not None:
        try:
            values["seed"] = int(env_seed)
        except ValueError as exc:
            raise UsageError(f"HARDEDGE_SEED must be an integer: {env_seed!r}") from exc
    values.update(DEFAULTS[ns.command])
    cfg_path = getattr(ns, "config", None)
    if cfg_path:
        try:
            loaded = json.loads(Path(cfg_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {cfg_path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        aliases = {"lambda": "lam", "samples": "n_samples", "paths": "n_samples"}
        for k, v in loaded.items():
            values[aliases.get(k, k).replace("-", "_")] = v
    for k, v in vars(ns).items():
        if k != "config":
            values[k] = v
    known = set(RunConfig.__dataclass_fields__)
    unknown = set(values) - known
    if unknown:
        raise UsageError(f"unknown option(s): {', '.join(sorted(unknown))}")
    return RunConfig(**values)


def validate(cfg: RunConfig) -> None:
    try:
        make_params(cfg.beta, cfg.a)
    except DomainError as exc:
        raise UsageError(str(exc)) from exc
    if cfg.n_samples < 1:
        raise UsageError("number of samples must be >= 1")
    if cfg.threads < 1:
        raise UsageError("threads must be >= 1")
    if cfg.dt is not None and not cfg.dt > 0:
        raise UsageError("dt must be > 0")
    if cfg.command == "sample":
        if cfg.method not in ("matrix", "operator"):
            raise UsageError("sample needs --method matrix or operator")
        if cfg.n < 1:
            raise UsageError("n must be >= 1")
    if cfg.command == "estimate-p":
        if cfg.method not in ("direct", "importance"):
            raise UsageError("estimate-p needs --method direct or importance")
        if not cfg.lam >= 1:
            raise UsageError("lambda must be >= 1")
    if cfg.command == "constant" and (not cfg.lambdas or min(cfg.lambdas) < 4
                                      or any(np.diff(cfg.lambdas) <= 0)):
        raise UsageError("lambdas must be increasing and all >= 4")


def _p1_table(cfg: RunConfig, params) -> P1Table:
    if cfg.p1_cache and Path(cfg.p1_cache).exists():
        tab = P1Table.load(cfg.p1_cache)
        if (tab.beta, tab.a, tab.method) != (params.beta, params.a, cfg.p1):
            raise UsageError(f"p1 cache {cfg.p1_cache} holds beta={tab.beta} a={tab.a} "
                             f"method={tab.method}")
        return tab
    if cfg.p1 == "pde":
        tab = solve_p1_table(params)
    else:
        tab = build_p1_table(params, SimConfig(n_paths=cfg.p1_paths, dt=1e-2, seed=cfg.seed,
                                               stream_base=1 << 48, threads=cfg.threads))
    if cfg.p1_cache:
        tab.save(cfg.p1_cache)
    return tab


def _sim_config(cfg: RunConfig) -> SimConfig:
    return SimConfig(n_paths=cfg.n_samples, dt=cfg.dt, seed=cfg.seed, threads=cfg.threads)


def cmd_sample(cfg: RunConfig) -> int:
    params = make_params(cfg.beta, cfg.a)
    stream = RngStream(cfg.seed)
    if cfg.method == "matrix":
        vals = sample_hard_edge(params, cfg.n, cfg.n_samples, stream, cfg.threads).scaled_min
        col = "scaled_min"
    else:
        vals = sample_operator_lambda(params, cfg.n_samples, cfg.dt, stream, cfg.T_op, cfg.threads)
        col = "inv_top_eigenvalue"
    if cfg.format == "json":
        text = to_json({"method": cfg.method, "beta": cfg.beta, "a": cfg.a, "seed": cfg.seed,
                        "values": [float(v) for v in vals]})
    else:
        lines = [CSV_MAGIC, "# config " + json.dumps(cfg.echo(), sort_keys=True),
                 f"sample_index,{col}"]
        lines += [f"{i},{v:.17g}" for i, v in enumerate(vals)]
        text = "\n".join(lines) + "\n"
    _write(text, cfg.output)
    return EXIT_OK


def cmd_estimate_p(cfg: RunConfig) -> int:
    params = make_params(cfg.beta, cfg.a)
    tab = _p1_table(cfg, params)
    sim = _sim_config(cfg)
    fn = estimate_p_direct if cfg.method == "direct" else estimate_p_importance
    est = fn(params, cfg.lam, tab, sim)
    lead = leading_log_factor(params, cfg.lam)
    rec = {
        "p_hat": est.mean,
        "stderr": est.total_stderr,
        "n_samples": est.n_samples,
        "lambda": cfg.lam,
        "beta": cfg.beta,
        "a": cfg.a,
        "method": cfg.method,
        "seed": cfg.seed,
        "leading_log_factor": lead,
        "e_lambda_hat": est.mean * math.exp(-lead) if math.isfinite(lead) else None,
        "sampling_stderr": est.stderr,
        "systematic_stderr": est.systematic,
    }
    _write(to_json(rec), cfg.output)
    return EXIT_FLAG if est.diagnostics.get("degenerate") else EXIT_OK


def cmd_constant(cfg: RunConfig) -> int:
    params = make_params(cfg.beta, cfg.a)
    tab = _p1_table(cfg, params)
    fit = tail_fit(params, cfg.lambdas, tab, _sim_config(cfg))
    rec = {
        "beta": cfg.beta,
        "a": cfg.a,
        "seed": cfg.seed,
        "n_samples": cfg.n_samples,
        "lambdas": [float(l) for l in fit.lambdas],
        "e_hats": [e.mean for e in fit.e_estimates],
        "stderrs": [e.total_stderr for e in fit.e_estimates],
        "flatness": fit.flatness,
        "extrapolated_e": fit.extrapolated_e,
    }
    _write(to_json(rec), cfg.output)
    degenerate = any(e.diagnostics.get("degenerate") for e in fit.e_estimates)
    return EXIT_FLAG if fit.flagged or degenerate else EXIT_OK


def cmd_verify(cfg: RunConfig, explicit: dict) -> int:
    name = cfg.suite
    kw = {}
    if name == "girsanov":
        kw = {"dt": cfg.dt or 1e-3, "n_paths": explicit.get("n_samples", 50), "seed": cfg.seed}
    elif name == "coupling":
        kw = {"dt": cfg.dt or 1e-3, "seed": cfg.seed}
    elif name == "bounds":
        kw = {"seed": cfg.seed}
        if "beta" in explicit or "a" in explicit:
            kw["params"] = make_params(cfg.beta, cfg.a)
    elif name == "exact-case":
        kw = {"seed": cfg.seed}
        if "n_samples" in explicit:
            kw["n_paths"] = explicit["n_samples"]
        if cfg.dt:
            kw["dt"] = cfg.dt
    elif name == "kappa":
        kw = {"seed": cfg.seed}
    checks = verify.SUITES[name](**kw)
    text = "".join(c.line() + "\n" for c in checks)
    _write(text, cfg.output)
    return EXIT_OK if all(c.passed for c in checks) else EXIT_INVARIANT


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    explicit = {k: v for k, v in vars(ns).items() if k not in ("command", "config", "suite")}
    try:
        cfg = resolve_config(ns)
        if cfg.command != "verify":
            validate(cfg)
        if cfg.command == "sample":
            return cmd_sample(cfg)
        if cfg.command == "estimate-p":
            return cmd_estimate_p(cfg)
        if cfg.command == "constant":
            return cmd_constant(cfg)
        return cmd_verify(cfg, explicit)
    except (UsageError, DomainError, TypeError) as exc:
        print(f"hardedge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
