"""Config-driven experiment runner.

``rwre-ldp CONFIG.yaml -o OUTDIR`` runs one task and writes ``results.csv``
and ``provenance.json`` into ``OUTDIR``.  On failure it writes
``error.json`` instead and exits nonzero.  See ``EXAMPLE_CONFIG`` for the schema.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import platform
import sys
import time
from dataclasses import dataclass, field
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np
import yaml

from .environment import EnvironmentLaw, classify_nestling, make_law
from .errors import ConfigError, RWREError
from .lmgf import as_theta, estimate_lmgf
from .oracle import finite_n_lambda
from .rate import lln_velocity, nestling_boundary_probe, rate_curve
from .tilted import CylinderFunction, k_consistency_check, mean_drift_tilted
from .walk_sim import CycleEnsemble, harvest_cycles, resolve_direction

log = logging.getLogger("rwre_ldp")

TASKS = ("lambda-sweep", "rate-curve", "tilted", "boundary-probe", "oracle-crosscheck")

EXAMPLE_CONFIG = """\
# Experiment configuration for rwre-ldp.
task: lambda-sweep          # lambda-sweep | rate-curve | tilted | boundary-probe | oracle-crosscheck
seed: 7                     # required; the --seed flag overrides it
law:
  dimension: 1
  atoms:                    # one step -> probability map per site kernel
    - {+x: 0.6, -x: 0.4}
  weights: [1.0]            # optional; uniform when omitted
direction: auto             # unit vector, or auto (non-nestling laws only)
harvest:
  n_cycles: 100000
  runs: 4
  cycle_cap: 1000000
  lookahead: 50
tolerances:
  lambda: 1.0e-12
  newton: 1.0e-8
  max_iter: 50
  z_crit: 3.0
  min_ess: 100
theta_grid: [-0.5, 0.25, 0.5]       # lambda-sweep; scalars when d=1, else lists
# xi_grid: [0.3, 0.4, 0.5]          # rate-curve
# theta_sequence: [0.1, 0.05, 0.02] # boundary-probe
# tilted:                           # tilted
#   theta: 0.5
#   cylinder: {+x: 1.0}             # step word -> value; or cylinder_file: table.csv
#   default: 0.0                    # value for words missing from the table
#   K_max: 3
#   overlapping: false
# oracle:                           # oracle-crosscheck
#   theta: 0.5
#   n_list: [8, 10, 12, 14, 16]
"""


@dataclass
class Config:
    task: str
    seed: int
    law: EnvironmentLaw
    direction: object
    n_cycles: int = 100_000
    runs: int = 4
    cycle_cap: int = 10**6
    lookahead: float = 50.0
    tol_lambda: float = 1e-12
    tol_newton: float = 1e-8
    max_iter: int = 50
    z_crit: float = 3.0
    min_ess: float = 100.0
    grid: list = field(default_factory=list)
    tilted: dict = field(default_factory=dict)
    oracle: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)


def _grid(values, d: int, name: str) -> list[np.ndarray]:
    if not isinstance(values, list) or not values:
        raise ConfigError(f"{name} must be a nonempty list")
    try:
        return [as_theta(v, d) for v in values]
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def parse_config(raw: dict, *, seed: int | None = None, base: Path | None = None) -> Config:
    """Validate a loaded config mapping; model errors propagate with their own class."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    task = raw.get("task")
    if task not in TASKS:
        raise ConfigError(f"task must be one of {TASKS}, got {task!r}")
    if seed is None:
        if "seed" not in raw:
            raise ConfigError("seed is required")
        seed = raw["seed"]
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    law_cfg = raw.get("law")
    if not isinstance(law_cfg, dict) or "dimension" not in law_cfg or "atoms" not in law_cfg:
        raise ConfigError("law needs dimension and atoms")
    law = make_law(law_cfg["dimension"], law_cfg["atoms"], law_cfg.get("weights"))
    direction = raw.get("direction", "auto")
    auto = isinstance(direction, str) and direction == "auto"
    if not auto:
        try:
            direction = np.asarray(direction, dtype=float).reshape(-1)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"direction must be 'auto' or a vector: {exc}") from exc
    h = raw.get("harvest", {}) or {}
    t = raw.get("tolerances", {}) or {}
    cfg = Config(
        task, seed, law, direction,
        n_cycles=int(h.get("n_cycles", 100_000)),
        runs=int(h.get("runs", 4)),
        cycle_cap=int(h.get("cycle_cap", 10**6)),
        lookahead=float(h.get("lookahead", 50.0)),
        tol_lambda=float(t.get("lambda", 1e-12)),
        tol_newton=float(t.get("newton", 1e-8)),
        max_iter=int(t.get("max_iter", 50)),
        z_crit=float(t.get("z_crit", 3.0)),
        min_ess=float(t.get("min_ess", 100.0)),
        raw=raw,
    )
    if cfg.n_cycles < 1 or cfg.runs < 1:
        raise ConfigError("n_cycles and runs must be positive")
    d = law.d
    if task == "lambda-sweep":
        cfg.grid = _grid(raw.get("theta_grid"), d, "theta_grid")
    elif task == "rate-curve":
        cfg.grid = _grid(raw.get("xi_grid"), d, "xi_grid")
        if len({tuple(x) for x in cfg.grid}) != len(cfg.grid):
            raise ConfigError("xi_grid points must be distinct")
    elif task == "boundary-probe":
        cfg.grid = _grid(raw.get("theta_sequence"), d, "theta_sequence")
        if not classify_nestling(law).nestling:
            raise ConfigError("boundary-probe needs a nestling law")
    elif task == "tilted":
        tc = dict(raw.get("tilted") or {})
        if "theta" not in tc:
            raise ConfigError("tilted.theta is required")
        tc["theta"] = as_theta(tc["theta"], d)
        default = tc.get("default")
        if "cylinder_file" in tc:
            path = Path(tc["cylinder_file"])
            if base is not None and not path.is_absolute():
                path = base / path
            tc["f"] = CylinderFunction.load(path, d, default=default)
        elif isinstance(tc.get("cylinder"), dict):
            tc["f"] = CylinderFunction.from_mapping(tc["cylinder"], d, default=default)
        else:
            raise ConfigError("tilted needs cylinder or cylinder_file")
        tc["K_max"] = int(tc.get("K_max", tc["f"].depth))
        tc["overlapping"] = bool(tc.get("overlapping", False))
        cfg.tilted = tc
    elif task == "oracle-crosscheck":
        oc = dict(raw.get("oracle") or {})
        oc["theta"] = as_theta(oc.get("theta", 0.5), d)
        oc["n_list"] = [int(n) for n in oc.get("n_list", [8, 10, 12, 14, 16])]
        cfg.oracle = oc
    cfg.direction = resolve_direction(law, "auto" if auto else direction)
    return cfg


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


class _Table:
    """Rows buffered in memory, flushed in config order."""

    def __init__(self, header: list[str]):
        self.header = header
        self.rows: list[list[str]] = []

    def add(self, **vals):
        unknown = set(vals) - set(self.header)
        if unknown:
            raise KeyError(unknown)
        self.rows.append([_fmt(vals.get(h)) for h in self.header])

    def to_bytes(self) -> bytes:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        w.writerows(self.rows)
        return buf.getvalue().encode()


def _axes(d: int) -> list[str]:
    return [f"{k + 1}" for k in range(d)]


def _vec(prefix: str, v, d: int) -> dict:
    if v is None:
        return {}
    v = np.asarray(v, dtype=float).reshape(-1)
    return {f"{prefix}_{a}": v[i] for i, a in enumerate(_axes(d))}


def _mat(prefix: str, m, d: int) -> dict:
    if m is None:
        return {}
    m = np.asarray(m, dtype=float).reshape(d, d)
    return {f"{prefix}_{i + 1}{j + 1}": m[i, j] for i in range(d) for j in range(d)}


def _vcols(prefix: str, d: int) -> list[str]:
    return [f"{prefix}_{a}" for a in _axes(d)]


def _mcols(prefix: str, d: int) -> list[str]:
    return [f"{prefix}_{i + 1}{j + 1}" for i in range(d) for j in range(d)]


def _harvest(cfg: Config, workers: int) -> CycleEnsemble:
    return harvest_cycles(
        cfg.law, cfg.direction, cfg.n_cycles, cfg.seed, cfg.cycle_cap, cfg.runs,
        workers=workers, lookahead=cfg.lookahead)


def _lambda_sweep(cfg, ens, table, diag):
    d = cfg.law.d
    label = classify_nestling(cfg.law)
    for th in cfg.grid:
        common = dict(seed=cfg.seed, n_cycles=ens.n_cycles, **_vec("theta", th, d))
        try:
            est = estimate_lmgf(ens, th, cfg.tol_lambda, nestling_label=label,
                                z_crit=cfg.z_crit, min_ess=cfg.min_ess)
        except RWREError as exc:
            label_txt = str(exc.label) if getattr(exc, "label", None) is not None else ""
            table.add(**common, label=label_txt, status=type(exc).__name__)
            continue
        diag["ess"].append(est.ess)
        table.add(**common, label=str(est.label), **{"lambda": est.lam}, lambda_se=est.lam_se,
                  **_vec("grad", est.grad, d), **_vec("grad_se", est.grad_se, d),
                  **_mat("hess", est.hessian, d), min_eig=est.min_eigenvalue,
                  ess=est.ess, status="ok")


def _lambda_header(d):
    return (["seed", "n_cycles"] + _vcols("theta", d) + ["label", "lambda", "lambda_se"]
            + _vcols("grad", d) + _vcols("grad_se", d) + _mcols("hess", d)
            + ["min_eig", "ess", "status"])


def _rate_header(d):
    return (["seed", "n_cycles"] + _vcols("xi", d) + _vcols("theta", d)
            + ["rate", "rate_se"] + _mcols("rate_hess", d) + ["fenchel_gap", "status"])


def _rate_curve(cfg, ens, table, diag, workers):
    d = cfg.law.d
    rows = rate_curve(cfg.law, cfg.direction, cfg.grid, ensemble=ens, workers=workers)
    for row in rows:
        common = dict(seed=cfg.seed, n_cycles=ens.n_cycles, **_vec("xi", row.xi, d))
        p = row.point
        if p is None:
            table.add(**common, status=row.status)
            continue
        diag["ess"].append(p.estimate.ess)
        table.add(**common, **_vec("theta", p.theta, d), rate=p.rate, rate_se=p.rate_se,
                  **_mat("rate_hess", p.rate_hessian, d), fenchel_gap=p.fenchel_gap,
                  status=row.status)


def _tilted_header(d):
    return (["seed", "n_cycles"] + _vcols("theta", d)
            + ["lambda", "quantity", "K", "value", "std_error", "n_blocks", "overlapping"])


def _tilted(cfg, ens, table, diag):
    d = cfg.law.d
    tc = cfg.tilted
    est = estimate_lmgf(ens, tc["theta"], cfg.tol_lambda, z_crit=cfg.z_crit, min_ess=cfg.min_ess)
    diag["ess"].append(est.ess)
    common = dict(seed=cfg.seed, n_cycles=ens.n_cycles, **_vec("theta", est.theta, d),
                  **{"lambda": est.lam})
    for e in k_consistency_check(ens, est.theta, est.lam, tc["f"], tc["K_max"],
                                 overlapping=tc["overlapping"]):
        table.add(**common, quantity="cylinder", K=e.K_used, value=e.value,
                  std_error=e.std_error, n_blocks=e.n_blocks, overlapping=e.overlapping)
    drift, se = mean_drift_tilted(ens, est.theta, est.lam)
    for k in range(d):
        table.add(**common, quantity=f"mean_step_{k + 1}", K=1, value=drift[k], std_error=se[k],
                  n_blocks=ens.n_cycles, overlapping=False)
        table.add(**common, quantity=f"grad_{k + 1}", K="", value=est.grad[k],
                  std_error=est.grad_se[k], n_blocks="", overlapping="")


def _probe_header(d):
    return (["seed", "n_cycles"] + _vcols("theta", d) + ["label"] + _vcols("grad", d)
            + ["lambda", "normal_inner", "xi_o_hat"])


def _probe(cfg, ens, table, diag):
    d = cfg.law.d
    xi_o = lln_velocity(ens).xi
    for p in nestling_boundary_probe(cfg.law, cfg.direction, cfg.grid, ensemble=ens,
                                     z_crit=cfg.z_crit):
        table.add(seed=cfg.seed, n_cycles=ens.n_cycles, **_vec("theta", p.theta, d),
                  label=str(p.label), **_vec("grad", p.grad, d), **{"lambda": p.lam},
                  normal_inner=p.normal_inner,
                  xi_o_hat=xi_o[0] if d == 1 else " ".join(repr(float(v)) for v in xi_o))


def _oracle_header(d):
    return (["seed", "n_cycles"] + _vcols("theta", d)
            + ["lambda_hat", "lambda_se", "lambda_fit", "fit_residual", "abs_diff", "status"])


def _oracle(cfg, workers, table, diag):
    d = cfg.law.d
    oc = cfg.oracle
    fit = finite_n_lambda(cfg.law, oc["theta"], oc["n_list"])
    common = dict(seed=cfg.seed, n_cycles=cfg.n_cycles, **_vec("theta", oc["theta"], d),
                  lambda_fit=fit.lam, fit_residual=fit.residual)
    try:
        ens = _harvest(cfg, workers)
        diag["ensemble"] = ens.summary()
        est = estimate_lmgf(ens, oc["theta"], cfg.tol_lambda, z_crit=cfg.z_crit,
                            min_ess=cfg.min_ess)
    except RWREError as exc:
        table.add(**common, status=type(exc).__name__)
        raise
    diag["ess"].append(est.ess)
    table.add(**{**common, "n_cycles": ens.n_cycles}, lambda_hat=est.lam, lambda_se=est.lam_se,
              abs_diff=abs(est.lam - fit.lam), status="ok")


def execute(cfg: Config, workers: int = 1) -> tuple[_Table, dict]:
    """Run the configured task; on a module error, the rows finished so far stay in the table."""
    d = cfg.law.d
    diag: dict = {"ess": []}
    if cfg.task == "oracle-crosscheck":
        table = _Table(_oracle_header(d))
        try:
            _oracle(cfg, workers, table, diag)
        except RWREError as exc:
            exc.partial = (table, diag)
            raise
        return table, diag
    header = {
        "lambda-sweep": _lambda_header,
        "rate-curve": _rate_header,
        "tilted": _tilted_header,
        "boundary-probe": _probe_header,
    }[cfg.task](d)
    table = _Table(header)
    try:
        ens = _harvest(cfg, workers)
        diag["ensemble"] = ens.summary()
        if cfg.task == "lambda-sweep":
            _lambda_sweep(cfg, ens, table, diag)
        elif cfg.task == "rate-curve":
            _rate_curve(cfg, ens, table, diag, workers)
        elif cfg.task == "tilted":
            _tilted(cfg, ens, table, diag)
        else:
            _probe(cfg, ens, table, diag)
    except RWREError as exc:
        exc.partial = (table, diag)
        raise
    return table, diag


def _library_version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "unknown"


def _provenance(cfg_raw, cfg: Config | None, diag: dict, wall: float, workers: int) -> dict:
    ess = diag.get("ess", [])
    return {
        "config": cfg_raw,
        "seed": cfg.seed if cfg else None,
        "task": cfg.task if cfg else None,
        "law_fingerprint": cfg.law.fingerprint() if cfg else None,
        "direction": np.asarray(cfg.direction).tolist() if cfg is not None else None,
        "library_version": _library_version(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "workers": workers,
        "wall_time_s": round(wall, 3),
        "ensemble": diag.get("ensemble"),
        "ess_min": min(ess) if ess else None,
        "ess_max": max(ess) if ess else None,
    }


def _write_error(out: Path, exc: BaseException) -> None:
    out.mkdir(parents=True, exist_ok=True)
    record = {"error": type(exc).__name__, "message": str(exc)}
    for attr in ("starved", "cycles_collected", "steps_simulated"):
        if hasattr(exc, attr):
            record[attr] = getattr(exc, attr)
    (out / "error.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")


def run(config_path, output: str | Path | None = None, *, seed: int | None = None,
        workers: int = 1) -> int:
    """Run one experiment and return the process exit status."""
    config_path = Path(config_path)
    t0 = time.perf_counter()
    raw = None
    cfg = None
    out = Path(output) if output is not None else None
    try:
        raw = yaml.safe_load(config_path.read_text())
        if out is None:
            out = Path((raw or {}).get("output", "results"))
        cfg = parse_config(raw, seed=seed, base=config_path.parent)
    except (RWREError, ValueError, OSError, yaml.YAMLError) as exc:
        out = out or Path("results")
        _write_error(out, exc)
        log.error("%s: %s", type(exc).__name__, exc)
        print(type(exc).__name__, file=sys.stderr)
        return 2
    out.mkdir(parents=True, exist_ok=True)
    status = 0
    try:
        table, diag = execute(cfg, workers)
    except RWREError as exc:
        table, diag = getattr(exc, "partial", (None, {}))
        _write_error(out, exc)
        log.error("%s: %s", type(exc).__name__, exc)
        print(type(exc).__name__, file=sys.stderr)
        status = 1
    if table is not None and (status == 0 or table.rows):
        (out / "results.csv").write_bytes(table.to_bytes())
    prov = _provenance(raw, cfg, diag, time.perf_counter() - t0, workers)
    (out / "provenance.json").write_text(json.dumps(prov, indent=2, sort_keys=True, default=_json_default) + "\n")
    if status == 0:
        log.info("wrote %s", out / "results.csv")
    return status


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(type(o).__name__)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="rwre-ldp", description=__doc__.splitlines()[0])
    ap.add_argument("config", nargs="?", help="YAML experiment file")
    ap.add_argument("-o", "--output", help="output directory (default: config 'output' or ./results)")
    ap.add_argument("--seed", type=int, help="override the config seed")
    ap.add_argument("--workers", type=int, default=1, help="threads; results do not depend on it")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    ap.add_argument("--example-config", action="store_true", help="print a commented config and exit")
    args = ap.parse_args(argv)
    if args.example_config:
        sys.stdout.write(EXAMPLE_CONFIG)
        return 0
    if not args.config:
        ap.error("a config file is required")
    logging.basicConfig(
        level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
        format="%(levelname)s %(name)s: %(message)s")
    return run(args.config, args.output, seed=args.seed, workers=max(1, args.workers))


if __name__ == "__main__":
    sys.exit(main())
