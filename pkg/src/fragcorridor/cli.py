"""Command-line experiment runner.

Usage::

    fragcorridor <scale|simulate|dimension|spectrum|validate> --config run.cfg [--out DIR]
                 [--seed N] [--replicas N]

Each run writes into ``<out>/<config hash>/``. Everything except the
``*_timing.json`` files is a deterministic function of the config and seed.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from importlib import metadata
from pathlib import Path
from typing import Optional

import numpy as np

from . import dimension as dim
from . import levy_scale as ls
from . import martingale_stats as ms
from .errors import ExtinctionError, FragCorridorError, InsufficientSurvivorsError
from .io import fmt, write_csv, write_json, write_scale_table
from .measures import CATALOG, DislocationMeasure

log = logging.getLogger("fragcorridor")

COMMANDS = ("scale", "simulate", "dimension", "spectrum", "validate")
EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


@dataclass(frozen=True)
class ExperimentConfig:
    measure: str
    v: float
    a: float
    b: float
    rate: float = 1.0
    fraction: float = 0.5
    alphas: tuple = (1.0, 1.0, 1.0)
    horizon: float = 12.0
    replicas: int = 1000
    seed: int = 0
    grid_step: Optional[float] = None
    sample_points: int = 64
    activation_time: float = 0.0
    population_cap: int = 10**7
    horizons: tuple = ()
    window_counts: bool = False
    spectrum_points: int = 16
    command: Optional[str] = None

    def build_measure(self) -> DislocationMeasure:
        if self.measure == "binary-uniform":
            return CATALOG[self.measure](self.rate)
        if self.measure == "deterministic":
            return CATALOG[self.measure](self.fraction, self.rate)
        return CATALOG[self.measure](tuple(self.alphas), self.rate)

    def model(self) -> ls.LevyModel:
        return ls.LevyModel(self.build_measure(), self.v, self.a, self.b)

    def canonical(self) -> dict:
        d = asdict(self)
        d.pop("command")
        return d

    def digest(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, default=list)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.replace(",", " ").split())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional_float(text: str):
    return None if text.strip().lower() in ("", "none", "auto") else float(text)


_PARSERS = {
    "measure": str.strip, "v": float, "a": float, "b": float, "rate": float,
    "fraction": float, "alphas": _floats, "horizon": float, "replicas": int, "seed": int,
    "grid_step": _optional_float, "sample_points": int, "activation_time": float,
    "population_cap": lambda s: int(float(s)), "horizons": _floats,
    "window_counts": _bool, "spectrum_points": int, "command": str.strip,
}
_REQUIRED = ("measure", "v", "a", "b")


def parse_config(text: str) -> ExperimentConfig:
    """Parse ``key = value`` lines. All problems are collected and raised
    together as a ``ConfigError`` with line numbers."""
    problems = []
    values = {}
    lines = {}
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"line {lineno}: expected 'key = value'")
            continue
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _PARSERS:
            problems.append(f"line {lineno}: unknown key {key!r}")
            continue
        if key in seen:
            problems.append(f"line {lineno}: duplicate key {key!r} (first on line {lines[key]})")
            continue
        seen.add(key)
        lines[key] = lineno
        try:
            values[key] = _PARSERS[key](value)
        except ValueError as exc:
            problems.append(f"line {lineno}: bad value for {key!r}: {exc}")
    for key in _REQUIRED:
        if key not in seen:
            problems.append(f"missing required key {key!r}")
    if "seed" not in values:
        log.info("no seed given; using seed = 0")
    problems += _constraint_problems(values, lines)
    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(**values)


def _constraint_problems(values: dict, lines: dict) -> list[str]:
    out = []

    def at(key):
        return f"line {lines[key]}: " if key in lines else ""

    def check(ok, key, msg):
        if not ok:
            out.append(f"{at(key)}{msg}")

    if "measure" in values:
        check(values["measure"] in CATALOG, "measure",
              f"measure must be one of {sorted(CATALOG)}, got {values['measure']!r}")
    if "a" in values:
        check(values["a"] > 0, "a", "a must be positive")
    if "a" in values and "b" in values:
        check(values["a"] < values["b"], "b", f"need a < b, got a={values['a']}, b={values['b']}")
    if "v" in values:
        check(values["v"] > 0, "v", "v must be positive")
    for key in ("rate", "horizon"):
        if key in values:
            check(values[key] > 0, key, f"{key} must be positive")
    if "replicas" in values:
        check(values["replicas"] >= 1, "replicas", "replicas must be at least 1")
    if "sample_points" in values:
        check(values["sample_points"] >= 2, "sample_points", "sample_points must be at least 2")
    if "activation_time" in values:
        check(values["activation_time"] >= 0, "activation_time",
              "activation_time must be nonnegative")
    if "population_cap" in values:
        check(values["population_cap"] >= 1, "population_cap", "population_cap must be positive")
    if "grid_step" in values and values["grid_step"] is not None:
        check(values["grid_step"] > 0, "grid_step", "grid_step must be positive")
    if "fraction" in values:
        check(0 < values["fraction"] < 1, "fraction", "fraction must lie in (0, 1)")
    if "alphas" in values:
        check(len(values["alphas"]) >= 2 and all(x > 0 for x in values["alphas"]), "alphas",
              "alphas needs at least two positive entries")
    if "horizons" in values:
        check(all(h > 0 for h in values["horizons"]), "horizons", "horizons must be positive")
    if "command" in values:
        check(values["command"] in COMMANDS, "command", f"command must be one of {COMMANDS}")
    return out


def check_regime(cfg: ExperimentConfig, command: str) -> list[str]:
    """Corridor regime needed by the simulation commands."""
    if command in ("simulate", "dimension"):
        if not (cfg.a < 1.0 < cfg.b) and cfg.activation_time <= 0:
            return [f"{command} needs a < 1 < b or activation_time > 0"]
    return []


@dataclass
class RunRecord:
    command: str
    config: dict
    version: str
    outputs: dict = field(default_factory=dict)
    results: dict = field(default_factory=dict)
    survivors: Optional[int] = None
    wall_clock: float = 0.0
    passed: bool = True

    def payload(self) -> dict:
        d = asdict(self)
        d.pop("wall_clock")
        return d


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


# -- commands -------------------------------------------------------------------------

def _cmd_scale(cfg, out: Path, rec: RunRecord):
    table = ls.scale_table(cfg.model(), cfg.grid_step)
    csv_path, json_path = write_scale_table(table, out)
    dens = ls.exit_density(table)
    write_csv(out / "exit_density.csv", "y,density", zip(dens.grid, dens.values))
    rec.outputs.update(scale_table=csv_path.name, scale_json=json_path.name,
                       exit_density="exit_density.csv")
    rec.results.update(rho=table.rho, beta=table.beta, c=table.exit_constant_c,
                       truncation_terms=table.truncation_terms,
                       warnings=list(table.warnings))
    return table


def _sample_times(cfg) -> np.ndarray:
    return ms.default_sample_times(cfg.horizon, cfg.sample_points)


def _cmd_simulate(cfg, out: Path, rec: RunRecord):
    model = cfg.model()
    table = _cmd_scale(cfg, out, rec)
    times = _sample_times(cfg)
    stats = ms.simulate_replicas(model, table, cfg.replicas, cfg.horizon, seed=cfg.seed,
                                 sample_times=times, hist_times=[float(times[-1])],
                                 activation_time=cfg.activation_time,
                                 population_cap=cfg.population_cap, window=cfg.window_counts)
    agg = ms.aggregate(stats)
    ms.write_aggregate(agg, out / "martingale.csv")
    rec.outputs["martingale"] = "martingale.csv"
    rec.survivors = agg.n_survivors
    rec.results.update(replicas=agg.n_replicas, survivors=agg.n_survivors,
                       absorbed=agg.n_absorbed, extinct=agg.n_survivors == 0,
                       mean_M_final=agg.mean_M[-1], stderr_M_final=agg.stderr_M[-1])
    try:
        fit = ms.growth_rate_fit(stats, table)
        rec.results["growth"] = asdict(fit)
    except ExtinctionError as exc:
        rec.results["growth"] = {"extinction": str(exc)}
    except InsufficientSurvivorsError as exc:
        rec.results["growth"] = {"insufficient_survivors": str(exc)}
    if cfg.window_counts and agg.n_survivors:
        try:
            rec.results["window_growth"] = asdict(ms.growth_rate_fit(stats, table,
                                                                     use_window_count=True))
        except InsufficientSurvivorsError as exc:
            rec.results["window_growth"] = {"insufficient_survivors": str(exc)}
    if agg.n_survivors:
        dist = ms.sigma_histogram_distance(stats, table)
        ms.write_histogram(dist, table, out / "sigma_histogram.csv")
        rec.outputs["sigma_histogram"] = "sigma_histogram.csv"
        rec.results["sigma_l1"] = dist.l1


def _cmd_dimension(cfg, out: Path, rec: RunRecord):
    model = cfg.model()
    table = _cmd_scale(cfg, out, rec)
    horizons = cfg.horizons or (cfg.horizon,)
    trend = dim.dimension_trend(model, table.rho, horizons, cfg.replicas, seed=cfg.seed,
                                activation_time=cfg.activation_time,
                                population_cap=cfg.population_cap)
    box_dir = out / "box_counts"
    for r, report in sorted(trend.reports.items()):
        dim.write_box_counts(report, box_dir / f"replica_{r:06d}.csv")
    summary = {
        "slope": trend.summaries[-1].mean_slope,
        "predicted": dim.predicted_dimension(table.rho, model.drift_v),
        "n_survivors": trend.summaries[-1].n_survivors,
        "trend": [asdict(s) for s in trend.summaries],
        "gap_shrinking": trend.shrinking,
    }
    write_json(out / "dimension.json", summary)
    rec.outputs.update(box_counts="box_counts/", dimension="dimension.json")
    rec.survivors = summary["n_survivors"]
    rec.results["dimension"] = summary


def _cmd_spectrum(cfg, out: Path, rec: RunRecord):
    model = cfg.model()
    points = ls.spectrum_sweep(model, cfg.spectrum_points, cfg.grid_step)
    write_csv(out / "spectrum.csv", "v,upsilon,C,rho,dim_predicted,margin",
              [(p.v, p.upsilon_v, p.C_v, p.rho_v, p.dim_predicted, p.margin) for p in points])
    vt = ls.v_typ(model.measure)
    c_typ = ls.spectrum_quantities(model.with_drift(vt), cfg.grid_step)
    rec.outputs["spectrum"] = "spectrum.csv"
    rec.results.update(v_min=points[0].v_min, v_max=points[0].v_max, v_typ=vt,
                       C_at_v_typ=c_typ.C_v, min_margin=min(p.margin for p in points))
    rec.passed = all(p.margin >= -1e-9 for p in points)


def validate_brownian(betas=(1.0, 2.0, math.pi), tol: float = 1e-3) -> list[dict]:
    checks = []
    for beta in betas:
        ref = ls.brownian_reference(beta)
        num = ls.numerical_from_W(ref)
        rho_err = abs(num.rho - ref.rho) / ref.rho
        sup_err = float(np.max(np.abs(num.values_Wq - ref.values_Wq)))
        checks.append({"beta": beta, "rho": num.rho, "rho_exact": ref.rho,
                       "rho_rel_error": rho_err, "wq_sup_error": sup_err,
                       "passed": bool(rho_err < tol and sup_err < tol)})
    return checks


def _cmd_validate(cfg, out: Path, rec: RunRecord):
    checks = validate_brownian()
    write_json(out / "validate.json", checks)
    rec.outputs["validate"] = "validate.json"
    rec.results["checks"] = checks
    rec.passed = all(c["passed"] for c in checks)


_COMMANDS = {"scale": _cmd_scale, "simulate": _cmd_simulate, "dimension": _cmd_dimension,
             "spectrum": _cmd_spectrum, "validate": _cmd_validate}


def run(cfg: ExperimentConfig, command: Optional[str] = None, out_root="runs") -> RunRecord:
    command = command or cfg.command
    if command not in COMMANDS:
        raise ConfigError([f"command must be one of {COMMANDS}, got {command!r}"])
    problems = check_regime(cfg, command)
    if problems:
        raise ConfigError(problems)
    out = Path(out_root) / cfg.digest()
    out.mkdir(parents=True, exist_ok=True)
    rec = RunRecord(command=command, config=cfg.canonical(), version=_version())
    start = time.perf_counter()
    try:
        _COMMANDS[command](cfg, out, rec)
    except FragCorridorError as exc:
        raise FragCorridorError(f"{command} failed: {type(exc).__name__}: {exc}") from exc
    rec.wall_clock = time.perf_counter() - start
    write_json(out / f"{command}_record.json", rec.payload())
    write_json(out / f"{command}_timing.json", {"wall_clock_seconds": rec.wall_clock})
    rec.outputs["directory"] = str(out)
    return rec


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fragcorridor", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--out", type=Path, default=Path("runs"))
    p.add_argument("--seed", type=int)
    p.add_argument("--replicas", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config.read_text())
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.replicas is not None:
            if args.replicas < 1:
                raise ConfigError(["--replicas must be at least 1"])
            overrides["replicas"] = args.replicas
        cfg = replace(cfg, **overrides)
        rec = run(cfg, args.command, args.out)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except FragCorridorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"{args.command}: outputs in {rec.outputs['directory']}")
    for key, value in rec.results.items():
        if isinstance(value, (int, float, str, bool)):
            print(f"  {key} = {fmt(value) if isinstance(value, float) else value}")
    return EXIT_OK if rec.passed else EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
