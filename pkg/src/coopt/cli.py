"""Command-line front end: ``coopt run | validate | dump-case | oracle | plot``.

Runs are driven by TOML files. Data references may be bundled names
(``case9``, ``fleet_vta``, ``demand``, ``wind``) or paths, resolved relative
to the config file. Exit status: 0 optimal, 2 infeasible, 1 error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

from . import analysis
from . import matpower as mp
from .formulations import (
    CoOptConfig,
    FormulationError,
    build_charging_2ssp,
    build_deterministic,
    build_pricing_mpopf,
    build_ramping_2ssp,
    export_solution,
    extract_prices,
    solution_residuals,
)
from .model_ir import SolveOptions, SolverError, solve
from .network import NetworkDefaults, attach_renewable, build_network, bundled_profile, load_profile_csv
from .scenarios import generate_scenarios
from .transit import Finding, bundled_fleet_path, load_fleet_json, validate_fleet

log = logging.getLogger("coopt")

MODELS = ("det", "ramp2ssp", "charge2ssp", "pricing")
ANALYSES = ("none", "benefit", "efficacy", "congestion", "capacity", "pricing_study")
CONFIG_DIR = Path(__file__).parent / "data" / "configs"
EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    case: str = "case9"
    fleet: str = "fleet_vta"
    demand_profile: str = "demand"
    wind_profile: str = "wind"
    demand_scale: float = 0.01
    line_limit: float | None = None
    wind_bus: int | None = 4
    wind_capacity: float = 1.0
    model: str = "det"
    analysis: str = "none"
    alpha: float = 0.5
    gamma: float = 1.2
    scenarios_n: int = 10
    scenarios_sigma: float = 0.1
    scenarios_seed: int = 0
    backend: str | None = None
    gap: float = 1e-6
    threads: int = 1
    time_limit: float | None = None
    output: str = "runs/out"
    n_anticipations: int = 100
    gamma_grid: list[float] = field(default_factory=lambda: list(analysis.GAMMA_GRID))
    capacity_grid: list[float] = field(default_factory=list)
    congestion_line_cap: float = 10.0
    scale_rates: bool = False
    base_dir: str = "."

    @classmethod
    def from_dict(cls, data: dict, base_dir: str | Path = ".") -> RunConfig:
        flat: dict = {"base_dir": str(base_dir)}
        sections = {
            "data": {"case", "fleet", "demand_profile", "wind_profile", "demand_scale", "line_limit", "wind_bus",
                     "wind_capacity"},
            "model": {"model", "analysis", "alpha", "gamma"},
            "scenarios": {"n", "sigma", "seed"},
            "solver": {"backend", "gap", "threads", "time_limit"},
            "analysis": {"n_anticipations", "gamma_grid", "capacity_grid", "congestion_line_cap", "scale_rates"},
            "output": {"dir"},
        }
        for sec, body in data.items():
            if sec not in sections or not isinstance(body, dict):
                raise ConfigError(f"unknown config section [{sec}]")
            for key, val in body.items():
                if key not in sections[sec]:
                    raise ConfigError(f"unknown key {key!r} in [{sec}]")
                name = {"scenarios": f"scenarios_{key}", "output": "output"}.get(sec, key)
                if sec == "model" and key == "model":
                    name = "model"
                flat[name] = val
        if "wind_bus" in flat and flat["wind_bus"] == 0:
            flat["wind_bus"] = None
        cfg = cls(**flat)
        cfg.check_enums()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        p = resolve_config_path(path)
        with open(p, "rb") as fh:
            data = tomllib.load(fh)
        return cls.from_dict(data, p.parent)

    def check_enums(self) -> None:
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.analysis not in ANALYSES:
            raise ConfigError(f"analysis must be one of {ANALYSES}, got {self.analysis!r}")
        if not 0 <= self.alpha <= 1:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.scenarios_n < 1:
            raise ConfigError("scenario count must be >= 1")

    def solver_options(self) -> SolveOptions:
        return SolveOptions(gap=self.gap, time_limit=self.time_limit, threads=self.threads, backend=self.backend,
                            seed=self.scenarios_seed)

    def coopt_config(self) -> CoOptConfig:
        # gamma reaches the models through the network's ramp costs, so sweeps can vary it
        return CoOptConfig(alpha=self.alpha)

    # -- file resolution ------------------------------------------------------------
    def _path(self, ref: str) -> Path:
        p = Path(ref)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def case_path(self) -> Path:
        p = self._path(self.case)
        return p if p.exists() else mp.bundled_case_path(self.case)

    def fleet_path(self) -> Path:
        if self.fleet in ("fleet_vta", "fleet_vta.json"):
            return bundled_fleet_path()
        return self._path(self.fleet)

    def profile(self, which: str):
        ref = self.demand_profile if which == "demand" else self.wind_profile
        if ref == which:
            return bundled_profile(which)
        column = "multiplier" if which == "demand" else "mw"
        return load_profile_csv(self._path(ref), column=column)


def resolve_config_path(path: str | Path) -> Path:
    p = Path(path)
    if p.exists():
        return p
    bundled = CONFIG_DIR / p.name
    if bundled.exists():
        return bundled
    raise ConfigError(f"config file {path} not found (bundled configs: {', '.join(bundled_configs())})")


def bundled_configs() -> list[str]:
    return sorted(p.name for p in CONFIG_DIR.glob("*.toml"))


@dataclass
class Inputs:
    net: object
    fleet: object
    scenarios: object


def build_inputs(cfg: RunConfig) -> Inputs:
    raw = mp.read_case(cfg.case_path())
    defaults = NetworkDefaults(ramp_up_mult=cfg.gamma, flow_limit_override=cfg.line_limit)
    net = build_network(raw, cfg.profile("demand"), cfg.demand_scale, defaults)
    if cfg.wind_bus is not None:
        net = attach_renewable(net, cfg.wind_bus, cfg.wind_capacity)
    fleet = load_fleet_json(cfg.fleet_path(), periods=net.periods, period_hours=net.period_hours)
    wind = cfg.profile("wind") * cfg.wind_capacity  # bundled profile is per MW of capacity
    scen = generate_scenarios(wind, cfg.scenarios_n, cfg.scenarios_sigma, cfg.wind_capacity, seed=cfg.scenarios_seed)
    return Inputs(net, fleet, scen)


# -- validate ----------------------------------------------------------------------


def validate(cfg: RunConfig) -> list[Finding]:
    """Dry run: parse every input, check the fleet and profile lengths. Never solves."""
    out: list[Finding] = []
    try:
        raw = mp.read_case(cfg.case_path())
    except FileNotFoundError as exc:
        return [Finding("error", "missing_file", str(exc))]
    except mp.CaseError as exc:
        return [Finding("error", "case_error", f"{type(exc).__name__}: {exc}")]
    try:
        demand = cfg.profile("demand")
        wind = cfg.profile("wind")
    except (OSError, ValueError) as exc:
        return [Finding("error", "profile_error", str(exc))]
    if len(demand) != len(wind):
        out.append(Finding("error", "profile_length", f"demand has {len(demand)} periods, wind {len(wind)}"))
    fpath = cfg.fleet_path()
    if not fpath.exists():
        out.append(Finding("error", "missing_file", f"fleet file {fpath} not found"))
        return out
    try:
        net = build_network(raw, demand, cfg.demand_scale)
        fleet = load_fleet_json(fpath, periods=net.periods, period_hours=net.period_hours)
    except (ValueError, KeyError) as exc:
        out.append(Finding("error", "data_error", f"{type(exc).__name__}: {exc}"))
        return out
    if cfg.wind_bus is not None and not net.has_node(cfg.wind_bus):
        out.append(Finding("error", "unknown_wind_bus", f"wind bus {cfg.wind_bus} not in network"))
    out.extend(validate_fleet(fleet, net))
    return out


# -- run -----------------------------------------------------------------------------


def _build_model(kind: str, inp: Inputs, cfg: RunConfig, opts: SolveOptions):
    c = cfg.coopt_config()
    if kind == "pricing":
        return build_pricing_mpopf(inp.net, inp.scenarios, c), None
    pm = build_pricing_mpopf(inp.net, inp.scenarios, c)
    pres = solve(pm, opts)
    if not pres.ok:
        raise SolverError(f"pricing model is {pres.status}")
    prices = extract_prices(pm, pres)
    if kind == "det":
        return build_deterministic(inp.net, inp.fleet, prices, c), prices
    if kind == "ramp2ssp":
        return build_ramping_2ssp(inp.net, inp.fleet, inp.scenarios, prices, c), prices
    return build_charging_2ssp(inp.net, inp.fleet, inp.scenarios, prices, c), prices


def _write_prices(prices, outdir: Path) -> None:
    N, T = prices.first_stage.shape
    rows = ["node,period,scenario,price"]
    for i in range(N):
        for t in range(T):
            rows.append(f"{i + 1},{t + 1},0,{prices.first_stage[i, t]!r}")
            if prices.second_stage is not None:
                for w in range(prices.second_stage.shape[2]):
                    rows.append(f"{i + 1},{t + 1},{w + 1},{prices.second_stage[i, t, w]!r}")
    (outdir / "prices.csv").write_text("\n".join(rows) + "\n")


def run_model(cfg: RunConfig, outdir: Path) -> tuple[int, dict]:
    opts = cfg.solver_options()
    inp = build_inputs(cfg)
    model, prices = _build_model(cfg.model, inp, cfg, opts)
    log.info("%s", model.summary())
    res = solve(model, opts)
    log.info("solved %s: status=%s objective=%.9g in %.3fs (backend %s)", model.name, res.status, res.objective,
             res.solve_seconds, res.backend)
    summary = export_solution(model, res, outdir)
    report = {"run": "model", "model": cfg.model, "status": res.status, "objective": summary["objective"],
              "terms": summary["terms"], "counts": summary["counts"]}
    if res.ok:
        resid = solution_residuals(model, res)
        report["max_residual"] = max(resid.values(), default=0.0)
        if cfg.model in ("ramp2ssp", "charge2ssp"):
            report["wind_utilization"] = analysis.wind_utilization(res, inp.scenarios)
            report["wind_shortfall_by_period"] = [float(v) for v in analysis.wind_shortfall(res, inp.scenarios)]
        if cfg.model == "pricing":
            prices = extract_prices(model, res)
    if prices is not None:
        _write_prices(prices, outdir)
    code = EXIT_OK if res.ok else (EXIT_INFEASIBLE if res.status == "infeasible" else EXIT_ERROR)
    return code, report


def run_analysis(cfg: RunConfig, outdir: Path) -> tuple[int, dict]:
    opts = cfg.solver_options()
    inp = build_inputs(cfg)
    c = cfg.coopt_config()
    kind = cfg.analysis
    if kind == "benefit":
        net = replace(inp.net, renewables=())
        rep = analysis.run_uncoordinated(net, inp.fleet, cfg.n_anticipations, c, cfg.scenarios_seed, opts)
        analysis.write_benefit_report(rep, outdir)
        return EXIT_OK, {"analysis": kind, **rep.to_dict()}
    if kind == "efficacy":
        rep = analysis.run_efficacy_sweep(inp.net, inp.fleet, inp.scenarios, cfg.gamma_grid, c, opts)
        analysis.write_efficacy_report(rep, outdir)
        return EXIT_OK, {"analysis": kind, **rep.to_dict()}
    if kind == "congestion":
        net = replace(inp.net, renewables=())
        prices, _ = analysis.lmp_prices(net.with_flow_limit(cfg.congestion_line_cap), options=opts)
        rep = analysis.run_congestion_sweep(net, inp.fleet, cfg.capacity_grid, cfg.congestion_line_cap, prices, c,
                                            opts, cfg.scale_rates)
        analysis.write_congestion_report(rep, outdir)
        return EXIT_OK, {"analysis": kind, **rep.to_dict()}
    if kind == "capacity":
        net = replace(inp.net, renewables=())
        prices, _ = analysis.lmp_prices(net, options=opts)
        rep = analysis.run_capacity_sweep(net, inp.fleet, cfg.capacity_grid, prices, c, opts, cfg.scale_rates)
        analysis.write_capacity_report(rep, outdir)
        return EXIT_OK, {"analysis": kind, **rep.to_dict()}
    rep = analysis.run_pricing_study(inp.net, inp.fleet, inp.scenarios, c, opts)
    analysis.write_pricing_report(rep, outdir)
    return EXIT_OK, {"analysis": kind, **rep.to_dict()}


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def run(cfg: RunConfig, outdir: str | Path | None = None) -> int:
    """Execute one configured run; artifacts land in ``outdir`` (or the configured directory)."""
    out = Path(outdir) if outdir is not None else Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out / "run.log", mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("coopt")
    root.addHandler(handler)
    root.setLevel(logging.INFO)
    t0 = time.perf_counter()
    try:
        findings = [f for f in validate(cfg) if f.severity == "error"]
        if findings:
            raise ConfigError("; ".join(f"{f.code}: {f.message}" for f in findings))
        if cfg.analysis == "none":
            code, report = run_model(cfg, out)
        else:
            code, report = run_analysis(cfg, out)
        report["config"] = {k: v for k, v in asdict(cfg).items() if k not in ("base_dir", "output")}
        (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True, default=_json_default) + "\n")
        log.info("run finished with exit %d in %.2fs", code, time.perf_counter() - t0)
        return code
    except (ConfigError, FormulationError, SolverError, mp.CaseError, analysis.AnalysisError, OSError,
            ValueError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
        (out / "error.json").write_text(json.dumps(err, indent=2) + "\n")
        log.error("%s: %s", err["error"], err["message"])
        print(json.dumps(err), file=sys.stderr)
        return EXIT_ERROR
    finally:
        root.removeHandler(handler)
        handler.close()


# -- oracle ------------------------------------------------------------------------------


def oracle_report(name: str) -> list[dict]:
    """Oracle and model objectives for every model kind on a bundled two-node instance."""
    from . import oracle
    from .formulations import build_transit_only

    inst = oracle.INSTANCES[name]()
    net, fleet, prices = inst.network(), inst.fleet(), inst.price_set()
    cfg = CoOptConfig(alpha=inst.alpha)
    kinds = {"det": lambda: build_deterministic(net, fleet, prices, cfg),
             "transit": lambda: build_transit_only(fleet, prices, inst.T, cfg)}
    if inst.wind:
        scen = inst.scenario_set()
        kinds["ramp2ssp"] = lambda: build_ramping_2ssp(net, fleet, scen, prices, cfg)
        kinds["charge2ssp"] = lambda: build_charging_2ssp(net, fleet, scen, prices, cfg)
    rows = []
    for kind, build in kinds.items():
        t0 = time.perf_counter()
        ref = oracle.solve_oracle(inst, kind)
        t_oracle = time.perf_counter() - t0
        res = solve(build())
        got = res.objective if res.ok else float("inf")
        gap = abs(got - ref) / max(1.0, abs(ref)) if np.isfinite(ref) and np.isfinite(got) else (
            0.0 if ref == got else float("inf"))
        rows.append({"instance": name, "kind": kind, "oracle": ref, "model": got, "rel_gap": gap,
                     "oracle_seconds": t_oracle})
    return rows


# -- entry point -----------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coopt", description="Transit-fleet and power-grid co-optimization runs.")
    sub = p.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="build, solve and report one configured run")
    r.add_argument("--config", required=True, help="TOML file or bundled config name")
    r.add_argument("--out", help="output directory (overrides [output] dir)")
    r.add_argument("--threads", type=int, help="solver threads (1 keeps runs reproducible)")
    v = sub.add_parser("validate", help="parse inputs and report findings without solving")
    v.add_argument("--config", required=True)
    d = sub.add_parser("dump-case", help="print a parsed case as JSON or re-serialized MATPOWER")
    d.add_argument("case", help="case file or bundled name")
    d.add_argument("--matpower", action="store_true", help="emit MATPOWER text instead of JSON")
    o = sub.add_parser("oracle", help="compare the models with the enumeration oracle")
    o.add_argument("--instance", default="micro2")
    pl = sub.add_parser("plot", help="render every CSV in a run directory as an SVG line plot")
    pl.add_argument("rundir")
    sub.add_parser("configs", help="list bundled configs")
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    if args.cmd == "run":
        try:
            cfg = RunConfig.load(args.config)
        except (ConfigError, OSError, tomllib.TOMLDecodeError, TypeError) as exc:
            print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
            return EXIT_ERROR
        if args.threads is not None:
            cfg.threads = args.threads
        code = run(cfg, args.out)
        out = Path(args.out or cfg.output)
        if (out / "report.json").exists():
            rep = json.loads((out / "report.json").read_text())
            keys = ("status", "objective", "wind_utilization", "dominance", "sign_changes", "utilization_spread")
            print(json.dumps({k: rep[k] for k in keys if k in rep} | {"output": str(out)}))
        return code
    if args.cmd == "validate":
        try:
            cfg = RunConfig.load(args.config)
        except (ConfigError, OSError, tomllib.TOMLDecodeError, TypeError) as exc:
            print(json.dumps([{"severity": "error", "code": "config", "message": str(exc)}]))
            return EXIT_ERROR
        findings = validate(cfg)
        print(json.dumps([asdict(f) for f in findings], indent=2))
        return EXIT_ERROR if any(f.severity == "error" for f in findings) else EXIT_OK
    if args.cmd == "dump-case":
        p = Path(args.case)
        try:
            raw = mp.read_case(p if p.exists() else mp.bundled_case_path(args.case))
        except (FileNotFoundError, mp.CaseError) as exc:
            print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
            return EXIT_ERROR
        if args.matpower:
            sys.stdout.write(mp.dump_case(raw))
        else:
            print(json.dumps({"case_name": raw.case_name, "base_mva": raw.base_mva, "bus": raw.bus_rows.tolist(),
                              "gen": raw.gen_rows.tolist(), "branch": raw.branch_rows.tolist(),
                              "gencost": raw.gencost_rows.tolist()}, indent=1, default=_json_default))
        return EXIT_OK
    if args.cmd == "oracle":
        from . import oracle

        if args.instance not in oracle.INSTANCES:
            print(json.dumps({"error": "UnknownInstance", "message": f"choose from {sorted(oracle.INSTANCES)}"}),
                  file=sys.stderr)
            return EXIT_ERROR
        rows = oracle_report(args.instance)
        for row in rows:
            print(f"{row['instance']:>18} {row['kind']:>10}  oracle {row['oracle']:.9g}  model {row['model']:.9g}"
                  f"  rel_gap {row['rel_gap']:.2e}")
        return EXIT_OK if all(r["rel_gap"] < 1e-6 for r in rows) else EXIT_ERROR
    if args.cmd == "plot":
        from .plot import plot_run

        written = plot_run(args.rundir)
        for path in written:
            print(path)
        return EXIT_OK
    if args.cmd == "configs":
        print("\n".join(bundled_configs()))
        return EXIT_OK
    return EXIT_ERROR  # pragma: no cover


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
