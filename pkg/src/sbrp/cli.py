"""Command-line entry point: ``sbrp <subcommand> ...``.

Exit status is 0 on success and 2 on any usage or validation error, in which
case a one-line JSON diagnostic is written to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .allocation import Allocation, allocate_instance, check_allocation
from .config import DEFAULTS, RunConfig, parse_config_text, parse_value
from .errors import ConfigError, InstanceFormatError, SBRPError
from .instance import build_candidate_sets, generate_synthetic, load_instance, save_instance
from .lpformat import LPParseError, parse_lp
from .optout import calibrate
from .ridership import RidershipModel, fit_ridership
from .routing import check_plan, export_milp, plan_from_dict, solve_routing
from .simulation import Models, stop_demands, sweep, travel_model_for, write_plot_data

log = logging.getLogger("sbrp")


class UsageError(SBRPError):
    kind = "usage"

    def __init__(self, message, prog="", valid=()):
        super().__init__(message)
        self.prog = prog
        self.valid = list(valid)

    def to_dict(self):
        d = super().to_dict()
        d.update(prog=self.prog, valid=self.valid)
        return d


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message, self.prog, self._valid())

    def _valid(self):
        """Option strings and subcommand names accepted at this level."""
        out = []
        for action in self._actions:
            if isinstance(action, argparse._SubParsersAction):
                out.extend(action.choices)
            else:
                out.extend(action.option_strings)
        return out


# flag dest -> config key; flags override the config file
_FLAG_KEYS = {
    "walk_limit": "instance.walk_limit",
    "stop_capacity": "instance.stop_capacity",
    "stop_spacing": "instance.stop_spacing",
    "side": "instance.side",
    "capacity": "bus.capacity",
    "overcrowd_alpha": "bus.alpha",
    "dt_max": "bus.dt_max",
    "speed": "bus.speed_mph",
    "mean_ridership": "ridership.mean",
    "g_kind": "ridership.g_kind",
    "bus_cost": "cost.bus_cost",
    "time_cost": "cost.time_cost",
    "replicas": "sweep.replicas",
    "base_seed": "sweep.base_seed",
    "threads": "sweep.threads",
    "tau_grid": "sweep.tau_grid",
    "allocation_mode": "solver.allocation_mode",
    "routing_mode": "solver.routing_mode",
}


def _common(p, *groups):
    p.add_argument("--config", type=Path, help="flat 'section.key = value' config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    if "instance" in groups:
        p.add_argument("--walk-limit", type=float)
        p.add_argument("--stop-capacity", type=int)
        p.add_argument("--stop-spacing", type=float)
    if "bus" in groups:
        p.add_argument("--capacity", type=int, help="bus seats Q")
        p.add_argument("--overcrowd-alpha", type=float, help="overcrowding probability bound")
        p.add_argument("--dt-max", type=float, help="max expected ride time (minutes)")
        p.add_argument("--speed", type=float, help="bus speed (mph)")
        p.add_argument("--routing-mode", choices=("auto", "exact", "heuristic"))
    if "ridership" in groups:
        p.add_argument("--ridership", type=Path, help="ridership model JSON (default: fit from config)")
        p.add_argument("--mean-ridership", type=float)
        p.add_argument("--g-kind", choices=("identity", "log1p"))
    if "alloc" in groups:
        p.add_argument("--allocation-mode", choices=("auto", "exact", "heuristic"))


def build_parser():
    p = _Parser(prog="sbrp", description="School bus routing with an open opt-out offer.")
    p.add_argument("--version", action="version", version=f"sbrp {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    sub.required = True
    p.subcommands = sub.choices

    g = sub.add_parser("generate", help="synthetic instance")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--alpha", type=float, default=1.0, help="Beta shape alpha of student coordinates")
    g.add_argument("--beta", type=float, default=1.0, help="Beta shape beta of student coordinates")
    g.add_argument("--side", type=float)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("-o", "--output", type=Path, required=True)
    _common(g, "instance")

    f = sub.add_parser("fit-ridership", help="fit the affine ridership model")
    f.add_argument("instance", type=Path)
    f.add_argument("-o", "--output", type=Path, required=True)
    _common(f, "ridership")

    c = sub.add_parser("calibrate-optout", help="opt-out coefficients from behavioural anchors")
    for name in ("d-close", "p-high", "tau-high", "d-far", "p-low", "tau-low", "epsilon0"):
        c.add_argument(f"--{name}", type=float, required=True)
    c.add_argument("-o", "--output", type=Path)
    _common(c)

    a = sub.add_parser("allocate", help="assign students to stops")
    a.add_argument("instance", type=Path)
    a.add_argument("-o", "--output", type=Path, required=True)
    _common(a, "alloc")

    r = sub.add_parser("route", help="route buses over an allocation")
    r.add_argument("instance", type=Path)
    r.add_argument("--allocation", type=Path, required=True)
    r.add_argument("-o", "--output", type=Path, required=True)
    _common(r, "bus", "ridership")

    m = sub.add_parser("export-milp", help="write the routing MILP in LP format")
    m.add_argument("instance", type=Path)
    m.add_argument("--allocation", type=Path, required=True)
    m.add_argument("-o", "--output", type=Path, required=True)
    _common(m, "bus", "ridership")

    s = sub.add_parser("sweep", help="Monte Carlo savings over an incentive grid")
    s.add_argument("instance", type=Path)
    s.add_argument("-o", "--output", type=Path, required=True, help="CSV output (resumed if present)")
    s.add_argument("--plot-data", type=Path, help="also write plot-ready series")
    s.add_argument("--replicas", type=int)
    s.add_argument("--base-seed", type=int)
    s.add_argument("--threads", type=int)
    s.add_argument("--tau-grid", type=str, help="comma separated incentives (USD)")
    s.add_argument("--bus-cost", type=float)
    s.add_argument("--time-cost", type=float)
    _common(s, "bus", "ridership", "alloc")

    v = sub.add_parser("validate", help="check an instance, allocation, plan, LP or config file")
    v.add_argument("file", type=Path)
    v.add_argument("--kind", choices=("auto", "instance", "allocation", "plan", "lp", "config"), default="auto")
    v.add_argument("--instance", type=Path, help="instance to check an allocation or plan against")
    v.add_argument("--allocation", type=Path, help="allocation a plan was routed on")
    _common(v, "bus", "ridership")
    return p


def _config(args):
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, val = item.split("=", 1)
        k = k.strip()
        if k not in DEFAULTS:
            raise ConfigError(f"unknown key {k!r}")
        overrides[k] = parse_value(val)
    for dest, key in _FLAG_KEYS.items():
        val = getattr(args, dest, None)
        if val is not None:
            overrides[key] = val
    return RunConfig.load(args.config, overrides)


def _provenance(cfg, seed):
    return {"config_hash": cfg.config_hash(), "seed": seed}


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=False) + "\n")


def _ridership(args, cfg, instance):
    if getattr(args, "ridership", None) is not None:
        try:
            return RidershipModel.from_dict(json.loads(Path(args.ridership).read_text()))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad ridership file {args.ridership}: {exc}") from None
    return fit_ridership(instance.distances_to_school, cfg["ridership.mean"], cfg["ridership.g_kind"])


def _load_allocation(path, instance):
    try:
        d = json.loads(Path(path).read_text())
        alloc = Allocation.from_dict(d)
    except json.JSONDecodeError as exc:
        raise InstanceFormatError(f"invalid JSON: {exc.msg}", line=exc.lineno) from None
    except (KeyError, TypeError, ValueError) as exc:
        raise InstanceFormatError(f"bad allocation file: {exc!r}") from None
    cands = build_candidate_sets(instance)
    issues = check_allocation(alloc, cands, instance.stop_capacity)
    if issues:
        raise ConfigError(f"allocation does not fit the instance: {issues[:5]}")
    return alloc


def _demands(args, cfg, instance, alloc):
    model = _ridership(args, cfg, instance)
    settings = cfg.settings()
    demands = stop_demands(instance, alloc, model)
    return demands, travel_model_for(instance, demands, settings.travel), settings


def cmd_generate(args):
    cfg = _config(args)
    inst = generate_synthetic(args.n, args.alpha, args.beta, args.side or cfg["instance.side"], args.seed,
                              cfg["instance.walk_limit"], cfg["instance.stop_capacity"],
                              cfg["instance.stop_spacing"])
    prov = _provenance(cfg, args.seed)
    prov["generator"] = {"n": args.n, "alpha": args.alpha, "beta": args.beta,
                         "side": args.side or cfg["instance.side"]}
    save_instance(inst, args.output, prov)
    return {"students": len(inst.students), "stops": len(inst.stops)}


def cmd_fit_ridership(args):
    cfg = _config(args)
    inst = load_instance(args.instance)
    model = fit_ridership(inst.distances_to_school, cfg["ridership.mean"], cfg["ridership.g_kind"])
    out = model.to_dict()
    out["provenance"] = _provenance(cfg, inst.seed)
    _write_json(args.output, out)
    return model.to_dict()


def cmd_calibrate_optout(args):
    cfg = _config(args)
    model = calibrate(args.d_close, args.p_high, args.tau_high, args.d_far, args.p_low, args.tau_low,
                      args.epsilon0)
    out = model.to_dict()
    if args.output is not None:
        out["provenance"] = _provenance(cfg, cfg["sweep.base_seed"])
        _write_json(args.output, out)
    return model.to_dict()


def cmd_allocate(args):
    cfg = _config(args)
    inst = load_instance(args.instance)
    alloc = allocate_instance(inst, mode=cfg["solver.allocation_mode"], swap_rounds=cfg["solver.swap_rounds"])
    out = alloc.to_dict()
    out["provenance"] = _provenance(cfg, inst.seed)
    _write_json(args.output, out)
    return {"open_count": alloc.open_count, "total_walk": alloc.total_walk, "mode": alloc.mode}


def cmd_route(args):
    cfg = _config(args)
    inst = load_instance(args.instance)
    alloc = _load_allocation(args.allocation, inst)
    demands, travel, settings = _demands(args, cfg, inst, alloc)
    plan = solve_routing(demands, inst.depots, inst.school, travel, settings.chance, settings.dt_max,
                         mode=settings.routing_mode, options=settings.routing)
    out = plan.to_dict()
    out["provenance"] = _provenance(cfg, inst.seed)
    _write_json(args.output, out)
    return {"bus_count": plan.bus_count, "total_time": plan.total_time}


def cmd_export_milp(args):
    cfg = _config(args)
    inst = load_instance(args.instance)
    alloc = _load_allocation(args.allocation, inst)
    demands, travel, settings = _demands(args, cfg, inst, alloc)
    export_milp(demands, inst.depots, inst.school, travel, settings.chance, settings.dt_max,
                path=args.output, provenance=_provenance(cfg, inst.seed))
    return {"stops": len(demands)}


def cmd_sweep(args):
    cfg = _config(args)
    inst = load_instance(args.instance)
    models = Models(_ridership(args, cfg, inst), cfg.optout_model())
    prov = _provenance(cfg, cfg["sweep.base_seed"])

    def progress(done, total):
        log.info("sweep: %d/%d incentives done", done, total)

    curve = sweep(inst, models, cfg["sweep.tau_grid"], cfg["sweep.replicas"], cfg["sweep.base_seed"],
                  cfg.settings(), out_csv=args.output, provenance=prov, workers=cfg["sweep.threads"],
                  progress=progress)
    if args.plot_data is not None:
        write_plot_data(curve, args.plot_data, prov)
    return {"baseline_buses": curve.baseline_buses, "taus": len(curve.taus)}


def _guess_kind(path, text):
    if path.suffix == ".lp":
        return "lp"
    try:
        d = json.loads(text)
    except json.JSONDecodeError:
        return "config" if path.suffix in (".cfg", ".conf", ".ini", ".txt") else "instance"
    if isinstance(d, dict):
        if "routes" in d:
            return "plan"
        if "assignments" in d:
            return "allocation"
    return "instance"


def cmd_validate(args):
    text = Path(args.file).read_text()
    kind = args.kind if args.kind != "auto" else _guess_kind(Path(args.file), text)
    if kind == "instance":
        inst = load_instance(args.file)
        build_candidate_sets(inst)
        return {"kind": kind, "students": len(inst.students), "stops": len(inst.stops)}
    if kind == "config":
        cfg = RunConfig.from_dict(parse_config_text(text, str(args.file)))
        return {"kind": kind, "config_hash": cfg.config_hash()}
    if kind == "lp":
        try:
            lp = parse_lp(text)
        except LPParseError as exc:
            raise InstanceFormatError(str(exc), line=exc.line) from None
        return {"kind": kind, "variables": len(lp.variables), "constraints": len(lp.rows)}
    if args.instance is None:
        raise ConfigError(f"validating a {kind} file needs --instance")
    inst = load_instance(args.instance)
    if kind == "allocation":
        alloc = _load_allocation(args.file, inst)
        return {"kind": kind, "open_count": alloc.open_count}
    if args.allocation is None:
        raise ConfigError("validating a plan needs --allocation")
    cfg = _config(args)
    alloc = _load_allocation(args.allocation, inst)
    demands, travel, settings = _demands(args, cfg, inst, alloc)
    try:
        plan = plan_from_dict(json.loads(text), demands, inst.depots, inst.school, travel)
    except (KeyError, TypeError, ValueError) as exc:
        raise InstanceFormatError(f"bad plan file: {exc}") from None
    issues = check_plan(plan, demands, settings.chance, settings.dt_max, travel, inst.school)
    if issues:
        raise ConfigError(f"plan violates constraints: {issues}")
    return {"kind": kind, "bus_count": plan.bus_count}


COMMANDS = {
    "generate": cmd_generate,
    "fit-ridership": cmd_fit_ridership,
    "calibrate-optout": cmd_calibrate_optout,
    "allocate": cmd_allocate,
    "route": cmd_route,
    "export-milp": cmd_export_milp,
    "sweep": cmd_sweep,
    "validate": cmd_validate,
}


def _fail(exc):
    d = exc.to_dict() if isinstance(exc, SBRPError) else {"kind": type(exc).__name__, "message": str(exc)}
    sys.stderr.write(json.dumps({"error": d}) + "\n")
    return 2


def main(argv=None):
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        if extra:
            # report against the subcommand so its own flags are listed
            parser.subcommands[args.command].error(f"unrecognized arguments: {' '.join(extra)}")
    except UsageError as exc:
        return _fail(exc)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        summary = COMMANDS[args.command](args)
    except (SBRPError, ValueError, OSError) as exc:
        return _fail(exc)
    sys.stdout.write(json.dumps(summary) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
