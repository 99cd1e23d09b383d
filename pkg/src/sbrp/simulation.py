"""Monte Carlo evaluation of an open opt-out offer over an incentive grid.

For every replica the students' opt-out decisions are sampled, stops and
routes are re-planned for the students who stay, and the resulting
operating cost is compared with the zero-opt-out baseline.  Replicas share
one uniform per student across the whole grid (common random numbers), so
opt-out sets grow monotonically with the incentive.
"""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .allocation import allocate_instance
from .optout import optout_probability, replica_rng, replica_seed, student_uniforms
from .overbooking import ChanceParams
from .ridership import individual_ridership
from .routing import EMPTY_PLAN, RoutingOptions, StopDemand, TravelParams, build_travel_model, solve_routing

log = logging.getLogger(__name__)

CSV_COLUMNS = ("tau", "replicas", "mean_savings", "std_savings", "p_fail", "mean_buses", "mean_optouts")
DEFAULT_TAU_GRID = tuple(float(t) for t in range(0, 2501, 250))


@dataclass(frozen=True)
class CostParams:
    bus_cost: float = 85_000.0  # USD per bus per school year
    time_cost: float = 0.0  # USD per planned minute

    def __post_init__(self):
        if not self.bus_cost > 0:
            raise ValueError("bus_cost must be positive")
        if self.time_cost < 0:
            raise ValueError("time_cost must be >= 0")


@dataclass(frozen=True)
class Settings:
    """Everything needed to re-plan a student population."""

    chance: ChanceParams = ChanceParams()
    travel: TravelParams = TravelParams()
    dt_max: float = 40.0
    cost: CostParams = CostParams()
    allocation_mode: str = "auto"
    swap_rounds: int = 1
    routing_mode: str = "auto"
    routing: RoutingOptions = RoutingOptions()


@dataclass(frozen=True)
class Models:
    ridership: object  # RidershipModel
    optout: object  # OptOutModel


@dataclass
class Scenario:
    tau: float
    replica_index: int
    replica_seed: int
    optouts: frozenset
    plan: object
    incentive_paid: float
    operating_cost: float
    baseline_cost: float
    savings: float
    max_incentive_per_student: float  # inf when nobody opted out


@dataclass
class SavingsCurve:
    taus: list
    mean_savings: list
    std_savings: list
    p_fail: list
    mean_buses: list
    mean_optouts: list
    replicas: int
    baseline_buses: int = 0
    baseline_cost: float = 0.0
    scenarios: dict = field(default_factory=dict, repr=False)

    @property
    def degenerate(self):
        return self.replicas < 2


def stop_demands(instance, allocation, ridership_model):
    """Students per open stop with their individual ridership."""
    dist = {s.id: s.dist_school for s in instance.students}
    stops = {s.id: s for s in instance.stops}
    groups = {}
    for sid, j in sorted(allocation.stop_of_student.items()):
        groups.setdefault(j, []).append((sid, individual_ridership(ridership_model, dist[sid])))
    return [StopDemand(stops[j], tuple(groups[j])) for j in sorted(groups)]


def travel_model_for(instance, demands, params):
    if instance.travel_matrix is None:
        return build_travel_model(instance.depots, demands, instance.school, params)
    keys = ([("depot", d.id) for d in instance.depots] + [("stop", s.id) for s in instance.stops]
            + [("school", instance.school.id)])
    return build_travel_model(instance.depots, demands, instance.school, params,
                              matrix=instance.travel_matrix, matrix_keys=keys)


def plan_population(instance, ridership_model, settings):
    """Allocate and route every student of ``instance``: (allocation, plan)."""
    if not instance.students:
        return None, EMPTY_PLAN
    alloc = allocate_instance(instance, mode=settings.allocation_mode, swap_rounds=settings.swap_rounds)
    demands = stop_demands(instance, alloc, ridership_model)
    travel = travel_model_for(instance, demands, settings.travel)
    plan = solve_routing(demands, instance.depots, instance.school, travel, settings.chance,
                         settings.dt_max, mode=settings.routing_mode, options=settings.routing)
    return alloc, plan


def operating_cost(plan, cost):
    return cost.bus_cost * plan.bus_count + cost.time_cost * plan.total_time


def baseline(instance, ridership_model, settings):
    """Plan and operating cost with nobody opting out."""
    _, plan = plan_population(instance, ridership_model, settings)
    return plan, operating_cost(plan, settings.cost)


def _scenario(tau, index, seed, optouts, plan, base_cost, cost):
    incentive = float(tau) * len(optouts)
    operating = operating_cost(plan, cost)
    savings = base_cost - (incentive + operating)
    max_inc = (base_cost - operating) / len(optouts) if optouts else math.inf
    return Scenario(float(tau), index, seed, optouts, plan, incentive, operating, base_cost, savings, max_inc)


def _plan_remaining(instance, models, settings, optouts, cache):
    key = optouts
    if cache is not None and key in cache:
        return cache[key]
    remaining = [s.id for s in instance.students if s.id not in optouts]
    if remaining:
        _, plan = plan_population(instance.subset(remaining), models.ridership, settings)
    else:
        plan = EMPTY_PLAN
    if cache is not None:
        cache[key] = plan
    return plan


def run_replica(instance, models, tau, replica_index, base_seed, settings, baseline_cost, cache=None):
    """One sampled scenario at incentive ``tau``."""
    seed = replica_seed(base_seed, replica_index)
    uniforms = student_uniforms(instance, replica_rng(base_seed, replica_index))
    optouts = _optouts(instance, models.optout, tau, uniforms)
    plan = _plan_remaining(instance, models, settings, optouts, cache)
    return _scenario(tau, replica_index, seed, optouts, plan, baseline_cost, settings.cost)


def _optouts(instance, model, tau, uniforms):
    theta = np.atleast_1d(optout_probability(model, instance.distances_to_school, tau))
    return frozenset(s.id for s, th in zip(instance.students, theta) if uniforms[s.id] < th)


_WORKER_CACHE = {}


def _replica_job(args):
    instance, models, tau, index, base_seed, settings, base_cost = args
    return run_replica(instance, models, tau, index, base_seed, settings, base_cost, _WORKER_CACHE)


def summarize(tau, scenarios):
    s = np.array([sc.savings for sc in scenarios])
    r = len(scenarios)
    return {
        "tau": float(tau),
        "replicas": r,
        "mean_savings": float(np.mean(s)),
        "std_savings": float(np.std(s, ddof=1)) if r > 1 else 0.0,
        "p_fail": sum(1 for x in s if x < 0) / r,
        "mean_buses": float(np.mean([sc.plan.bus_count for sc in scenarios])),
        "mean_optouts": float(np.mean([len(sc.optouts) for sc in scenarios])),
    }


def _fmt(v):
    return str(int(v)) if isinstance(v, int) else repr(float(v))


def csv_header(provenance, replicas):
    lines = ["# sbrp sweep"]
    for k in sorted(provenance):
        lines.append(f"# {k}={provenance[k]}")
    lines.append(f"# degenerate_std={'true' if replicas < 2 else 'false'}")
    return "\n".join(lines) + "\n" + ",".join(CSV_COLUMNS) + "\n"


def _row(summary):
    return ",".join(_fmt(summary[c]) for c in CSV_COLUMNS) + "\n"


def _read_existing(path, header):
    if not path.exists():
        return None
    text = path.read_text()
    if not text.startswith(header):
        return None
    done = {}
    for line in text[len(header):].splitlines():
        if not line.strip():
            continue
        vals = line.split(",")
        row = {c: (int(v) if c == "replicas" else float(v)) for c, v in zip(CSV_COLUMNS, vals)}
        done[row["tau"]] = row
    return done


def sweep(instance, models, tau_grid=DEFAULT_TAU_GRID, replicas=100, base_seed=0, settings=Settings(),
          out_csv=None, provenance=None, workers=1, progress=None, keep_scenarios=False):
    """Replicated opt-out simulation over an ascending incentive grid.

    With ``out_csv`` rows are appended as each incentive completes; rerunning
    with the same provenance resumes after the last finished incentive.
    """
    taus = [float(t) for t in tau_grid]
    if not taus:
        raise ValueError("tau grid must be non-empty")
    if any(b <= a for a, b in zip(taus, taus[1:])):
        raise ValueError("tau grid must be strictly ascending")
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    base_plan, base_cost = baseline(instance, models.ridership, settings)
    header = csv_header(provenance or {}, replicas)
    done = {}
    fh = None
    if out_csv is not None:
        path = Path(out_csv)
        existing = _read_existing(path, header)
        if existing is None:
            path.write_text(header)
        else:
            done = existing
        fh = path.open("a")
    todo = [t for t in taus if t not in done]
    if done and todo and min(todo) < max(done):
        raise ValueError("existing sweep output is not a prefix of the incentive grid")
    scen = {}
    cache = {}
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 and todo else None
    try:
        for k, t in enumerate(todo):
            if pool is not None:
                jobs = [(instance, models, t, r, base_seed, settings, base_cost) for r in range(replicas)]
                batch = list(pool.map(_replica_job, jobs))
            else:
                batch = [run_replica(instance, models, t, r, base_seed, settings, base_cost, cache)
                         for r in range(replicas)]
            done[t] = summarize(t, batch)
            if keep_scenarios:
                scen[t] = batch
            if fh is not None:
                fh.write(_row(done[t]))
                fh.flush()
            log.info("tau=%g mean_savings=%.1f p_fail=%.3f", t, done[t]["mean_savings"], done[t]["p_fail"])
            if progress:
                progress(k + 1, len(todo))
    finally:
        if pool is not None:
            pool.shutdown()
        if fh is not None:
            fh.close()
    rows = [done[t] for t in taus]
    return SavingsCurve(
        taus=taus,
        mean_savings=[r["mean_savings"] for r in rows],
        std_savings=[r["std_savings"] for r in rows],
        p_fail=[r["p_fail"] for r in rows],
        mean_buses=[r["mean_buses"] for r in rows],
        mean_optouts=[r["mean_optouts"] for r in rows],
        replicas=replicas,
        baseline_buses=base_plan.bus_count,
        baseline_cost=base_cost,
        scenarios=scen,
    )


def write_plot_data(curve, path, provenance=None):
    """One two-column block (tau, value) per series, blank-line separated."""
    series = ("mean_savings", "std_savings", "p_fail", "mean_buses", "mean_optouts")
    out = [f"# {k}={v}" for k, v in sorted((provenance or {}).items())]
    for name in series:
        out.append(f"# series: {name}")
        out.append(f"# tau {name}")
        for t, v in zip(curve.taus, getattr(curve, name)):
            out.append(f"{_fmt(t)} {_fmt(v)}")
        out.append("")
        out.append("")
    Path(path).write_text("\n".join(out))


def default_workers():
    return max(1, min(os.cpu_count() or 1, 8))
