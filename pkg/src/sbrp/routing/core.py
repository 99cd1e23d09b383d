"""Routing data types, the travel-time model and route evaluation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import kernels
from ..overbooking import LoadMoments, group_moments, normal_feasible

RIDE_TOL = 1e-9


@dataclass(frozen=True)
class StopDemand:
    stop: object  # instance.Stop
    students: tuple  # ((student id, ridership), ...)

    @property
    def count(self):
        return len(self.students)

    @property
    def moments(self):
        return group_moments([r for _, r in self.students])

    @property
    def expected_riders(self):
        return float(sum(r for _, r in self.students))


def location_key(obj):
    kind = getattr(obj, "kind", "stop")
    if hasattr(obj, "stop"):  # StopDemand
        return ("stop", obj.stop.id)
    return (kind, obj.id)


@dataclass
class TravelModel:
    """Expected leg times (minutes) between locations and dwell per location.

    ``keys`` lists location keys ("depot"|"stop"|"school", id) in matrix order.
    """

    keys: list
    travel: np.ndarray
    dwell: np.ndarray
    index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.travel = np.ascontiguousarray(self.travel, dtype=np.float64)
        self.dwell = np.asarray(self.dwell, dtype=np.float64)
        n = len(self.keys)
        if self.travel.shape != (n, n) or self.dwell.shape != (n,):
            raise ValueError("travel/dwell shape does not match keys")
        if np.any(self.travel < 0) or np.any(self.dwell < 0):
            raise ValueError("travel and dwell times must be >= 0")
        np.fill_diagonal(self.travel, 0.0)
        self.index = {k: c for c, k in enumerate(self.keys)}

    def t(self, a, b):
        return float(self.travel[self.index[location_key(a)], self.index[location_key(b)]])

    def dwell_at(self, a):
        return float(self.dwell[self.index[location_key(a)]])


@dataclass(frozen=True)
class TravelParams:
    speed_mph: float = 20.0
    dwell_fixed: float = 0.5
    board_per_student: float = 0.1

    def __post_init__(self):
        if not self.speed_mph > 0:
            raise ValueError("bus speed must be positive")
        if self.dwell_fixed < 0 or self.board_per_student < 0:
            raise ValueError("dwell parameters must be >= 0")


def _dwell_times(demands, params):
    # fixed stop time plus boarding time of the expected riders
    return [params.dwell_fixed + params.board_per_student * d.expected_riders for d in demands]


def build_travel_model(depots, demands, school, params=TravelParams(), matrix=None, matrix_keys=None):
    """Euclidean travel model, or a sub-matrix of explicit road times.

    ``matrix``/``matrix_keys`` give a full location x location time matrix
    (minutes) whose rows are labelled by location keys.
    """
    keys = [location_key(d) for d in depots] + [location_key(d) for d in demands] + [location_key(school)]
    if matrix is None:
        xy = np.array([(d.x, d.y) for d in depots] + [(d.stop.x, d.stop.y) for d in demands]
                      + [(school.x, school.y)], dtype=float)
        travel = kernels.pairwise_distance(xy, xy) / params.speed_mph * 60.0
    else:
        pos = {k: c for c, k in enumerate(matrix_keys)}
        rows = [pos[k] for k in keys]
        travel = np.asarray(matrix, dtype=float)[np.ix_(rows, rows)]
    dwell = [0.0] * len(depots) + _dwell_times(demands, params) + [0.0]
    return TravelModel(keys, travel, np.array(dwell))


@dataclass(frozen=True)
class Route:
    bus: int
    depot: object  # instance.Site
    stops: tuple  # StopDemand, in visiting order
    duration: float
    ride_time: float
    load: LoadMoments

    @property
    def stop_ids(self):
        return [d.stop.id for d in self.stops]


@dataclass(frozen=True)
class RoutePlan:
    routes: tuple
    bus_count: int
    total_time: float

    def to_dict(self):
        return {
            "routes": [
                {"bus": r.bus, "depot": r.depot.id, "stops": r.stop_ids, "duration": r.duration,
                 "ride_time": r.ride_time, "load_mu": r.load.mu, "load_var": r.load.var}
                for r in self.routes
            ],
            "bus_count": self.bus_count,
            "total_time": self.total_time,
        }


EMPTY_PLAN = RoutePlan((), 0, 0.0)


def default_fleet(depots, n_stops):
    """(bus id, depot id) pairs: one bus per stop at every depot."""
    fleet = []
    for dp in depots:
        for _ in range(max(n_stops, 1)):
            fleet.append((len(fleet), dp.id))
    return fleet


def plan_from_dict(d, demands, depots, school, travel_model):
    """Rebuild a RoutePlan from its JSON form; durations and loads are recomputed."""
    by_stop = {dm.stop.id: dm for dm in demands}
    by_depot = {dp.id: dp for dp in depots}
    routes = []
    for k, r in enumerate(d["routes"]):
        try:
            stops = [by_stop[int(j)] for j in r["stops"]]
            depot = by_depot[int(r["depot"])]
        except KeyError as exc:
            raise ValueError(f"routes[{k}]: unknown location {exc.args[0]}") from None
        routes.append(make_route(int(r["bus"]), depot, stops, school, travel_model))
    return RoutePlan(tuple(routes), len(routes), sum(r.duration for r in routes))


def route_duration(depot, stops, school, travel_model):
    """(duration, ride_time) of depot -> stops... -> school.

    duration sums every leg plus the dwell at visited stops; ride_time drops
    the depot-to-first-stop deadhead.
    """
    if not stops:
        raise ValueError("route needs at least one stop")
    ix = travel_model.index
    seq = np.array([ix[location_key(depot)]] + [ix[location_key(s)] for s in stops]
                   + [ix[location_key(school)]], dtype=np.int64)
    legs = kernels.path_cost(seq, travel_model.travel)
    dwell = 0.0
    for s in seq[1:-1]:
        dwell += travel_model.dwell[s]
    duration = legs + dwell
    return duration, duration - float(travel_model.travel[seq[0], seq[1]])


def make_route(bus, depot, stops, school, travel_model):
    duration, ride = route_duration(depot, stops, school, travel_model)
    load = LoadMoments(0.0, 0.0)
    for d in stops:
        load = load + d.moments
    return Route(bus, depot, tuple(stops), duration, ride, load)


def route_feasible(route, chance_params, dt_max):
    return normal_feasible(route.load, chance_params) and route.ride_time <= dt_max + RIDE_TOL


def check_plan(plan, demands, chance_params, dt_max, travel_model=None, school=None):
    """Violated plan/route invariants as readable strings; empty when valid."""
    issues = []
    seen = {}
    for r in plan.routes:
        if not r.stops:
            issues.append(f"bus {r.bus}: empty route")
        ids = r.stop_ids
        if len(set(ids)) != len(ids):
            issues.append(f"bus {r.bus}: repeated stop")
        for j in ids:
            seen[j] = seen.get(j, 0) + 1
        recomputed = group_moments([rho for d in r.stops for _, rho in d.students])
        if not math.isclose(recomputed.mu, r.load.mu, abs_tol=1e-9) or \
                not math.isclose(recomputed.var, r.load.var, abs_tol=1e-9):
            issues.append(f"bus {r.bus}: load moments do not match students")
        if not normal_feasible(recomputed, chance_params):
            issues.append(f"bus {r.bus}: overcrowding chance constraint violated")
        if travel_model is not None and school is not None and r.stops:
            dur, ride = route_duration(r.depot, r.stops, school, travel_model)
            if not math.isclose(dur, r.duration, rel_tol=1e-9, abs_tol=1e-9):
                issues.append(f"bus {r.bus}: duration mismatch")
            if ride > dt_max + RIDE_TOL:
                issues.append(f"bus {r.bus}: ride time {ride:.3f} > {dt_max}")
        elif r.ride_time > dt_max + RIDE_TOL:
            issues.append(f"bus {r.bus}: ride time {r.ride_time:.3f} > {dt_max}")
    for d in demands:
        c = seen.get(d.stop.id, 0)
        if c != 1:
            issues.append(f"stop {d.stop.id} visited {c} times")
    extra = set(seen) - {d.stop.id for d in demands}
    if extra:
        issues.append(f"unknown stops routed: {sorted(extra)}")
    if plan.bus_count != len(plan.routes):
        issues.append("bus_count != number of routes")
    if not math.isclose(plan.total_time, sum(r.duration for r in plan.routes), rel_tol=1e-9, abs_tol=1e-9):
        issues.append("total_time != sum of durations")
    buses = [r.bus for r in plan.routes]
    if len(set(buses)) != len(buses):
        issues.append("a bus drives more than one route")
    return issues
