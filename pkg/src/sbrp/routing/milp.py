"""Arc-based routing MILP in LP format, for checking plans with an outside solver.

Locations are labelled ``d<id>`` (depots), ``p<id>`` (stops) and ``s<id>``
(school); buses ``b<id>``.  Variables:

* ``x_<i>_<j>_<b>``  binary, bus b drives arc (i, j)
* ``w_<b>_<j>``      binary, stop j is served by bus b
* ``u_<b>_<i>``      MTZ position of location i on bus b, in [1, |P|+2]
* ``z_<b>_<v>``      binary, the integer std-dev level of bus b is v
* ``sig_<b>``        integer std-dev level of bus b

Only arcs depot->stop, stop->stop and stop->school are created; self loops,
arcs into a depot and arcs out of the school are never generated, so they
need no explicit zero constraint.  The objective is
``W * (number of buses leaving a depot) + total expected time`` with
``W = 1 + UB`` where UB bounds the total time of any plan.
"""
from __future__ import annotations

import math

from ..errors import TooLarge
from ..lpformat import LPModel
from ..overbooking import sigma_tilde
from .core import default_fleet, location_key

MAX_EXPORT_STOPS = 30


def _label(key):
    kind, ident = key
    return {"depot": "d", "stop": "p", "school": "s"}[kind] + str(ident)


def count_formulas(n_depots, n_stops, n_buses, v_plus):
    """Closed-form sizes of the exported model."""
    nd, m, nb = n_depots, n_stops, n_buses
    arcs = nd * m + m * (m - 1) + m
    return {
        "arcs": arcs,
        "x": nb * arcs,
        "w": nb * m,
        "u": nb * (nd + m + 1),
        "zeta": nb * (v_plus + 1),
        "sigma": nb,
        "variables": nb * (arcs + m + (nd + m + 1) + (v_plus + 1) + 1),
        "constraints": nb * (5 + nd + 3 * m + arcs) + 3 * m,
    }


class _Names:
    def __init__(self, depots, demands, school):
        self.depots = [_label(location_key(d)) for d in depots]
        self.stops = [_label(location_key(d)) for d in demands]
        self.school = _label(location_key(school))

    def arcs(self):
        out = [(i, j) for i in self.depots for j in self.stops]
        out += [(i, j) for i in self.stops for j in self.stops if i != j]
        out += [(i, self.school) for i in self.stops]
        return out


def build_milp(stop_demands, depots, school, travel_model, chance_params, dt_max, fleet=None):
    """LPModel of the lexicographic routing problem; returns (model, W)."""
    demands = sorted(stop_demands, key=lambda d: d.stop.id)
    depots = list(depots)
    m = len(demands)
    if m > MAX_EXPORT_STOPS:
        raise TooLarge(f"{m} stops exceeds the export limit of {MAX_EXPORT_STOPS}")
    if not depots:
        raise ValueError("need at least one depot")
    fleet = list(fleet) if fleet is not None else default_fleet(depots, m)
    names = _Names(depots, demands, school)
    loc = {}
    for d in depots:
        loc[_label(location_key(d))] = d
    for d in demands:
        loc[_label(location_key(d))] = d
    loc[names.school] = school

    def t(i, j):
        return travel_model.t(loc[i], loc[j])

    def dwell(i):
        return travel_model.dwell_at(loc[i]) if i in names.stops else 0.0

    arcs = names.arcs()
    cost = {(i, j): t(i, j) + dwell(i) for i, j in arcs}
    # any plan uses one outgoing arc per stop plus one depot arc per bus
    ub = sum(max(cost[a] for a in arcs if a[0] == j) for j in names.stops)
    if names.stops:
        ub += len(fleet) * max(cost[a] for a in arcs if a[0] in names.depots)
    big_w = 1.0 + math.ceil(ub)

    mu = {names.stops[c]: d.moments.mu for c, d in enumerate(demands)}
    var = {names.stops[c]: d.moments.var for c, d in enumerate(demands)}
    v_plus = chance_params.v_plus
    z = chance_params.z
    n_pos = m + 2

    lp = LPModel()
    lp.comments = [
        "school bus routing MILP (lexicographic objective)",
        f"W = {big_w!r}",
        f"stops = {m}, depots = {len(depots)}, buses = {len(fleet)}, v_plus = {v_plus}",
        f"capacity = {chance_params.capacity}, alpha = {chance_params.alpha!r}, dt_max = {float(dt_max)!r}",
    ]
    depot_ids = {d.id for d in depots}
    if any(dep not in depot_ids for _, dep in fleet):
        raise ValueError("fleet refers to an unknown depot")
    buses = [(f"b{k}", f"d{dep}") for k, dep in fleet]

    def x(i, j, b):
        return f"x_{i}_{j}_{b}"

    for b, _ in buses:
        for i, j in arcs:
            lp.add_var(x(i, j, b), 0, 1, "binary")
    for b, _ in buses:
        for j in names.stops:
            lp.add_var(f"w_{b}_{j}", 0, 1, "binary")
    for b, _ in buses:
        for i in names.depots + names.stops + [names.school]:
            lp.add_var(f"u_{b}_{i}", 1, n_pos)
    for b, _ in buses:
        for v in range(v_plus + 1):
            lp.add_var(f"z_{b}_{v}", 0, 1, "binary")
        lp.add_var(f"sig_{b}", 0, v_plus, "integer")

    obj = {}
    for b, _ in buses:
        for i, j in arcs:
            c = cost[(i, j)] + (big_w if i in names.depots else 0.0)
            obj[x(i, j, b)] = c
    lp.objective = obj

    into = {j: [a for a in arcs if a[1] == j] for j in names.stops}
    out_of = {i: [a for a in arcs if a[0] == i] for i in names.depots + names.stops}
    depot_arcs = [a for a in arcs if a[0] in names.depots]

    for b, home in buses:
        # chance constraint with integer std-dev level
        row = {f"w_{b}_{j}": mu[j] for j in names.stops}
        row[f"sig_{b}"] = z
        lp.add_row(f"chance_mean_{b}", row, "<=", chance_params.capacity + 0.5)
        row = {f"z_{b}_{v}": float(v * v) for v in range(1, v_plus + 1)}
        row.update({f"w_{b}_{j}": -var[j] for j in names.stops})
        lp.add_row(f"chance_var_{b}", row, ">=", 0)
        row = {f"z_{b}_{v}": float(v) for v in range(1, v_plus + 1)}
        row[f"sig_{b}"] = -1.0
        lp.add_row(f"chance_level_{b}", row, "=", 0)
        lp.add_row(f"chance_pick_{b}", {f"z_{b}_{v}": 1.0 for v in range(v_plus + 1)}, "=", 1)
        for j in names.stops:
            row = {x(i, jj, b): 1.0 for i, jj in into[j]}
            row[f"w_{b}_{j}"] = -1.0
            lp.add_row(f"visit_{b}_{j}", row, "=", 0)
        for j in names.stops:
            row = {x(i, jj, b): 1.0 for i, jj in into[j]}
            for ii, k in out_of[j]:
                row[x(ii, k, b)] = row.get(x(ii, k, b), 0.0) - 1.0
            lp.add_row(f"flow_{b}_{j}", row, "=", 0)
        for j in names.stops:
            row = {x(i, jj, b): 1.0 for i, jj in into[j]}
            for i, jj in depot_arcs:
                row[x(i, jj, b)] = row.get(x(i, jj, b), 0.0) - 1.0
            lp.add_row(f"leaves_depot_{b}_{j}", row, "<=", 0)
        for dep in names.depots:
            row = {x(i, j, b): 1.0 for i, j in out_of[dep]}
            lp.add_row(f"start_{b}_{dep}", row, "<=", 1.0 if dep == home else 0.0)
        row = {x(i, j, b): cost[(i, j)] for i, j in arcs if i not in names.depots}
        lp.add_row(f"ride_time_{b}", row, "<=", float(dt_max))
        for i, j in arcs:
            lp.add_row(f"mtz_{b}_{i}_{j}",
                       {f"u_{b}_{i}": 1.0, f"u_{b}_{j}": -1.0, x(i, j, b): float(n_pos)}, "<=", n_pos - 1)
    for j in names.stops:
        lp.add_row(f"assign_{j}", {f"w_{b}_{j}": 1.0 for b, _ in buses}, "=", 1)
    for j in names.stops:
        lp.add_row(f"arrive_once_{j}", {x(i, jj, b): 1.0 for b, _ in buses for i, jj in into[j]}, "<=", 1)
    for i in names.stops:
        lp.add_row(f"leave_once_{i}", {x(ii, j, b): 1.0 for b, _ in buses for ii, j in out_of[i]}, "<=", 1)
    return lp, big_w


def export_milp(stop_demands, depots, school, travel_model, chance_params, dt_max, path=None,
                fleet=None, provenance=None):
    """LP-format text of the routing MILP; also written to ``path`` if given."""
    lp, _ = build_milp(stop_demands, depots, school, travel_model, chance_params, dt_max, fleet)
    for k in sorted(provenance or {}):
        lp.comments.append(f"{k} = {provenance[k]}")
    text = lp.to_text()
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def plan_values(plan, stop_demands, depots, school, chance_params, fleet=None):
    """Variable assignment that encodes ``plan`` in the exported model.

    Each route must run on a fleet bus of the same depot; routes are matched
    to buses by bus id.
    """
    demands = sorted(stop_demands, key=lambda d: d.stop.id)
    fleet = list(fleet) if fleet is not None else default_fleet(depots, len(demands))
    by_bus = dict(fleet)
    school_l = _label(location_key(school))
    vals = {}
    used = set()
    for r in plan.routes:
        if by_bus.get(r.bus) != r.depot.id:
            raise ValueError(f"route bus {r.bus} is not a fleet bus of depot {r.depot.id}")
        b = f"b{r.bus}"
        used.add(r.bus)
        path = [_label(location_key(r.depot))] + [_label(location_key(s)) for s in r.stops] + [school_l]
        for pos, (i, j) in enumerate(zip(path, path[1:])):
            vals[f"x_{i}_{j}_{b}"] = 1.0
        for pos, i in enumerate(path, 1):
            vals[f"u_{b}_{i}"] = float(pos)
        for s in r.stops:
            vals[f"w_{b}_{_label(location_key(s))}"] = 1.0
        level = sigma_tilde(r.load.var, chance_params.v_plus)
        vals[f"z_{b}_{level}"] = 1.0
        vals[f"sig_{b}"] = float(level)
    # idle buses and unvisited positions sit at level 0 / position 1
    locs = ([_label(location_key(d)) for d in depots] + [_label(location_key(d)) for d in demands]
            + [school_l])
    for k, _ in fleet:
        b = f"b{k}"
        if k not in used:
            vals[f"z_{b}_0"] = 1.0
        for i in locs:
            vals.setdefault(f"u_{b}_{i}", 1.0)
    return vals
