import itertools
import math

import numpy as np
import pytest
from scipy.optimize import Bounds, LinearConstraint, milp
from scipy.sparse import lil_matrix
from scipy.stats import norm

from sbrp.errors import TooLarge
from sbrp.instance import Site, Stop
from sbrp.lpformat import parse_lp
from sbrp.overbooking import ChanceParams, integer_feasible
from sbrp.routing import RoutePlan, StopDemand, build_travel_model, make_route, solve_routing
from sbrp.routing.milp import build_milp, count_formulas, export_milp, plan_values

DEPOT = Site("depot", 0, 1.5, 1.5)
SCHOOL = Site("school", 0, 1.5, 1.5)


def line_case(m=4):
    dem = [StopDemand(Stop(j, 1.5 + 0.3 * j, 1.0), ((10 * j + 1, 0.5), (10 * j + 2, 0.3))) for j in range(m)]
    return dem, build_travel_model([DEPOT], dem, SCHOOL)


def prefix_counts(lp):
    out = {}
    for v in lp.variables:
        k = v.split("_")[0]
        out[k] = out.get(k, 0) + 1
    return out


@pytest.mark.parametrize("nd,m,q", [(1, 1, 48), (1, 4, 48), (2, 3, 10), (3, 5, 20)])
def test_sizes_match_closed_form(nd, m, q):
    rng = np.random.default_rng(m)
    depots = [Site("depot", k, *map(float, rng.uniform(0, 3, 2))) for k in range(nd)]
    dem = [StopDemand(Stop(j, *map(float, rng.uniform(0, 3, 2))), ((j, 0.4),)) for j in range(m)]
    tm = build_travel_model(depots, dem, SCHOOL)
    cp = ChanceParams(q)
    lp, _ = build_milp(dem, depots, SCHOOL, tm, cp, 40)
    want = count_formulas(nd, m, nd * m, cp.v_plus)
    got = prefix_counts(lp)
    assert len(lp.rows) == want["constraints"]
    assert len(lp.variables) == want["variables"]
    assert (got["x"], got["w"], got["u"], got["z"], got["sig"]) == \
        (want["x"], want["w"], want["u"], want["zeta"], want["sigma"])


def test_one_stop_one_bus_has_two_priced_arcs():
    dem, tm = line_case(1)
    lp, big_w = build_milp(dem, [DEPOT], SCHOOL, tm, ChanceParams(), 40, fleet=[(0, 0)])
    xs = [v for v in lp.variables if v.startswith("x_")]
    assert sorted(xs) == ["x_d0_p0_b0", "x_p0_s0_b0"]
    assert all(lp.objective[v] != 0 for v in xs)
    assert lp.objective["x_d0_p0_b0"] == pytest.approx(big_w + tm.t(DEPOT, dem[0]))


def hand_plan(dem, tm):
    r0 = make_route(0, DEPOT, dem[:2], SCHOOL, tm)
    r1 = make_route(1, DEPOT, dem[2:][::-1], SCHOOL, tm)
    return RoutePlan((r0, r1), 2, r0.duration + r1.duration)


def test_hand_plan_satisfies_every_row():
    dem, tm = line_case()
    cp = ChanceParams()
    lp, big_w = build_milp(dem, [DEPOT], SCHOOL, tm, cp, 40)
    plan = hand_plan(dem, tm)
    vals = plan_values(plan, dem, [DEPOT], SCHOOL, cp)
    assert lp.violations(vals) == []
    # objective from coordinates: two depot departures plus every leg and dwell
    legs = 0.0
    for r in plan.routes:
        pts = [(DEPOT.x, DEPOT.y)] + [(d.stop.x, d.stop.y) for d in r.stops] + [(SCHOOL.x, SCHOOL.y)]
        legs += sum(math.dist(a, b) / 20 * 60 for a, b in zip(pts, pts[1:]))
        legs += sum(0.5 + 0.1 * sum(rho for _, rho in d.students) for d in r.stops)
    assert lp.objective_value(vals) == pytest.approx(2 * big_w + legs)


def test_overloaded_plan_breaks_chance_rows():
    dem, tm = line_case()
    cp = ChanceParams(2, 0.05)
    lp, _ = build_milp(dem, [DEPOT], SCHOOL, tm, cp, 40)
    r = make_route(0, DEPOT, dem, SCHOOL, tm)
    bad = plan_values(RoutePlan((r,), 1, r.duration), dem, [DEPOT], SCHOOL, cp)
    assert "chance_mean_b0" in lp.violations(bad)


def test_long_route_breaks_ride_time_row():
    dem, tm = line_case()
    cp = ChanceParams()
    r = make_route(0, DEPOT, dem, SCHOOL, tm)
    lp, _ = build_milp(dem, [DEPOT], SCHOOL, tm, cp, r.ride_time - 0.1)
    vals = plan_values(RoutePlan((r,), 1, r.duration), dem, [DEPOT], SCHOOL, cp)
    assert lp.violations(vals) == ["ride_time_b0"]


def test_missing_stop_and_subtour_are_rejected():
    dem, tm = line_case()
    cp = ChanceParams()
    lp, _ = build_milp(dem, [DEPOT], SCHOOL, tm, cp, 40)
    r0 = make_route(0, DEPOT, dem[:3], SCHOOL, tm)
    vals = plan_values(RoutePlan((r0,), 1, r0.duration), dem[:3], [DEPOT], SCHOOL, cp)
    assert "assign_p3" in lp.violations(vals)
    # stop p3 served by a detached cycle on bus 1
    cyc = dict(vals)
    cyc.update({"x_p3_p2_b1": 1.0, "x_p2_p3_b1": 1.0, "w_b1_p3": 1.0, "w_b1_p2": 1.0, "z_b1_1": 1.0,
                "sig_b1": 1.0})
    bad = lp.violations(cyc)
    assert any(b.startswith("mtz_b1") for b in bad)
    assert any(b.startswith("leaves_depot_b1") for b in bad)


def test_plan_on_wrong_depot_is_refused():
    dem, _ = line_case(2)
    other = Site("depot", 1, 0.0, 0.0)
    tm = build_travel_model([DEPOT, other], dem, SCHOOL)
    r = make_route(0, other, dem, SCHOOL, tm)
    with pytest.raises(ValueError):
        plan_values(RoutePlan((r,), 1, r.duration), dem, [DEPOT, other], SCHOOL, ChanceParams())


def test_text_is_deterministic_and_round_trips():
    dem, tm = line_case()
    prov = {"config_hash": "abc", "seed": 3}
    a = export_milp(dem, [DEPOT], SCHOOL, tm, ChanceParams(), 40, provenance=prov)
    b = export_milp(list(reversed(dem)), [DEPOT], SCHOOL, tm, ChanceParams(), 40, provenance=prov)
    assert a == b
    assert parse_lp(a).to_text() == a
    assert "\\ config_hash = abc" in a.splitlines()


def test_export_writes_file(tmp_path):
    dem, tm = line_case(2)
    path = tmp_path / "m.lp"
    text = export_milp(dem, [DEPOT], SCHOOL, tm, ChanceParams(), 40, path=path)
    assert path.read_text() == text


def test_too_large():
    dem = [StopDemand(Stop(j, 0.1 * j, 0.0), ((j, 0.5),)) for j in range(31)]
    tm = build_travel_model([DEPOT], dem, SCHOOL)
    with pytest.raises(TooLarge):
        build_milp(dem, [DEPOT], SCHOOL, tm, ChanceParams(), 40)


def solve_lp(lp):
    """Optimal objective of an LPModel via scipy's HiGHS MILP interface."""
    col = {v: k for k, v in enumerate(lp.variables)}
    n = len(col)
    c = np.zeros(n)
    for v, w in lp.objective.items():
        c[col[v]] = w
    a = lil_matrix((len(lp.rows), n))
    lo = np.full(len(lp.rows), -np.inf)
    hi = np.full(len(lp.rows), np.inf)
    for r, row in enumerate(lp.rows):
        for v, w in row.coeffs.items():
            a[r, col[v]] = w
        if row.sense in ("<=", "="):
            hi[r] = row.rhs
        if row.sense in (">=", "="):
            lo[r] = row.rhs
    integ = np.array([v in lp.binary or v in lp.general for v in lp.variables], dtype=int)
    bnd = Bounds([lp.bounds[v][0] for v in lp.variables], [lp.bounds[v][1] for v in lp.variables])
    res = milp(c, constraints=LinearConstraint(a.tocsr(), lo, hi), integrality=integ, bounds=bnd)
    return res


def enum_integer_form(dem, depots, cp, dt_max):
    """(buses, time) optimum when each bus must pass the integer-sigma load test."""
    z = norm.ppf(1 - cp.alpha)
    xy = {d.stop.id: (d.stop.x, d.stop.y) for d in dem}
    dwell = {d.stop.id: 0.5 + 0.1 * sum(r for _, r in d.students) for d in dem}
    leg = lambda a, b: math.dist(a, b) / 20 * 60  # noqa: E731
    sch = (SCHOOL.x, SCHOOL.y)

    def cost(block):
        rho = [r for d in dem if d.stop.id in block for _, r in d.students]
        sig = math.ceil(math.sqrt(sum(r * (1 - r) for r in rho)) - 1e-12)
        if sum(rho) + z * sig > cp.capacity + 0.5:
            return math.inf
        best = math.inf
        for order in itertools.permutations(block):
            ride = sum(leg(xy[a], xy[b]) for a, b in zip(order, order[1:])) + leg(xy[order[-1]], sch)
            ride += sum(dwell[s] for s in order)
            if ride <= dt_max:
                best = min(best, ride + min(leg((dp.x, dp.y), xy[order[0]]) for dp in depots))
        return best

    ids = [d.stop.id for d in dem]
    best = (math.inf, math.inf)
    for labels in itertools.product(range(len(ids)), repeat=len(ids)):
        blocks = {}
        for s, lab in zip(ids, labels):
            blocks.setdefault(lab, []).append(s)
        cs = [cost(tuple(b)) for b in blocks.values()]
        if all(x < math.inf for x in cs):
            best = min(best, (len(blocks), sum(cs)))
    return best


@pytest.mark.parametrize("seed", range(6))
def test_model_optimum_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 4))
    depots = [Site("depot", k, *map(float, rng.uniform(0, 3, 2))) for k in range(int(rng.integers(1, 3)))]
    dem = [StopDemand(Stop(j, *map(float, rng.uniform(0, 3, 2))),
                      tuple((10 * j + t, float(rng.uniform(0.2, 1))) for t in range(int(rng.integers(2, 7)))))
           for j in range(m)]
    cp = ChanceParams(int(rng.integers(4, 12)))
    dt_max = float(rng.uniform(10, 25))
    tm = build_travel_model(depots, dem, SCHOOL)
    lp, big_w = build_milp(dem, depots, SCHOOL, tm, cp, dt_max)
    want = enum_integer_form(dem, depots, cp, dt_max)
    res = solve_lp(parse_lp(lp.to_text()))
    if want[0] == math.inf:
        assert res.status == 2  # infeasible
        return
    assert res.status == 0
    buses = math.floor(res.fun / big_w + 1e-9)
    assert buses == want[0]
    assert res.fun - buses * big_w == pytest.approx(want[1], abs=1e-5)


@pytest.mark.parametrize("seed", range(8))
def test_exact_plans_satisfy_model_when_integer_form_holds(seed):
    rng = np.random.default_rng(40 + seed)
    m = int(rng.integers(2, 6))
    dem = [StopDemand(Stop(j, *map(float, rng.uniform(0, 3, 2))),
                      tuple((10 * j + t, float(rng.uniform(0.1, 0.9))) for t in range(int(rng.integers(2, 8)))))
           for j in range(m)]
    cp = ChanceParams(int(rng.integers(8, 30)))
    tm = build_travel_model([DEPOT], dem, SCHOOL)
    plan = solve_routing(dem, [DEPOT], SCHOOL, tm, cp, 40.0, mode="exact")
    lp, big_w = build_milp(dem, [DEPOT], SCHOOL, tm, cp, 40.0)
    vals = plan_values(plan, dem, [DEPOT], SCHOOL, cp)
    bad = lp.violations(vals)
    if all(integer_feasible(r.load, cp) for r in plan.routes):
        assert bad == []
        assert lp.objective_value(vals) == pytest.approx(plan.bus_count * big_w + plan.total_time)
    else:
        assert bad and all(b.startswith("chance_mean") for b in bad)
