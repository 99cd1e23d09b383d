"""Brute-force reference solvers shared by the unit and acceptance tests.

They work from raw coordinates and riderships and share no code with the
package beyond its plain data classes.
"""
import itertools
import math

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog
from scipy.stats import norm

from sbrp.instance import CandidateSets, Site, Stop
from sbrp.overbooking import ChanceParams
from sbrp.routing import StopDemand


def lp_slope(distances, rbar, g_kind="identity"):
    """Largest rho1 with rho0 + rho1*g_i in [0, 1] and mean exactly rbar."""
    d = np.asarray(distances, dtype=float)
    g = d if g_kind == "identity" else np.log1p(d)
    n = g.size
    a_ub = np.vstack([np.column_stack([np.ones(n), g]), -np.column_stack([np.ones(n), g])])
    b_ub = np.concatenate([np.ones(n), np.zeros(n)])
    res = linprog(c=[0.0, -1.0], A_ub=a_ub, b_ub=b_ub, A_eq=[[1.0, g.mean()]], b_eq=[rbar],
                  bounds=[(None, None), (0, None)], method="highs")
    assert res.status == 0
    return res.x[1]


BIG = 1e9


def random_problem(seed, n_students=None, n_stops=None):
    """Candidate sets and walk table for a random small instance."""
    rng = np.random.default_rng(seed)
    n = n_students or int(rng.integers(1, 9))
    m = n_stops or int(rng.integers(1, 7))
    p = int(rng.integers(1, 5))
    studs = rng.uniform(0, 1, size=(n, 2))
    stops = rng.uniform(0, 1, size=(m, 2))
    limit = float(rng.uniform(0.3, 0.8))
    d = np.hypot(studs[:, None, 0] - stops[None, :, 0], studs[:, None, 1] - stops[None, :, 1])
    reach = d <= limit
    for i in range(n):  # every student reaches at least its nearest stop
        reach[i, np.argmin(d[i])] = True
    stops_of = {i: frozenset(int(j) for j in np.flatnonzero(reach[i])) for i in range(n)}
    students_of = {j: frozenset(i for i in range(n) if reach[i, j]) for j in range(m)}
    walk = {i: {j: float(d[i, j]) for j in stops_of[i]} for i in range(n)}
    return CandidateSets(stops_of, students_of), walk, p


def allocation_oracle(cands, walk, p):
    """(open_count, total_walk) by enumerating stop subsets in increasing size."""
    students = sorted(cands.stops_of_student)
    stops = sorted({j for s in cands.stops_of_student.values() for j in s})
    for k in range(1, len(stops) + 1):
        best = math.inf
        for subset in itertools.combinations(stops, k):
            slots = [j for j in subset for _ in range(p)]
            if len(slots) < len(students):
                continue
            cost = np.full((len(students), len(slots)), BIG)
            for r, i in enumerate(students):
                for c, j in enumerate(slots):
                    if j in walk[i]:
                        cost[r, c] = walk[i][j]
            rows, cols = linear_sum_assignment(cost)
            total = cost[rows, cols].sum()
            if total < BIG and total < best:
                best = total
        if best < math.inf:
            return k, best
    return None


SPEED = 20.0


def partitions(items):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in partitions(rest):
        for k in range(len(part)):
            yield part[:k] + [[first] + part[k]] + part[k + 1:]
        yield [[first]] + part


def random_case(seed, max_stops=6):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, max_stops + 1))
    school = Site("school", 0, 1.5, 1.5)
    n_dep = int(rng.integers(1, 3))
    depots = [Site("depot", 0, 1.5, 1.5)] + [Site("depot", k, *rng.uniform(0, 3, 2)) for k in range(1, n_dep)]
    demands = []
    sid = 0
    for j in range(m):
        k = int(rng.integers(1, 9))
        studs = tuple((sid + t, float(rng.uniform(0.2, 1.0))) for t in range(k))
        sid += k
        x, y = rng.uniform(0, 3, 2)
        demands.append(StopDemand(Stop(10 + j, float(x), float(y)), studs))
    chance = ChanceParams(int(rng.integers(6, 21)), 0.05)
    dt_max = float(rng.uniform(12, 40))
    return demands, depots, school, chance, dt_max


def leg(a, b):
    return math.hypot(a[0] - b[0], a[1] - b[1]) / SPEED * 60.0


def routing_oracle(demands, depots, school, chance, dt_max):
    """Lexicographic optimum (bus count, total time) by full enumeration."""
    z = norm.ppf(1 - chance.alpha)
    xy = {d.stop.id: (d.stop.x, d.stop.y) for d in demands}
    dwell = {d.stop.id: 0.5 + 0.1 * sum(r for _, r in d.students) for d in demands}
    mu = {d.stop.id: sum(r for _, r in d.students) for d in demands}
    var = {d.stop.id: sum(r * (1 - r) for _, r in d.students) for d in demands}
    sch = (school.x, school.y)
    best_route = {}

    def route_cost(block):
        key = frozenset(block)
        if key in best_route:
            return best_route[key]
        best = math.inf
        m_ = sum(mu[s] for s in block)
        v_ = sum(var[s] for s in block)
        if m_ + z * math.sqrt(v_) <= chance.capacity + 0.5:
            for dp in depots:
                for order in itertools.permutations(block):
                    ride = sum(leg(xy[a], xy[b]) for a, b in zip(order, order[1:]))
                    ride += sum(dwell[s] for s in order) + leg(xy[order[-1]], sch)
                    if ride <= dt_max + 1e-9:
                        best = min(best, ride + leg((dp.x, dp.y), xy[order[0]]))
        best_route[key] = best
        return best

    best = (math.inf, math.inf)
    for part in partitions([d.stop.id for d in demands]):
        costs = [route_cost(b) for b in part]
        if all(c < math.inf for c in costs):
            best = min(best, (len(part), sum(costs)))
    return best


def independent_route_check(route, school, chance, dt_max):
    """Re-derive a route's load and ride time from raw student lists."""
    rhos = [r for d in route.stops for _, r in d.students]
    m_, v_ = sum(rhos), sum(r * (1 - r) for r in rhos)
    pts = [(d.stop.x, d.stop.y) for d in route.stops] + [(school.x, school.y)]
    ride = sum(leg(a, b) for a, b in zip(pts, pts[1:])) + sum(0.5 + 0.1 * sum(r for _, r in d.students)
                                                             for d in route.stops)
    return m_ + norm.ppf(1 - chance.alpha) * math.sqrt(v_) <= chance.capacity + 0.5 and ride <= dt_max + 1e-9
