"""Lexicographic (buses, then total time) route planning.

Route columns come from several constructions (nearest neighbour, cheapest
insertion, angular sweep, savings merges).  A branch-and-bound over the
column pool picks a minimum-cardinality, then minimum-time, set partition,
and relocate/swap/2-opt moves polish the result without ever adding a bus.
With few stops the pool is every feasible subset in its best order, which
makes the same branch-and-bound exact.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..errors import StopUnroutable
from ..overbooking import normal_feasible
from .core import EMPTY_PLAN, RIDE_TOL, RoutePlan, default_fleet, location_key, make_route

log = logging.getLogger(__name__)

_EPS = 1e-9


@dataclass(frozen=True)
class RoutingOptions:
    exact_max_stops: int = 6
    node_limit: int = 50_000
    max_moves: int = 2_000
    insertion_starts: int = 8
    drop_variants: bool = True


class _Net:
    """Index view: stops 0..m-1 (by stop id), depots m..m+nd-1, school last."""

    def __init__(self, demands, depots, school, travel_model, chance, dt_max, fleet):
        self.demands = sorted(demands, key=lambda d: d.stop.id)
        self.depots = list(depots)
        self.school_site = school
        self.m = m = len(self.demands)
        nd = len(self.depots)
        keys = ([location_key(d) for d in self.demands] + [location_key(dp) for dp in self.depots]
                + [location_key(school)])
        rows = [travel_model.index[k] for k in keys]
        self.T = np.ascontiguousarray(travel_model.travel[np.ix_(rows, rows)])
        self.dwell = np.asarray(travel_model.dwell[rows], dtype=np.float64).copy()
        self.dwell[m:] = 0.0
        self.school = m + nd
        mom = [d.moments for d in self.demands]
        self.mu = np.array([x.mu for x in mom])
        self.var = np.array([x.var for x in mom])
        self.z = chance.z
        self.cap = chance.capacity + 0.5
        self.chance = chance
        self.dt = float(dt_max)
        depot_node = {dp.id: m + k for k, dp in enumerate(self.depots)}
        if fleet is None:
            fleet = default_fleet(self.depots, m)
        self.fleet = [(int(b), depot_node[d]) for b, d in fleet]
        self.limit = {}
        for _, node in self.fleet:
            self.limit[node] = self.limit.get(node, 0) + 1
        self.dep_nodes = sorted(self.limit)
        self._dur_cache = {}

    # -- evaluation ---------------------------------------------------------
    def duration(self, dep, stops):
        key = (dep, stops)
        hit = self._dur_cache.get(key)
        if hit is not None:
            return hit
        seq = np.array((dep,) + tuple(stops) + (self.school,), dtype=np.int64)
        total = kernels.path_cost(seq, self.T)
        for s in stops:
            total += self.dwell[s]
        if len(self._dur_cache) < 500_000:
            self._dur_cache[key] = total
        return total

    def load_ok(self, mu, var):
        return mu + self.z * math.sqrt(max(var, 0.0)) <= self.cap

    def ride_ok(self, dep, stops, dur):
        return dur - self.T[dep, stops[0]] <= self.dt + RIDE_TOL

    def set_load(self, stops):
        mu = 0.0
        var = 0.0
        for s in stops:
            mu += self.mu[s]
            var += self.var[s]
        return mu, var

    def feasible(self, dep, stops):
        if not stops:
            return False
        mu, var = self.set_load(stops)
        return self.load_ok(mu, var) and self.ride_ok(dep, stops, self.duration(dep, stops))

    def best_insertion(self, dep, stops, dur, mu, var, v):
        """Cheapest feasible position for stop v: (new_dur, pos) or None."""
        if not self.load_ok(mu + self.mu[v], var + self.var[v]):
            return None
        seq = np.array((dep,) + tuple(stops) + (self.school,), dtype=np.int64)
        new_dur = dur + kernels.insertion_deltas(seq, v, self.T) + self.dwell[v]
        first = self.T[dep, stops[0]] if stops else 0.0
        deadhead = np.full(new_dur.size, first)
        deadhead[0] = self.T[dep, v]
        ok = new_dur - deadhead <= self.dt + RIDE_TOL
        if not ok.any():
            return None
        cand = np.where(ok, new_dur, np.inf)
        pos = int(np.argmin(cand))
        return float(cand[pos]), pos

    def polish(self, dep, stops):
        """2-opt and single-stop moves inside one route; keeps feasibility."""
        stops = tuple(stops)
        dur = self.duration(dep, stops)
        if len(stops) < 2:
            return stops, dur
        improved = True
        while improved:
            improved = False
            seq = np.array((dep,) + stops + (self.school,), dtype=np.int64)
            delta, i, j = kernels.best_two_opt(seq, self.T)
            if delta < -_EPS:
                cand = stops[: i - 1] + stops[i - 1: j][::-1] + stops[j:]
                cdur = self.duration(dep, cand)
                if cdur < dur - _EPS and self.ride_ok(dep, cand, cdur):
                    stops, dur = cand, cdur
                    improved = True
                    continue
            for k in range(len(stops)):
                rest = stops[:k] + stops[k + 1:]
                rdur = self.duration(dep, rest)
                mu, var = self.set_load(rest)
                ins = self.best_insertion(dep, rest, rdur, mu, var, stops[k])
                if ins is not None and ins[0] < dur - _EPS:
                    stops = rest[: ins[1]] + (stops[k],) + rest[ins[1]:]
                    dur = self.duration(dep, stops)
                    improved = True
                    break
        return stops, dur


# --------------------------------------------------------------------------
# column construction
# --------------------------------------------------------------------------

def _nearest_neighbour(net, dep, start):
    unrouted = np.ones(net.m, dtype=bool)
    routes = []
    cur = start
    while unrouted.any():
        if cur is None:
            far = np.where(unrouted, net.T[:net.m, net.school], -np.inf)
            cur = int(np.argmax(far))
        stops = [cur]
        unrouted[cur] = False
        mu, var = net.mu[cur], net.var[cur]
        ride = net.dwell[cur] + net.T[cur, net.school]
        while True:
            last = stops[-1]
            new_ride = ride - net.T[last, net.school] + net.T[last, :net.m] + net.dwell[:net.m] + net.T[:net.m, net.school]
            new_mu = mu + net.mu
            new_sd = np.sqrt(var + net.var)
            ok = unrouted & (new_ride <= net.dt + RIDE_TOL) & (new_mu + net.z * new_sd <= net.cap)
            if not ok.any():
                break
            nxt = int(np.argmin(np.where(ok, net.T[last, :net.m], np.inf)))
            ride = new_ride[nxt]
            mu += net.mu[nxt]
            var += net.var[nxt]
            stops.append(nxt)
            unrouted[nxt] = False
        routes.append((dep, tuple(stops)))
        cur = None
    return routes


def _insertion_build(net, dep, order):
    """Routes filled from ``order``: each next stop goes to its cheapest position
    in the open route; a new route opens when it fits nowhere."""
    routes = []
    stops, dur, mu, var = (), 0.0, 0.0, 0.0
    for v in order:
        ins = net.best_insertion(dep, stops, dur, mu, var, v) if stops else None
        if ins is None:
            if stops:
                routes.append((dep, stops))
            stops = (v,)
            dur = net.duration(dep, stops)
            mu, var = net.mu[v], net.var[v]
        else:
            stops = stops[: ins[1]] + (v,) + stops[ins[1]:]
            dur = ins[0]
            mu += net.mu[v]
            var += net.var[v]
    if stops:
        routes.append((dep, stops))
    return routes


def _cheapest_insertion(net, dep, seed):
    unrouted = np.ones(net.m, dtype=bool)
    routes = []
    cur = seed
    idx = np.arange(net.m)
    while unrouted.any():
        if cur is None:
            far = np.where(unrouted, net.T[:net.m, net.school], -np.inf)
            cur = int(np.argmax(far))
        stops = (cur,)
        unrouted[cur] = False
        dur = net.duration(dep, stops)
        mu, var = net.mu[cur], net.var[cur]
        while unrouted.any():
            best = None
            for v in idx[unrouted]:
                ins = net.best_insertion(dep, stops, dur, mu, var, int(v))
                if ins is not None and (best is None or ins[0] - dur < best[0] - _EPS):
                    best = (ins[0] - dur, int(v), ins)
            if best is None:
                break
            _, v, (ndur, pos) = best
            stops = stops[:pos] + (v,) + stops[pos:]
            dur = ndur
            mu += net.mu[v]
            var += net.var[v]
            unrouted[v] = False
        routes.append((dep, stops))
        cur = None
    return routes


def _sweeps(net, dep):
    sx, sy = net.school_site.x, net.school_site.y
    ang = np.array([math.atan2(d.stop.y - sy, d.stop.x - sx) for d in net.demands])
    base = [int(k) for k in np.lexsort((np.arange(net.m), ang))]
    sols = []
    for off in range(net.m):
        rot = base[off:] + base[:off]
        sols.append(_insertion_build(net, dep, rot))
        sols.append(_insertion_build(net, dep, rot[::-1]))
    return sols


def _savings(net, dep):
    """Clarke-Wright merges; returns the final routes and every merged route."""
    routes = {s: (s,) for s in range(net.m)}
    owner = list(range(net.m))
    pairs = []
    for i in range(net.m):
        for j in range(net.m):
            if i != j:
                sav = net.T[i, net.school] + net.T[dep, j] - net.T[i, j]
                pairs.append((-sav, i, j))
    pairs.sort()
    seen = []
    for neg, i, j in pairs:
        if neg > 0:
            break
        ri, rj = owner[i], owner[j]
        if ri == rj:
            continue
        a, b = routes[ri], routes[rj]
        if a[-1] != i or b[0] != j:
            continue
        merged = a + b
        if not net.feasible(dep, merged):
            continue
        del routes[rj]
        routes[ri] = merged
        for s in b:
            owner[s] = ri
        seen.append((dep, merged))
    return [(dep, r) for _, r in sorted(routes.items())], seen


class _Pool:
    def __init__(self, net):
        self.net = net
        self.cols = {}

    def add(self, dep, stops, polish=True):
        net = self.net
        if polish:
            stops, dur = net.polish(dep, stops)
        else:
            dur = net.duration(dep, tuple(stops))
        stops = tuple(stops)
        if not net.feasible(dep, stops):
            return None
        key = (dep, frozenset(stops))
        old = self.cols.get(key)
        if old is None or dur < old[0] - _EPS:
            self.cols[key] = (dur, stops)
        return self.cols[key]

    def add_solution(self, routes):
        out = []
        for dep, stops in routes:
            col = self.add(dep, stops)
            if col is None:
                return None
            out.append((dep, col[1], col[0]))
        return out

    def columns(self):
        out = []
        for (dep, members), (dur, stops) in sorted(self.cols.items(), key=lambda kv: (kv[0][0], sorted(kv[0][1]))):
            mask = 0
            for s in members:
                mask |= 1 << s
            out.append((mask, dur, dep, stops))
        return out


# --------------------------------------------------------------------------
# set partition
# --------------------------------------------------------------------------

def _better(a_count, a_cost, b_count, b_cost):
    return a_count < b_count or (a_count == b_count and a_cost < b_cost - _EPS)


def _set_partition(net, columns, incumbent=None, node_limit=None):
    """Lexicographic (count, cost) set partition; returns (count, cost, [col idx])."""
    m = net.m
    full = (1 << m) - 1
    best = list(incumbent) if incumbent else [math.inf, math.inf, None]
    by_stop = [[] for _ in range(m)]
    share = np.full(m, np.inf)
    col_mu = []
    col_share = []
    max_size = 1
    for ci, (mask, cost, dep, stops) in enumerate(columns):
        size = len(stops)
        max_size = max(max_size, size)
        for s in stops:
            by_stop[s].append(ci)
            share[s] = min(share[s], cost / size)
        col_mu.append(sum(net.mu[s] for s in stops))
    for s in range(m):
        if not by_stop[s]:
            return best if best[2] is not None else None
        by_stop[s].sort(key=lambda ci: (-len(columns[ci][3]), columns[ci][1], ci))
    for mask, cost, dep, stops in columns:
        col_share.append(sum(share[s] for s in stops))
    usage = {d: 0 for d in net.limit}
    nodes = [0]
    exhausted = [False]

    def dfs(covered, count, cost, rem_mu, rem_share, rem_n, chosen):
        if covered == full:
            if _better(count, cost, best[0], best[1]):
                best[0], best[1], best[2] = count, cost, list(chosen)
            return
        nodes[0] += 1
        if node_limit is not None and nodes[0] > node_limit:
            exhausted[0] = True
            return
        need = max(math.ceil(rem_mu / net.cap - 1e-9), math.ceil(rem_n / max_size), 1)
        lb_count = count + need
        lb_cost = cost + rem_share
        if lb_count > best[0] or (lb_count == best[0] and lb_cost >= best[1] - _EPS):
            return
        rem = full & ~covered
        s = (rem & -rem).bit_length() - 1
        for ci in by_stop[s]:
            mask, ccost, dep, stops = columns[ci]
            if mask & covered or usage[dep] >= net.limit[dep]:
                continue
            usage[dep] += 1
            chosen.append(ci)
            dfs(covered | mask, count + 1, cost + ccost, rem_mu - col_mu[ci], rem_share - col_share[ci],
                rem_n - len(stops), chosen)
            chosen.pop()
            usage[dep] -= 1
            if exhausted[0]:
                return

    dfs(0, 0, 0.0, float(net.mu.sum()), float(share.sum()), m, [])
    if exhausted[0]:
        log.debug("set partition stopped at node limit %d", node_limit)
    return best if best[2] is not None else None


# --------------------------------------------------------------------------
# local search
# --------------------------------------------------------------------------

class _Plan:
    def __init__(self, net, routes):
        self.net = net
        self.r = [[dep, tuple(stops), net.duration(dep, tuple(stops))] for dep, stops in routes]

    def key(self):
        return len(self.r), sum(x[2] for x in self.r)

    def routes(self):
        return [(dep, stops) for dep, stops, _ in self.r]


def _try_dissolve(net, plan, k):
    """Reinsert every stop of route k elsewhere; True when it succeeded."""
    dep_k, stops_k, _ = plan.r[k]
    others = [list(x) for i, x in enumerate(plan.r) if i != k]
    loads = [net.set_load(x[1]) for x in others]
    for v in sorted(stops_k, key=lambda s: (-net.mu[s], s)):
        best = None
        for q, (dep, stops, dur) in enumerate(others):
            ins = net.best_insertion(dep, stops, dur, loads[q][0], loads[q][1], v)
            if ins is not None and (best is None or ins[0] - dur < best[0] - _EPS):
                best = (ins[0] - dur, q, ins)
        if best is None:
            return False
        _, q, (ndur, pos) = best
        dep, stops, _ = others[q]
        others[q] = [dep, stops[:pos] + (v,) + stops[pos:], ndur]
        loads[q] = (loads[q][0] + net.mu[v], loads[q][1] + net.var[v])
    plan.r = [[dep, *net.polish(dep, stops)] for dep, stops, _ in others]
    return True


def _try_relocate(net, plan):
    for k, (dep, stops, dur) in enumerate(plan.r):
        for pos, v in enumerate(stops):
            rest = stops[:pos] + stops[pos + 1:]
            rdur = net.duration(dep, rest) if rest else 0.0
            if rest and not net.ride_ok(dep, rest, rdur):
                continue
            for q, (dep2, stops2, dur2) in enumerate(plan.r):
                if q == k:
                    continue
                mu2, var2 = net.set_load(stops2)
                ins = net.best_insertion(dep2, stops2, dur2, mu2, var2, v)
                if ins is None:
                    continue
                gain = (dur + dur2) - (rdur + ins[0])
                if not rest or gain > _EPS:
                    plan.r[q] = [dep2, stops2[: ins[1]] + (v,) + stops2[ins[1]:], ins[0]]
                    if rest:
                        plan.r[k] = [dep, rest, rdur]
                    else:
                        del plan.r[k]
                    return True
    return False


def _try_swap(net, plan):
    n = len(plan.r)
    for k in range(n):
        dep, stops, dur = plan.r[k]
        for q in range(k + 1, n):
            dep2, stops2, dur2 = plan.r[q]
            for a, v in enumerate(stops):
                rest = stops[:a] + stops[a + 1:]
                for b, w in enumerate(stops2):
                    rest2 = stops2[:b] + stops2[b + 1:]
                    mu1, var1 = net.set_load(rest)
                    mu2, var2 = net.set_load(rest2)
                    if not (net.load_ok(mu1 + net.mu[w], var1 + net.var[w])
                            and net.load_ok(mu2 + net.mu[v], var2 + net.var[v])):
                        continue
                    d1 = net.duration(dep, rest) if rest else 0.0
                    d2 = net.duration(dep2, rest2) if rest2 else 0.0
                    ins1 = net.best_insertion(dep, rest, d1, mu1, var1, w)
                    if ins1 is None:
                        continue
                    ins2 = net.best_insertion(dep2, rest2, d2, mu2, var2, v)
                    if ins2 is None:
                        continue
                    if ins1[0] + ins2[0] < dur + dur2 - _EPS:
                        plan.r[k] = [dep, rest[: ins1[1]] + (w,) + rest[ins1[1]:], ins1[0]]
                        plan.r[q] = [dep2, rest2[: ins2[1]] + (v,) + rest2[ins2[1]:], ins2[0]]
                        return True
    return False


def _local_search(net, routes, max_moves):
    plan = _Plan(net, routes)
    moves = 0
    while moves < max_moves:
        moves += 1
        before = plan.key()
        snapshot = [list(x) for x in plan.r]
        changed = False
        for k in sorted(range(len(plan.r)), key=lambda i: (len(plan.r[i][1]), plan.r[i][2], i)):
            if len(plan.r) > 1 and _try_dissolve(net, plan, k):
                changed = True
                break
        if not changed:
            changed = _try_relocate(net, plan) or _try_swap(net, plan)
        if not changed:
            break
        plan.r = [[dep, *net.polish(dep, stops)] for dep, stops, _ in plan.r]
        after = plan.key()
        if not _better(after[0], after[1], before[0], before[1]):
            # never accept a lexicographically worse plan
            plan.r = snapshot
            break
    return plan.routes()


# --------------------------------------------------------------------------
# drivers
# --------------------------------------------------------------------------

def _check_singletons(net):
    for s in range(net.m):
        if not any(net.feasible(dep, (s,)) for dep in net.dep_nodes):
            d = net.demands[s]
            mu, var = net.mu[s], net.var[s]
            reason = "overcrowding" if not net.load_ok(mu, var) else "ride time"
            raise StopUnroutable(d.stop.id, reason)


def _exact_columns(net):
    cols = []
    for dep in net.dep_nodes:
        for size in range(1, net.m + 1):
            for subset in itertools.combinations(range(net.m), size):
                mu, var = net.set_load(subset)
                if not net.load_ok(mu, var):
                    continue
                best = None
                for perm in itertools.permutations(subset):
                    dur = net.duration(dep, perm)
                    if net.ride_ok(dep, perm, dur) and (best is None or dur < best[0] - _EPS):
                        best = (dur, perm)
                if best is not None:
                    mask = 0
                    for s in subset:
                        mask |= 1 << s
                    cols.append((mask, best[0], dep, best[1]))
    return cols


def _heuristic(net, opts):
    pool = _Pool(net)
    solutions = []
    for dep in net.dep_nodes:
        for start in range(net.m):
            solutions.append(pool.add_solution(_nearest_neighbour(net, dep, start)))
        far_first = np.lexsort((np.arange(net.m), -net.T[:net.m, net.school]))
        for start in far_first[: opts.insertion_starts]:
            solutions.append(pool.add_solution(_cheapest_insertion(net, dep, int(start))))
        for sol in _sweeps(net, dep):
            solutions.append(pool.add_solution(sol))
        final, merged = _savings(net, dep)
        solutions.append(pool.add_solution(final))
        for dep_, stops in merged:
            pool.add(dep_, stops)
    solutions = [s for s in solutions if s is not None]
    if opts.drop_variants:
        for dep, members in list(pool.cols):
            stops = pool.cols[(dep, members)][1]
            if len(stops) > 1:
                for k in range(len(stops)):
                    pool.add(dep, stops[:k] + stops[k + 1:], polish=False)
    columns = pool.columns()
    incumbent = None
    for sol in solutions:
        counts = {}
        for dep, _, _ in sol:
            counts[dep] = counts.get(dep, 0) + 1
        if any(c > net.limit[d] for d, c in counts.items()):
            continue
        key = (len(sol), sum(c for _, _, c in sol))
        if incumbent is None or _better(key[0], key[1], incumbent[0], incumbent[1]):
            incumbent = (key[0], key[1], sol)
    start = None
    if incumbent is not None:
        lookup = {(dep, frozenset(stops)): ci for ci, (_, _, dep, stops) in enumerate(columns)}
        idx = [lookup[(dep, frozenset(stops))] for dep, stops, _ in incumbent[2]]
        start = (incumbent[0], incumbent[1], idx)
    res = _set_partition(net, columns, start, opts.node_limit)
    if res is None:
        raise StopUnroutable(net.demands[0].stop.id, "fleet too small for any route pool partition")
    routes = [(columns[ci][2], columns[ci][3]) for ci in res[2]]
    return _local_search(net, routes, opts.max_moves)


def solve_routing(stop_demands, depots, school, travel_model, chance_params, dt_max,
                  fleet=None, mode="auto", options=RoutingOptions()):
    """Plan routes for every stop with students.

    ``fleet`` is a list of (bus id, depot id); by default each depot gets
    one bus per stop.  ``mode`` is "auto", "exact" or "heuristic".
    """
    demands = [d for d in stop_demands if d.count > 0]
    if not demands:
        return EMPTY_PLAN
    net = _Net(demands, depots, school, travel_model, chance_params, dt_max, fleet)
    _check_singletons(net)
    if mode == "exact" or (mode == "auto" and net.m <= options.exact_max_stops):
        cols = _exact_columns(net)
        res = _set_partition(net, cols)
        if res is None:
            raise StopUnroutable(net.demands[0].stop.id, "fleet too small")
        routes = [(cols[ci][2], cols[ci][3]) for ci in res[2]]
    elif mode in ("auto", "heuristic"):
        routes = _heuristic(net, options)
    else:
        raise ValueError(f"unknown routing mode {mode!r}")
    return _to_plan(net, routes)


def _to_plan(net, routes):
    routes = sorted(routes, key=lambda r: (r[0], r[1][0]))
    free = {}
    for bus, node in net.fleet:
        free.setdefault(node, []).append(bus)
    out = []
    for dep, stops in routes:
        bus = free[dep].pop(0)
        depot = net.depots[dep - net.m]
        out.append(make_route(bus, depot, [net.demands[s] for s in stops], net.school_site, _TravelView(net)))
    out.sort(key=lambda r: r.bus)
    return RoutePlan(tuple(out), len(out), float(sum(r.duration for r in out)))


class _TravelView:
    """Adapter so make_route can price a route on the solver's own matrix."""

    def __init__(self, net):
        self.travel = net.T
        self.dwell = net.dwell
        self.index = {}
        for s, d in enumerate(net.demands):
            self.index[location_key(d)] = s
        for k, dp in enumerate(net.depots):
            self.index[location_key(dp)] = net.m + k
        self.index[location_key(net.school_site)] = net.school


def plan_is_feasible(plan, chance_params, dt_max):
    return all(normal_feasible(r.load, chance_params) and r.ride_time <= dt_max + RIDE_TOL for r in plan.routes)
