"""Stop selection and student-to-stop assignment.

Lexicographic objective: open as few stops as possible, then minimise the
total walking distance among allocations with that many stops.  Small
instances (at most ``EXACT_MAX_STOPS`` reachable stops) are solved exactly
by branch-and-bound; larger ones by greedy capacitated set cover followed by
stop-closing and stop-swapping local search.  Every assignment step is an
exact min-cost capacitated matching.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csc_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching, min_weight_full_bipartite_matching

from .errors import AllocationInfeasible
from .instance import build_candidate_sets

EXACT_MAX_STOPS = 12
_TOL = 1e-9


@dataclass
class Allocation:
    stop_of_student: dict
    open_stops: tuple
    total_walk: float
    open_count: int
    mode: str = "exact"
    lower_bound: int = 0
    notes: dict = field(default_factory=dict)

    @property
    def gap(self):
        return self.open_count - self.lower_bound

    def loads(self):
        out = {j: 0 for j in self.open_stops}
        for j in self.stop_of_student.values():
            out[j] = out.get(j, 0) + 1
        return out

    def to_dict(self):
        return {
            "open_stops": list(self.open_stops),
            "assignments": [[i, j] for i, j in sorted(self.stop_of_student.items())],
            "open_count": self.open_count,
            "total_walk": self.total_walk,
            "mode": self.mode,
            "lower_bound": self.lower_bound,
        }

    @classmethod
    def from_dict(cls, d):
        stop_of = {int(i): int(j) for i, j in d["assignments"]}
        return cls(stop_of, tuple(int(j) for j in d["open_stops"]), float(d["total_walk"]),
                   int(d["open_count"]), d.get("mode", "exact"), int(d.get("lower_bound", 0)))


def walk_table(instance, candidate_sets=None):
    """{student id: {stop id: walking distance}} over candidate pairs only."""
    cands = candidate_sets or build_candidate_sets(instance)
    dist = instance.walk_distances()
    col = {s.id: c for c, s in enumerate(instance.stops)}
    table = {}
    for r, s in enumerate(instance.students):
        table[s.id] = {j: float(dist[r, col[j]]) for j in cands.stops_of_student[s.id]}
    return table


class _Problem:
    """Index-based view of one allocation problem."""

    def __init__(self, candidate_sets, walk, p):
        self.p = int(p)
        self.students = sorted(candidate_sets.stops_of_student)
        stops = set()
        for i in self.students:
            stops.update(candidate_sets.stops_of_student[i])
        self.stops = sorted(stops)
        self.n = len(self.students)
        self.m = len(self.stops)
        s_idx = {j: c for c, j in enumerate(self.stops)}
        self.dist = np.full((self.n, self.m), np.inf)
        for r, i in enumerate(self.students):
            for j in candidate_sets.stops_of_student[i]:
                self.dist[r, s_idx[j]] = walk[i][j]
        self.reach = np.isfinite(self.dist)
        self.degree = self.reach.sum(axis=0)
        self.cover = [_bits(np.flatnonzero(self.reach[:, c])) for c in range(self.m)]
        self.all_mask = (1 << self.n) - 1
        self._members = [np.flatnonzero(self.reach[:, c]) for c in range(self.m)]
        self._weights = [self.dist[mem, c] + 1.0 for c, mem in enumerate(self._members)]
        self._sizes = np.array([mem.size for mem in self._members], dtype=np.int64)

    def slots(self, cols):
        return {c: min(self.p, int(self.degree[c])) for c in cols}

    def _graph(self, cols, weighted):
        cols = sorted(cols)
        k = np.array([min(self.p, int(self.degree[c])) for c in cols], dtype=np.int64)
        reps = np.repeat(np.arange(len(cols)), k)
        sizes = self._sizes[np.asarray(cols, dtype=np.int64)][reps]
        indptr = np.zeros(reps.size + 1, dtype=np.int64)
        np.cumsum(sizes, out=indptr[1:])
        indices = np.concatenate([self._members[cols[r]] for r in reps]) if reps.size else np.zeros(0, np.int64)
        if weighted:
            # +1 keeps zero-distance edges explicit; every row is matched once
            data = np.concatenate([self._weights[cols[r]] for r in reps]) if reps.size else np.zeros(0)
        else:
            data = np.ones(indices.size)
        g = csc_matrix((data, indices, indptr), shape=(self.n, reps.size)).tocsr()
        owner = np.asarray(cols, dtype=np.int64)[reps]
        return g, owner

    def feasible(self, cols):
        if not cols:
            return self.n == 0
        g, _ = self._graph(cols, weighted=False)
        if g.shape[1] < self.n:
            return False
        match = maximum_bipartite_matching(g, perm_type="column")
        return bool(np.all(match >= 0))

    def unmatched(self, cols):
        g, _ = self._graph(cols, weighted=False)
        match = maximum_bipartite_matching(g, perm_type="column")
        return [self.students[r] for r in np.flatnonzero(match < 0)]

    def assign(self, cols):
        """Min-walk capacitated assignment onto ``cols``; None if infeasible."""
        if self.n == 0:
            return 0.0, np.zeros(0, dtype=np.int64)
        if not cols:
            return None
        g, owner = self._graph(cols, weighted=True)
        if g.shape[1] < self.n:
            return None
        try:
            _, slot = min_weight_full_bipartite_matching(g)
        except ValueError:
            return None
        chosen = owner[slot]
        total = 0.0
        for r in range(self.n):
            total += self.dist[r, chosen[r]]
        return total, chosen

    def lower_bound(self):
        """max(ceil(n/p), size of a greedy family of students with disjoint reach)."""
        if self.n == 0:
            return 0
        lb_cap = math.ceil(self.n / self.p)
        used = 0
        packed = 0
        order = sorted(range(self.n), key=lambda r: (int(self.reach[r].sum()), r))
        for r in order:
            mask = _bits(np.flatnonzero(self.reach[r]))
            if not mask & used:
                used |= mask
                packed += 1
        return max(lb_cap, packed)


def _bits(idx):
    mask = 0
    for k in idx:
        mask |= 1 << int(k)
    return mask


def _result(prob, cols, total, chosen, mode, lb):
    stop_of = {prob.students[r]: prob.stops[int(chosen[r])] for r in range(prob.n)}
    open_stops = tuple(sorted({prob.stops[c] for c in set(int(c) for c in chosen)}))
    return Allocation(stop_of, open_stops, float(total), len(open_stops), mode, lb)


# --------------------------------------------------------------------------
# exact branch-and-bound
# --------------------------------------------------------------------------

def _exact(prob):
    m = prob.m
    suffix = [0] * (m + 1)
    for c in range(m - 1, -1, -1):
        suffix[c] = suffix[c + 1] | prob.cover[c]
    slot = [min(prob.p, int(prob.degree[c])) for c in range(m)]

    def cap_ok(inc_slots, t, room):
        if room <= 0:
            return inc_slots >= prob.n
        best = sorted(slot[t:], reverse=True)[:room]
        return inc_slots + sum(best) >= prob.n

    def search_count(k):
        found = []

        def dfs(t, inc, mask, inc_slots):
            if found:
                return
            if len(inc) == k:
                if mask == prob.all_mask and prob.feasible(inc):
                    found.append(list(inc))
                return
            if t == m or len(inc) + (m - t) < k:
                return
            if (mask | suffix[t]) != prob.all_mask or not cap_ok(inc_slots, t, k - len(inc)):
                return
            inc.append(t)
            dfs(t + 1, inc, mask | prob.cover[t], inc_slots + slot[t])
            inc.pop()
            dfs(t + 1, inc, mask, inc_slots)

        dfs(0, [], 0, 0)
        return found[0] if found else None

    lb = prob.lower_bound()
    k = lb
    while k <= m and search_count(k) is None:
        k += 1
    if k > m:
        raise AllocationInfeasible(prob.unmatched(list(range(m))))

    best = {"walk": math.inf, "cols": None, "chosen": None}

    def walk_bound(cols):
        return float(np.sum(np.min(prob.dist[:, cols], axis=1)))

    def dfs2(t, inc, mask, inc_slots):
        if len(inc) == k:
            if mask != prob.all_mask:
                return
            res = prob.assign(inc)
            if res is not None and res[0] < best["walk"] - _TOL:
                best.update(walk=res[0], cols=list(inc), chosen=res[1])
            return
        if t == m or len(inc) + (m - t) < k:
            return
        if (mask | suffix[t]) != prob.all_mask or not cap_ok(inc_slots, t, k - len(inc)):
            return
        if walk_bound(inc + list(range(t, m))) >= best["walk"] - _TOL:
            return
        inc.append(t)
        dfs2(t + 1, inc, mask | prob.cover[t], inc_slots + slot[t])
        inc.pop()
        dfs2(t + 1, inc, mask, inc_slots)

    dfs2(0, [], 0, 0)
    return _result(prob, best["cols"], best["walk"], best["chosen"], "exact", lb)


# --------------------------------------------------------------------------
# heuristic
# --------------------------------------------------------------------------

def _greedy_cover(prob):
    uncovered = np.ones(prob.n, dtype=bool)
    opened = []
    while uncovered.any():
        gains = np.minimum((prob.reach & uncovered[:, None]).sum(axis=0), prob.p)
        gains[opened] = -1
        c = int(np.argmax(gains))
        if gains[c] <= 0:
            break
        members = np.flatnonzero(prob.reach[:, c] & uncovered)
        members = members[np.lexsort((members, prob.dist[members, c]))][: prob.p]
        uncovered[members] = False
        opened.append(c)
    return sorted(opened)


def _heuristic(prob, swap_rounds=1):
    lb = prob.lower_bound()
    if not prob.feasible(list(range(prob.m))):
        raise AllocationInfeasible(prob.unmatched(list(range(prob.m))))
    cols = _greedy_cover(prob)
    res = prob.assign(cols)
    if res is None:  # pragma: no cover - greedy cover reserves a slot per student
        cols = list(range(prob.m))
        res = prob.assign(cols)
    walk, chosen = res
    cols = sorted(set(int(c) for c in chosen))

    def close_pass(cols, walk, chosen):
        improved = True
        while improved:
            improved = False
            loads = np.bincount(chosen, minlength=prob.m)
            for c in sorted(cols, key=lambda c: (loads[c], c)):
                trial = [x for x in cols if x != c]
                r = prob.assign(trial)
                if r is not None:
                    walk, chosen = r
                    cols = sorted(set(int(x) for x in chosen))
                    improved = True
                    break
        return cols, walk, chosen

    cols, walk, chosen = close_pass(cols, walk, chosen)
    for _ in range(swap_rounds):
        changed = False
        for c in list(cols):
            if c not in cols:
                continue
            members = prob.reach[:, c]
            nbrs = np.flatnonzero((prob.reach & members[:, None]).any(axis=0))
            for c2 in nbrs:
                c2 = int(c2)
                if c2 in cols:
                    continue
                trial = sorted([x for x in cols if x != c] + [c2])
                r = prob.assign(trial)
                if r is not None and r[0] < walk - _TOL:
                    walk, chosen = r
                    cols = sorted(set(int(x) for x in chosen))
                    changed = True
                    break
        if not changed:
            break
        cols, walk, chosen = close_pass(cols, walk, chosen)
    return _result(prob, cols, walk, chosen, "heuristic", lb)


def solve_allocation(candidate_sets, walk_distances, p, mode="auto", swap_rounds=1):
    """Allocate every student in ``candidate_sets`` to an open stop.

    ``walk_distances`` maps student id -> {stop id: distance}.  ``mode`` is
    "auto" (exact when at most EXACT_MAX_STOPS stops are reachable),
    "exact" or "heuristic".
    """
    if any(not v for v in candidate_sets.stops_of_student.values()):
        bad = [i for i, v in candidate_sets.stops_of_student.items() if not v]
        raise AllocationInfeasible(bad)
    prob = _Problem(candidate_sets, walk_distances, p)
    if prob.n == 0:
        return Allocation({}, (), 0.0, 0, "exact", 0)
    if mode == "exact" or (mode == "auto" and prob.m <= EXACT_MAX_STOPS):
        return _exact(prob)
    if mode not in ("auto", "heuristic"):
        raise ValueError(f"unknown allocation mode {mode!r}")
    return _heuristic(prob, swap_rounds=swap_rounds)


def allocate_instance(instance, mode="auto", swap_rounds=1):
    cands = build_candidate_sets(instance)
    return solve_allocation(cands, walk_table(instance, cands), instance.stop_capacity,
                            mode=mode, swap_rounds=swap_rounds)


def check_allocation(allocation, candidate_sets, p, walk_distances=None):
    """Names every violated constraint; an empty list means feasible."""
    issues = []
    open_set = set(allocation.open_stops)
    loads = {}
    for i, reach in sorted(candidate_sets.stops_of_student.items()):
        if i not in allocation.stop_of_student:
            issues.append(f"assign_once: student {i} has no stop")
            continue
        j = allocation.stop_of_student[i]
        if j not in reach:
            issues.append(f"walk_limit: student {i} assigned to unreachable stop {j}")
        if j not in open_set:
            issues.append(f"open_stop: student {i} assigned to closed stop {j}")
        loads[j] = loads.get(j, 0) + 1
    for i in allocation.stop_of_student:
        if i not in candidate_sets.stops_of_student:
            issues.append(f"assign_once: unknown student {i}")
    for j, load in sorted(loads.items()):
        if load > p:
            issues.append(f"stop_capacity: stop {j} holds {load} > {p} students")
    if allocation.open_count != len(open_set):
        issues.append(f"open_count {allocation.open_count} != {len(open_set)} open stops")
    if walk_distances is not None:
        total = sum(walk_distances[i][j] for i, j in allocation.stop_of_student.items()
                    if j in walk_distances.get(i, {}))
        if abs(total - allocation.total_walk) > 1e-6:
            issues.append(f"total_walk {allocation.total_walk} != recomputed {total}")
    return issues
