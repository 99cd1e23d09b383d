import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import allocation_oracle, random_problem

from sbrp.allocation import Allocation, allocate_instance, check_allocation, solve_allocation, walk_table
from sbrp.errors import AllocationInfeasible
from sbrp.instance import CandidateSets, build_candidate_sets, generate_synthetic

def test_single_student():
    cs = CandidateSets({0: frozenset({5})}, {5: frozenset({0})})
    a = solve_allocation(cs, {0: {5: 0.2}}, p=3)
    assert a.open_stops == (5,) and a.open_count == 1
    assert a.total_walk == pytest.approx(0.2)


def test_pigeonhole_two_stops():
    p = 3
    studs = range(2 * p)
    cs = CandidateSets({i: frozenset({1, 2}) for i in studs}, {1: frozenset(studs), 2: frozenset(studs)})
    walk = {i: {1: 0.1 * i, 2: 0.05 * (6 - i)} for i in studs}
    a = solve_allocation(cs, walk, p)
    assert a.open_count == 2
    assert check_allocation(a, cs, p, walk) == []


def test_capacity_infeasible_names_students():
    cs = CandidateSets({0: frozenset({1}), 1: frozenset({1}), 2: frozenset({1, 2})},
                       {1: frozenset({0, 1, 2}), 2: frozenset({2})})
    walk = {0: {1: 0.1}, 1: {1: 0.1}, 2: {1: 0.1, 2: 0.1}}
    with pytest.raises(AllocationInfeasible) as exc:
        solve_allocation(cs, walk, p=1)
    assert exc.value.student_ids


def _solve_or_none(cs, walk, p, mode):
    try:
        return solve_allocation(cs, walk, p, mode=mode)
    except AllocationInfeasible:
        return None


@pytest.mark.parametrize("seed", range(40))
def test_exact_matches_enumeration(seed):
    cs, walk, p = random_problem(seed)
    want = allocation_oracle(cs, walk, p)
    got = _solve_or_none(cs, walk, p, "exact")
    if want is None:
        assert got is None
        return
    assert got.open_count == want[0]
    assert got.total_walk == pytest.approx(want[1], abs=1e-9)
    assert check_allocation(got, cs, p, walk) == []


@pytest.mark.parametrize("seed", range(40))
def test_heuristic_feasible_and_close(seed):
    cs, walk, p = random_problem(1000 + seed)
    exact = _solve_or_none(cs, walk, p, "exact")
    heur = _solve_or_none(cs, walk, p, "heuristic")
    assert (exact is None) == (heur is None)
    if exact is None:
        return
    assert check_allocation(heur, cs, p, walk) == []
    assert exact.open_count <= heur.open_count <= exact.open_count + 2
    assert heur.lower_bound <= exact.open_count


@settings(max_examples=25)
@given(st.integers(0, 10_000))
def test_removing_a_student_never_adds_stops(seed):
    cs, walk, p = random_problem(seed)
    full = _solve_or_none(cs, walk, p, "exact")
    if full is None or len(cs.stops_of_student) < 2:
        return
    drop = min(cs.stops_of_student)
    sub = {i: s for i, s in cs.stops_of_student.items() if i != drop}
    sub_cs = CandidateSets(sub, {j: frozenset(s - {drop}) for j, s in cs.students_of_stop.items()})
    smaller = solve_allocation(sub_cs, {i: walk[i] for i in sub}, p, mode="exact")
    assert smaller.open_count <= full.open_count


def test_check_allocation_names_constraints():
    cs = CandidateSets({0: frozenset({1}), 1: frozenset({1, 2})}, {1: frozenset({0, 1}), 2: frozenset({1})})
    bad = Allocation({0: 2, 1: 1}, (1,), 0.0, 1)
    issues = check_allocation(bad, cs, p=1)
    assert any("walk_limit:" in s for s in issues)
    assert any("open_stop:" in s for s in issues)
    over = Allocation({0: 1, 1: 1}, (1,), 0.0, 1)
    assert any("stop_capacity:" in s for s in check_allocation(over, cs, p=1))
    missing = Allocation({0: 1}, (1,), 0.0, 1)
    assert any("assign_once:" in s for s in check_allocation(missing, cs, p=2))


def test_heuristic_at_scale_is_feasible():
    inst = generate_synthetic(400, 1, 1, 3.0, seed=7)
    a = allocate_instance(inst)
    assert a.mode == "heuristic"
    cs = build_candidate_sets(inst)
    assert check_allocation(a, cs, inst.stop_capacity, walk_table(inst, cs)) == []
    assert a.open_count >= a.lower_bound >= math.ceil(400 / inst.stop_capacity)


def test_allocation_dict_round_trip():
    cs, walk, p = random_problem(3, n_students=4)
    a = solve_allocation(cs, walk, 4)
    b = Allocation.from_dict(a.to_dict())
    assert (b.stop_of_student, b.open_stops, b.total_walk, b.open_count) == \
        (a.stop_of_student, a.open_stops, a.total_walk, a.open_count)
