import math

import numpy as np
import pytest

from sbrp.instance import generate_synthetic
from sbrp.optout import OptOutModel
from sbrp.ridership import fit_ridership, individual_ridership
from sbrp.simulation import CostParams, Models, Settings, baseline, csv_header, sweep, write_plot_data

GRID = [0.0, 1000.0, 2000.0, 2500.0]
PROV = {"config_hash": "test", "seed": 11}


@pytest.fixture(scope="module")
def world():
    inst = generate_synthetic(40, 1, 1, 3.0, seed=5)
    rm = fit_ridership(inst.distances_to_school, 0.3)
    return inst, Models(rm, OptOutModel())


@pytest.fixture(scope="module")
def curve(world):
    inst, models = world
    settings = Settings(cost=CostParams(85_000.0, 3.0))
    return sweep(inst, models, GRID, replicas=6, base_seed=11, settings=settings, keep_scenarios=True), settings


def test_savings_accounting_identity(curve):
    c, settings = curve
    for t in GRID:
        for sc in c.scenarios[t]:
            operating = 85_000.0 * sc.plan.bus_count + 3.0 * sc.plan.total_time
            assert sc.operating_cost == pytest.approx(operating)
            assert sc.savings == pytest.approx(c.baseline_cost - (t * len(sc.optouts) + operating))
            if sc.optouts:
                assert sc.max_incentive_per_student == pytest.approx((c.baseline_cost - operating) / len(sc.optouts))
                assert (sc.savings >= -1e-6) == (t <= sc.max_incentive_per_student + 1e-9)


def test_summary_recomputed_from_scenarios(curve):
    c, _ = curve
    for k, t in enumerate(GRID):
        s = np.array([sc.savings for sc in c.scenarios[t]])
        assert c.mean_savings[k] == pytest.approx(s.mean())
        assert c.std_savings[k] == pytest.approx(s.std(ddof=1))
        assert c.p_fail[k] == np.count_nonzero(s < 0) / s.size
        assert c.mean_buses[k] == pytest.approx(np.mean([sc.plan.bus_count for sc in c.scenarios[t]]))


def test_zero_incentive_row_is_near_baseline(curve):
    c, _ = curve
    zero = c.scenarios[0.0]
    # with the default model nearly nobody leaves for free
    assert c.mean_optouts[0] <= 1.0
    for sc in zero:
        if not sc.optouts:
            assert sc.plan.bus_count == c.baseline_buses


def test_optout_sets_nest_across_incentives(curve):
    c, _ = curve
    for r in range(c.replicas):
        sets = [c.scenarios[t][r].optouts for t in GRID]
        assert all(a <= b for a, b in zip(sets, sets[1:]))


def test_optouts_follow_the_logistic_rule(world, curve):
    inst, models = world
    c, _ = curve
    m = models.optout
    for r in range(c.replicas):
        seed = int(np.random.SeedSequence([11, r]).generate_state(1, dtype=np.uint64)[0])
        u = np.random.default_rng(seed).random(len(inst.students))
        for t in GRID:
            theta = [1.0 / (1.0 + math.exp(m.a * s.dist_school + m.b * t + m.c)) for s in inst.students]
            want = frozenset(s.id for s, uu, th in zip(inst.students, u, theta) if uu < th)
            assert c.scenarios[t][r].optouts == want


def test_baseline_respects_expected_load_bound(world):
    inst, models = world
    plan, cost = baseline(inst, models.ridership, Settings())
    total = sum(individual_ridership(models.ridership, s.dist_school) for s in inst.students)
    assert plan.bus_count >= math.ceil(total / 48.5)
    assert cost == 85_000.0 * plan.bus_count


def test_nobody_opts_out_gives_zero_savings(world):
    inst, models = world
    never = Models(models.ridership, OptOutModel.unchecked(0.0, 0.0, 800.0))
    c = sweep(inst, never, GRID, replicas=3, base_seed=1)
    assert c.mean_savings == [0.0] * len(GRID)
    assert c.p_fail == [0.0] * len(GRID)
    assert c.mean_buses == [float(c.baseline_buses)] * len(GRID)


def test_everybody_opts_out_pays_every_student(world):
    inst, models = world
    always = Models(models.ridership, OptOutModel.unchecked(0.0, 0.0, -800.0))
    c = sweep(inst, always, GRID, replicas=2, base_seed=1, keep_scenarios=True)
    n = len(inst.students)
    for k, t in enumerate(GRID):
        assert c.mean_savings[k] == pytest.approx(c.baseline_cost - t * n)
        assert c.mean_buses[k] == 0.0
        assert all(sc.plan.routes == () for sc in c.scenarios[t])


def test_csv_is_byte_identical_and_resumable(world, tmp_path):
    inst, models = world
    a, b, c = tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "c.csv"
    sweep(inst, models, GRID, replicas=3, base_seed=4, out_csv=a, provenance=PROV)
    sweep(inst, models, GRID, replicas=3, base_seed=4, out_csv=b, provenance=PROV)
    assert a.read_bytes() == b.read_bytes()
    # interrupted after two incentives, then resumed on the full grid
    sweep(inst, models, GRID[:2], replicas=3, base_seed=4, out_csv=c, provenance=PROV)
    lines = c.read_text().splitlines()
    assert len(lines) == len(csv_header(PROV, 3).splitlines()) + 2
    sweep(inst, models, GRID, replicas=3, base_seed=4, out_csv=c, provenance=PROV)
    assert c.read_bytes() == a.read_bytes()


def test_resume_ignores_output_with_other_provenance(world, tmp_path):
    inst, models = world
    p = tmp_path / "s.csv"
    sweep(inst, models, GRID[:1], replicas=2, base_seed=4, out_csv=p, provenance={"config_hash": "old", "seed": 4})
    sweep(inst, models, GRID[:1], replicas=2, base_seed=4, out_csv=p, provenance=PROV)
    assert "# config_hash=test" in p.read_text()
    assert "old" not in p.read_text()


def test_csv_header_layout(world, tmp_path):
    inst, models = world
    p = tmp_path / "s.csv"
    sweep(inst, models, [0.0], replicas=2, base_seed=4, out_csv=p, provenance=PROV)
    lines = p.read_text().splitlines()
    assert "# config_hash=test" in lines and "# seed=11" in lines
    assert "# degenerate_std=false" in lines
    assert "tau,replicas,mean_savings,std_savings,p_fail,mean_buses,mean_optouts" in lines


def test_single_replica_is_flagged_degenerate(world, tmp_path):
    inst, models = world
    p = tmp_path / "one.csv"
    c = sweep(inst, models, GRID[:2], replicas=1, base_seed=2, out_csv=p, provenance=PROV)
    assert c.degenerate
    assert c.std_savings == [0.0, 0.0]
    assert "# degenerate_std=true" in p.read_text().splitlines()


def test_worker_processes_match_serial(world, tmp_path):
    inst, models = world
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    sweep(inst, models, GRID[:2], replicas=3, base_seed=8, out_csv=a, provenance=PROV)
    sweep(inst, models, GRID[:2], replicas=3, base_seed=8, out_csv=b, provenance=PROV, workers=2)
    assert a.read_bytes() == b.read_bytes()


@pytest.mark.parametrize("grid,replicas", [([], 2), ([500.0, 0.0], 2), ([0.0, 0.0], 2), ([0.0], 0)])
def test_sweep_argument_checks(world, grid, replicas):
    inst, models = world
    with pytest.raises(ValueError):
        sweep(inst, models, grid, replicas=replicas)


def test_plot_data_blocks(curve, tmp_path):
    c, _ = curve
    p = tmp_path / "plot.dat"
    write_plot_data(c, p, PROV)
    text = p.read_text()
    assert text.startswith("# config_hash=test\n# seed=11\n")
    blocks = [b for b in text.split("\n\n\n") if b.strip()]
    assert len(blocks) == 5
    first = [ln for ln in blocks[0].splitlines() if not ln.startswith("#")]
    assert [float(ln.split()[0]) for ln in first] == GRID
    assert [float(ln.split()[1]) for ln in first] == pytest.approx(c.mean_savings)
