"""Branch-and-cut over the embedded conic solver vs lattice enumeration."""
import time

import numpy as np
import pytest

from dr2s.conic import ConeProgram, OPTIMAL
from dr2s.misocp import (AssumptionViolation, BC_GAP_LIMIT, BC_OPTIMAL,
                         INTEGRALITY_TOL, scenario_relaxation,
                         solve_monolithic, solve_subproblem)
from dr2s.model import KIND_SINGLETON, augment_with_slacks, feasible_binaries
from instancegen import random_instance
from oracles import leaf_partition_ok, mi_enumerate, scenario_value


def _random_cases(rng, count):
    """(scenario, y, index) triples drawn from fresh random instances."""
    cases = []
    while len(cases) < count:
        inst = random_instance(rng)
        ys = feasible_binaries(inst.first_stage)
        y = ys[int(rng.integers(0, len(ys)))]
        w = int(rng.integers(0, len(inst.scenarios)))
        cases.append((inst.scenarios[w], y, w))
    return cases


def test_subproblem_matches_lattice_enumeration(rng):
    for sc, y, w in _random_cases(rng, 10):
        res = solve_subproblem(sc, y, scenario_index=w)
        assert res.status == BC_OPTIMAL
        oracle = scenario_value(sc, y)
        assert res.obj == pytest.approx(oracle, abs=1e-6 * max(1, abs(oracle)))


def test_incumbents_are_integral(rng):
    for sc, y, w in _random_cases(rng, 6):
        res = solve_subproblem(sc, y, scenario_index=w)
        frac = res.incumbent[:sc.l1] - np.round(res.incumbent[:sc.l1])
        assert float(np.max(np.abs(frac), initial=0.0)) <= INTEGRALITY_TOL


def test_leaf_boxes_partition_lattice(rng):
    for sc, y, w in _random_cases(rng, 8):
        res = solve_subproblem(sc, y, scenario_index=w)
        assert leaf_partition_ok(res.leaves, sc)


def test_leaves_carry_cut_data(rng):
    sc, y, w = _random_cases(rng, 1)[0]
    res = solve_subproblem(sc, y, scenario_index=w)
    n = sc.T.shape[1]
    for lf in res.leaves:
        assert lf.R is not None and lf.S is not None
        assert np.asarray(lf.R).shape == (n,)
        assert np.isfinite(lf.S)


def test_subproblem_bound_below_objective(rng):
    for sc, y, w in _random_cases(rng, 5):
        res = solve_subproblem(sc, y, scenario_index=w)
        assert res.bound <= res.obj + 1e-7 * (1 + abs(res.obj))
        assert res.gap <= 1e-6


def test_gap_limit_coarsens_but_stays_sandwiched(rng):
    sc, y, w = _random_cases(rng, 1)[0]
    res = solve_subproblem(sc, y, scenario_index=w, gap_limit=0.5)
    assert res.status in (BC_OPTIMAL, BC_GAP_LIMIT)
    exact = scenario_value(sc, y)
    assert res.bound <= exact + 1e-7
    assert res.obj >= exact - 1e-7


def test_expired_deadline_returns_quickly(rng):
    sc, y, w = _random_cases(rng, 1)[0]
    t0 = time.monotonic()
    res = solve_subproblem(sc, y, scenario_index=w, deadline=time.monotonic())
    assert time.monotonic() - t0 < 5.0
    if res.status == BC_OPTIMAL:  # root may already be integral
        assert res.gap <= 1e-6
    else:
        assert res.status == BC_GAP_LIMIT


def test_infeasible_recourse_raises_structured_error(rng):
    inst = random_instance(rng)
    sc = inst.scenarios[0]
    nx = sc.q.shape[0]
    n = inst.first_stage.n
    import dataclasses
    bad = dataclasses.replace(
        sc, W=np.vstack([sc.W, np.zeros((1, nx))]),
        T=np.vstack([sc.T, np.zeros((1, n))]),
        r=np.concatenate([sc.r, [1.0]]))
    y = feasible_binaries(inst.first_stage)[0]
    with pytest.raises(AssumptionViolation) as exc:
        solve_subproblem(bad, y, scenario_index=3)
    assert exc.value.scenario == 3
    assert np.allclose(np.asarray(exc.value.y, dtype=float), y)

    fixed = augment_with_slacks(
        dataclasses.replace(inst, scenarios=(bad,) + inst.scenarios[1:]), 1e5)
    res = solve_subproblem(fixed.scenarios[0], y, scenario_index=3)
    assert res.status == BC_OPTIMAL


def test_cut_callback_rounds(rng):
    sc, y, w = _random_cases(rng, 1)[0]
    baseline = solve_subproblem(sc, y, scenario_index=w)
    calls = []
    nx = sc.q.shape[0]

    def redundant_rows(box, sol):
        if calls:
            return []          # one round is enough for the probe
        calls.append(1)
        return [(np.ones(nx), float(np.sum(box.zL_v)) - 1.0)]

    res = solve_subproblem(sc, y, scenario_index=w, cut_callback=redundant_rows)
    assert calls, "callback never ran"
    assert res.obj == pytest.approx(baseline.obj, abs=1e-6)


def test_monolithic_matches_lattice_enumeration(rng):
    from dr2s.cli import build_extensive_form
    inst = random_instance(rng, n=3, m=2, l1=1, l2=2, kind=KIND_SINGLETON)
    prog = build_extensive_form(inst)
    res = solve_monolithic(prog)
    oracle, _ = mi_enumerate(prog)
    assert res.status == BC_OPTIMAL
    assert res.obj == pytest.approx(oracle, abs=1e-6 * max(1, abs(oracle)))


def test_relaxation_is_a_relaxation(rng):
    # optimal value of the node relaxation never exceeds the integer optimum
    for sc, y, w in _random_cases(rng, 5):
        from dr2s.conic import solve_conic
        rel = solve_conic(scenario_relaxation(sc, y))
        assert rel.status == OPTIMAL
        assert rel.obj <= scenario_value(sc, y) + 1e-6
