"""Worst-case distribution selection over the three ambiguity-set kinds."""
import numpy as np
import pytest
from hypothesis import given, strategies as st

from dr2s.ambiguity import WorstCaseResult, worst_case_distribution
from dr2s.model import AmbiguitySet, KIND_POLYHEDRAL, KIND_SINGLETON, KIND_TV
from oracles import tv_vertex_value, worst_case_lp


def _tv(p0, radius):
    return AmbiguitySet(kind=KIND_TV, p0=np.asarray(p0, dtype=float),
                        radius=float(radius))


def _random_simplex(rng, m):
    p = rng.dirichlet(np.ones(m))
    p = np.maximum(p, 1e-3)
    return p / p.sum()


def test_singleton_returns_nominal():
    amb = AmbiguitySet(kind=KIND_SINGLETON, p0=np.array([0.3, 0.7]))
    res = worst_case_distribution([5.0, -1.0], amb)
    assert np.allclose(res.p, [0.3, 0.7])
    assert res.value == pytest.approx(0.3 * 5.0 - 0.7)
    assert res.active == ()


def test_tv_matches_scipy_lp(rng):
    for _ in range(50):
        m = int(rng.integers(2, 6))
        amb = _tv(_random_simplex(rng, m), float(rng.choice([0.0, 0.05, 0.1, 0.3, 0.7, 1.4, 2.0])))
        v = rng.uniform(-3, 3, size=m)
        res = worst_case_distribution(v, amb)
        assert res.value == pytest.approx(worst_case_lp(v, amb), abs=1e-8)
        assert res.value == pytest.approx(float(res.p @ v), abs=1e-12)


def test_tv_matches_vertex_enumeration(rng):
    for _ in range(12):
        m = int(rng.integers(2, 6))
        p0 = _random_simplex(rng, m)
        radius = float(rng.choice([0.05, 0.1, 0.3, 1.0]))
        v = rng.uniform(-2, 2, size=m)
        res = worst_case_distribution(v, _tv(p0, radius))
        assert res.value == pytest.approx(tv_vertex_value(v, p0, radius), abs=1e-8)


@given(seed=st.integers(0, 100_000))
def test_tv_stays_inside_ball_property(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(2, 6))
    p0 = _random_simplex(rng, m)
    radius = float(rng.uniform(0, 2))
    v = rng.uniform(-5, 5, size=m)
    res = worst_case_distribution(v, _tv(p0, radius))
    assert np.min(res.p) >= -1e-12
    assert float(np.sum(res.p)) == pytest.approx(1.0, abs=1e-12)
    assert float(np.sum(np.abs(res.p - p0))) <= radius + 1e-10
    assert res.value >= float(p0 @ v) - 1e-12   # no worse than nominal


def test_zero_radius_is_nominal(rng):
    p0 = _random_simplex(rng, 4)
    v = rng.uniform(-1, 1, size=4)
    res = worst_case_distribution(v, _tv(p0, 0.0))
    assert np.allclose(res.p, p0, atol=1e-15)
    assert res.active == ()


def test_full_radius_piles_mass_on_argmax():
    p0 = np.array([0.4, 0.2, 0.4])
    res = worst_case_distribution([1.0, 5.0, 2.0], _tv(p0, 2.0))
    assert np.allclose(res.p, [0.0, 1.0, 0.0], atol=1e-12)


def test_receiver_tie_breaks_to_lowest_index():
    # scenarios 1 and 2 tie for the highest value; index 1 receives
    p0 = np.full(4, 0.25)
    res = worst_case_distribution([0.5, 0.75, 0.75, 0.5], _tv(p0, 0.1))
    assert np.allclose(res.p, [0.25, 0.3, 0.25, 0.2], atol=1e-12)


def test_donor_order_prefers_highest_index_among_ties():
    # both low scenarios tie; mass leaves index 3 before index 0
    p0 = np.full(4, 0.25)
    res = worst_case_distribution([0.0, 1.0, 0.5, 0.0], _tv(p0, 0.2))
    assert res.p[1] == pytest.approx(0.35)
    assert res.p[3] == pytest.approx(0.15)
    assert res.p[0] == pytest.approx(0.25)


def test_near_ties_are_clustered(rng):
    # values equal up to subsolver noise act exactly tied
    p0 = _random_simplex(rng, 3)
    base = np.array([1.0, 1.0 + 1e-9, 0.0])
    a = worst_case_distribution(base, _tv(p0, 0.3))
    b = worst_case_distribution(base[[1, 0, 2]], _tv(p0, 0.3))
    assert np.allclose(a.p, b.p, atol=1e-12)


def test_value_monotone_in_radius(rng):
    p0 = _random_simplex(rng, 5)
    v = rng.uniform(-2, 2, size=5)
    vals = [worst_case_distribution(v, _tv(p0, r)).value
            for r in (0.0, 0.05, 0.1, 0.3, 0.8, 2.0)]
    assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))


def test_active_set_marks_moved_mass():
    p0 = np.full(4, 0.25)
    res = worst_case_distribution([1.0, 3.0, 2.0, 0.0], _tv(p0, 0.1))
    assert set(res.active) == {i for i in range(4)
                               if abs(res.p[i] - 0.25) > 1e-12}
    assert 1 in res.active


def test_polyhedral_matches_scipy(rng):
    for _ in range(15):
        m = int(rng.integers(2, 5))
        p0 = _random_simplex(rng, m)
        C = np.vstack([np.eye(m), -np.eye(m), rng.uniform(-1, 1, size=(1, m))])
        b = np.concatenate([p0 + 0.2, -(p0 - 0.2), [C[-1] @ p0 + 0.1]])
        amb = AmbiguitySet(kind=KIND_POLYHEDRAL, p0=p0, rows=(C, b))
        v = rng.uniform(-2, 2, size=m)
        res = worst_case_distribution(v, amb)
        assert res.value == pytest.approx(worst_case_lp(v, amb), abs=1e-7)


def test_wrong_length_rejected():
    with pytest.raises(ValueError):
        worst_case_distribution([1.0, 2.0, 3.0], _tv(np.array([0.5, 0.5]), 0.1))


def test_result_is_frozen():
    res = worst_case_distribution([1.0, 2.0], _tv(np.array([0.5, 0.5]), 0.0))
    assert isinstance(res, WorstCaseResult)
    with pytest.raises(Exception):
        res.value = 0.0
