"""Worst-case distribution over the ambiguity set for fixed per-scenario
values.

max_p  sum_w p_w v_w   s.t.  p in P

Three set kinds: a singleton (nominal p0), a total-variation ball around p0
(solved exactly by a greedy mass transfer), and a general polyhedral set
(solved as an LP).  The TV greedy moves up to radius/2 of mass from the
lowest-valued scenarios onto the single highest-valued one; ties broken
deterministically (receiver: lowest index; donors: highest index first) so
results are reproducible across runs and platforms.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .conic import ConeProgram, solve_conic, OPTIMAL, INFEASIBLE, TAG_OTHER
from .model import AmbiguitySet, KIND_POLYHEDRAL, KIND_SINGLETON, KIND_TV

_FEAS_TOL = 1e-8


@dataclass(frozen=True)
class WorstCaseResult:
    p: np.ndarray
    value: float
    active: Tuple[int, ...] = ()


def _tie_ranks(values: np.ndarray) -> np.ndarray:
    """Cluster values that agree up to subsolver noise so tie-breaking is
    deterministic: equal rank <=> treated as exactly tied."""
    m = values.shape[0]
    tol = 1e-7 * (1.0 + float(np.max(np.abs(values), initial=0.0)))
    order = np.argsort(values, kind="stable")
    ranks = np.empty(m, dtype=int)
    rank = 0
    anchor = values[order[0]]
    for idx in order:
        if values[idx] - anchor > tol:
            rank += 1
            anchor = values[idx]
        ranks[idx] = rank
    return ranks


def _tv_greedy(values: np.ndarray, p0: np.ndarray, radius: float) -> np.ndarray:
    m = values.shape[0]
    p = p0.astype(float).copy()
    budget = radius / 2.0
    if budget <= 0.0 or m < 2:
        return p
    ranks = _tie_ranks(values)
    recv = min(range(m), key=lambda i: (-ranks[i], i))
    donors = sorted((i for i in range(m) if i != recv),
                    key=lambda i: (ranks[i], -i))
    for d in donors:
        if budget <= 1e-15:
            break
        if ranks[d] >= ranks[recv]:
            break
        amt = min(budget, p[d])
        p[d] -= amt
        p[recv] += amt
        budget -= amt
    return p


def _polyhedral_lp(values: np.ndarray, amb: AmbiguitySet) -> np.ndarray:
    m = values.shape[0]
    C, b = amb.rows
    ones = np.ones((1, m))
    G = np.vstack([ones, -ones, -np.asarray(C, dtype=float)])
    h = np.concatenate([[1.0], [-1.0], -np.asarray(b, dtype=float).ravel()])
    p = ConeProgram(c=-values, lin_G=G, lin_h=h,
                    lin_tags=(TAG_OTHER,) * G.shape[0], socs=(),
                    lo=np.zeros(m), hi=np.ones(m))
    sol = solve_conic(p)
    if sol.status == INFEASIBLE:
        raise ValueError("polyhedral ambiguity set is empty")
    if sol.status != OPTIMAL:
        raise RuntimeError(f"worst-case LP failed: {sol.message}")
    return np.maximum(sol.x, 0.0)


def worst_case_distribution(values: Sequence[float],
                            amb: AmbiguitySet) -> WorstCaseResult:
    values = np.asarray(values, dtype=float).ravel()
    m = amb.n_scenarios
    if values.shape[0] != m:
        raise ValueError(f"{values.shape[0]} values for {m} scenarios")

    if amb.kind == KIND_SINGLETON:
        p = amb.p0.astype(float).copy()
        active: Tuple[int, ...] = ()
    elif amb.kind == KIND_TV:
        p = _tv_greedy(values, amb.p0, amb.radius)
        active = tuple(i for i in range(m) if abs(p[i] - amb.p0[i]) > 1e-12)
    elif amb.kind == KIND_POLYHEDRAL:
        p = _polyhedral_lp(values, amb)
        C, b = amb.rows
        slack = np.asarray(b, dtype=float).ravel() - np.asarray(C, dtype=float) @ p
        active = tuple(np.nonzero(slack <= _FEAS_TOL)[0])
    else:  # pragma: no cover - AmbiguitySet validates kind
        raise ValueError(f"unknown ambiguity kind {amb.kind!r}")

    _check_membership(p, amb)
    return WorstCaseResult(p=p, value=float(p @ values), active=active)


def _check_membership(p: np.ndarray, amb: AmbiguitySet) -> None:
    if np.min(p) < -_FEAS_TOL or abs(float(np.sum(p)) - 1.0) > _FEAS_TOL:
        raise RuntimeError("worst-case distribution left the simplex")
    if amb.kind == KIND_TV:
        if float(np.sum(np.abs(p - amb.p0))) > amb.radius + _FEAS_TOL:
            raise RuntimeError("worst-case distribution left the TV ball")
    elif amb.kind == KIND_POLYHEDRAL:
        C, b = amb.rows
        viol = np.asarray(C, dtype=float) @ p - np.asarray(b, dtype=float).ravel()
        if viol.size and float(np.max(viol)) > _FEAS_TOL:
            raise RuntimeError("worst-case distribution violates a row")
