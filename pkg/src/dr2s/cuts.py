"""Cut generation: leaf duals -> affine minorants -> one disjunctive cut per
scenario -> probability-weighted aggregated cut for the master.

Each branch-and-cut leaf yields Q(y, w) >= R.y + S from its conic duals.  The
union of leaf epigraphs admits a single valid inequality eta >= lambda.y +
zeta obtained from a lift-and-project LP over the cut polyhedron; any feasible
point of that polyhedron is valid, so LP trouble degrades to the safe
componentwise-minimum point instead of failing the iteration.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np

from .conic import ConeProgram, solve_conic, OPTIMAL, TAG_OTHER
from .model import ScenarioData

if TYPE_CHECKING:  # pragma: no cover - annotation only, no runtime cycle
    from .misocp import LeafRecord

log = logging.getLogger("dr2s.cuts")


@dataclass(frozen=True)
class NodeCut:
    R: np.ndarray
    S: float
    leaf_id: int = -1

    def value_at(self, y) -> float:
        return float(self.R @ np.asarray(y, dtype=float) + self.S)


@dataclass(frozen=True)
class ScenarioCut:
    lam: np.ndarray
    zeta: float
    scenario: int = -1
    iteration: int = -1
    degraded: bool = False

    def value_at(self, y) -> float:
        return float(self.lam @ np.asarray(y, dtype=float) + self.zeta)


@dataclass(frozen=True)
class AggregatedCut:
    f: np.ndarray
    h: float
    p_used: np.ndarray

    def value_at(self, y) -> float:
        return float(self.f @ np.asarray(y, dtype=float) + self.h)


def node_cut_from_duals(leaf: "LeafRecord", sc: ScenarioData) -> NodeCut:
    """Affine minorant of Q(., w) from one leaf's optimal duals:

        R = sum_i B_i' theta_i - T' gamma1
        S = sum_i (b_i.theta_i - d_i lambda_i) + r.gamma1 + t_v.gamma2
            + zL_v.tau_lo - zU_v.tau_up
    """
    rel = leaf.relaxation
    n = sc.T.shape[1]
    R = np.zeros(n)
    S = 0.0
    for blk, (lam_i, theta_i) in zip(sc.soc_blocks, rel.soc_duals):
        R += blk.B.T @ theta_i
        S += blk.b @ theta_i - blk.d * lam_i
    g1 = rel.gamma1
    if sc.W.shape[0]:
        R -= sc.T.T @ g1
        S += sc.r @ g1
    if leaf.box.local_cuts is not None:
        t_v = np.asarray(leaf.box.local_cuts[1], dtype=float).ravel()
        g2 = rel.gamma2
        S += float(t_v @ g2)
    S += float(leaf.box.zL_v @ rel.tau_lo - leaf.box.zU_v @ rel.tau_up)
    return NodeCut(R=R, S=float(S), leaf_id=leaf.leaf_id)


def fallback_point(node_cuts: Sequence[NodeCut]) -> tuple:
    """Componentwise minimum over leaf cuts: always inside the cut polyhedron."""
    lam = np.min(np.array([c.R for c in node_cuts]), axis=0)
    zeta = min(float(c.S) for c in node_cuts)
    return lam, zeta


def _certified_zeta(lam, sigmas, Rsh, Ssh, F, a) -> float:
    """Largest constant keeping (lam, zeta) certified against every leaf.

    For fixed lam and sigma_v the best box multipliers are
    gamma_v = max(0, lam + F' sigma_v - R_v) in closed form, which turns the
    interior-point slack on the zeta rows back into cut depth and makes the
    certificate exact up to floating-point rounding.
    """
    zeta = np.inf
    for v in range(len(Rsh)):
        sig = sigmas[v]
        corr = lam + (F.T @ sig if sig.size else 0.0) - Rsh[v]
        gam = np.maximum(corr, 0.0)
        zeta = min(zeta, float(Ssh[v] + (a @ sig if sig.size else 0.0) - gam.sum()))
    return zeta


def build_and_solve_disjunctive_lp(node_cuts: Sequence[NodeCut], F: np.ndarray,
                                   a: np.ndarray, y_k, *, conic_tol: float = 1e-8,
                                   scenario: int = -1, iteration: int = -1) -> ScenarioCut:
    """One valid inequality for the union of leaf epigraphs, maximizing depth
    at y_k.  For each leaf v the polyhedron imposes, with sigma_v, gamma_v >= 0:

        lambda - R_v + F' sigma_v - gamma_v <= 0
        zeta - a.sigma_v - S_v + 1.gamma_v <= 0

    (gamma_v are the multipliers of the 0 <= y <= 1 box rows of the first
    stage).  A box |lambda_j|, |zeta| <= Lambda keeps the optimal face
    bounded; the Lambda margin is wide enough that the extreme-point optimum
    guaranteed by the leaf cuts themselves stays strictly inside, so the
    optimal value is unaffected.

    The LP is posed relative to the leaf cut with the smallest value at y_k:
    every certificate constrains only differences lambda - R_v, zeta - S_v,
    so subtracting one reference cut from all of them is exact, and it keeps
    the LP data on the scale of the leaf-to-leaf spread instead of the scale
    of Q itself.
    """
    if not node_cuts:
        raise ValueError("need at least one node cut")
    y_k = np.asarray(y_k, dtype=float)
    n = node_cuts[0].R.shape[0]
    if len(node_cuts) == 1:
        return ScenarioCut(lam=node_cuts[0].R.copy(), zeta=float(node_cuts[0].S),
                           scenario=scenario, iteration=iteration)

    F = np.atleast_2d(np.asarray(F, dtype=float))
    if F.size == 0:
        F = np.zeros((0, n))
    a = np.asarray(a, dtype=float).ravel()
    m0 = F.shape[0]
    V = len(node_cuts)
    ref = min(range(V), key=lambda v: node_cuts[v].value_at(y_k))
    Rref, Sref = node_cuts[ref].R, node_cuts[ref].S
    Rsh = [c.R - Rref for c in node_cuts]
    Ssh = [c.S - Sref for c in node_cuts]
    Lam = 10.0 * (1.0 + max(float(np.max(np.abs(R), initial=0.0)) + abs(S)
                            for R, S in zip(Rsh, Ssh)))

    # variable layout: [lambda (n), zeta, (sigma_v (m0), gamma_v (n)) per leaf]
    nv = n + 1 + V * (m0 + n)
    c_obj = np.zeros(nv)
    c_obj[:n] = -y_k
    c_obj[n] = -1.0

    rows = []
    rhs = []
    for v in range(V):
        base = n + 1 + v * (m0 + n)
        for j in range(n):
            row = np.zeros(nv)
            row[j] = -1.0
            if m0:
                row[base:base + m0] = -F[:, j]
            row[base + m0 + j] = 1.0
            rows.append(row)
            rhs.append(-Rsh[v][j])
        row = np.zeros(nv)
        row[n] = -1.0
        if m0:
            row[base:base + m0] = a
        row[base + m0:base + m0 + n] = -1.0
        rows.append(row)
        rhs.append(-Ssh[v])

    lo = np.full(nv, 0.0)
    hi = np.full(nv, np.inf)
    lo[:n + 1] = -Lam
    hi[:n + 1] = Lam

    p = ConeProgram(c=c_obj, lin_G=np.array(rows), lin_h=np.array(rhs),
                    lin_tags=(TAG_OTHER,) * len(rows), socs=(), lo=lo, hi=hi)
    sol = solve_conic(p, tol=conic_tol)

    # the componentwise-minimum point, with its zeta re-certified (sigma = 0)
    lam_fb = np.min(np.array(Rsh), axis=0)
    zeros = [np.zeros(m0)] * V
    zeta_fb = _certified_zeta(lam_fb, zeros, Rsh, Ssh, F, a)

    if sol.status != OPTIMAL:
        log.warning("disjunctive LP degraded to fallback point "
                    "(scenario %s iteration %s status %s)", scenario, iteration,
                    sol.status)
        return ScenarioCut(lam=Rref + lam_fb, zeta=float(Sref + zeta_fb),
                           scenario=scenario, iteration=iteration, degraded=True)

    lam_lp = sol.x[:n].copy()
    sigmas = [np.maximum(sol.x[n + 1 + v * (m0 + n):n + 1 + v * (m0 + n) + m0], 0.0)
              for v in range(V)]
    zeta_lp = _certified_zeta(lam_lp, sigmas, Rsh, Ssh, F, a)
    # keep the deeper of the re-certified LP point and the fallback
    if lam_lp @ y_k + zeta_lp >= lam_fb @ y_k + zeta_fb:
        lam_sh, zeta_sh = lam_lp, zeta_lp
    else:
        lam_sh, zeta_sh = lam_fb, zeta_fb
    return ScenarioCut(lam=Rref + lam_sh, zeta=float(Sref + zeta_sh),
                       scenario=scenario, iteration=iteration)


def aggregate(cuts: Sequence[ScenarioCut], p: Sequence[float]) -> AggregatedCut:
    """Probability-weighted combination: f = sum p lam, h = sum p zeta."""
    p = np.asarray(p, dtype=float).ravel()
    if len(cuts) != p.shape[0]:
        raise ValueError(f"{len(cuts)} cuts but {p.shape[0]} probabilities")
    f = np.zeros(cuts[0].lam.shape[0])
    h = 0.0
    for cut, pw in zip(cuts, p):
        f += pw * cut.lam
        h += pw * cut.zeta
    return AggregatedCut(f=f, h=float(h), p_used=p.copy())


def is_duplicate(cut: AggregatedCut, existing: Sequence[AggregatedCut],
                 tol: float = 1e-9) -> bool:
    for other in existing:
        if abs(cut.h - other.h) <= tol and \
                float(np.max(np.abs(cut.f - other.f), initial=0.0)) <= tol:
            return True
    return False
