"""Branch-and-cut for bounded mixed-integer conic programs.

Two entry points share one core: `solve_subproblem` solves a scenario's
recourse program at a fixed first-stage point and returns the full leaf
ledger (every terminal node with its solved relaxation and dual-derived cut
coefficients), and `solve_monolithic` solves an arbitrary bounded
mixed-integer cone program (used for the master and the extensive form).

Node selection is best-bound with FIFO tie-breaking, branching is
most-fractional with lowest-index tie-breaking, and nodes are solved on
creation, so runs are deterministic and the leaf boxes partition the root
integer lattice.  In scenario mode an infeasible node is a violation of the
complete-recourse assumption and raises a structured error; in monolithic
mode infeasible nodes are fathomed silently.
"""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .conic import (ConeProgram, ConicSolution, SocRow, solve_conic,
                    OPTIMAL, INFEASIBLE, NUMERICAL_FAILURE,
                    TAG_RECOURSE, TAG_LOCAL_CUT)
from .model import ScenarioData

BC_OPTIMAL = "optimal"
BC_GAP_LIMIT = "gap-limit"
BC_INFEASIBLE = "infeasible"

INTEGRALITY_TOL = 1e-6


class AssumptionViolation(RuntimeError):
    """An infeasible node relaxation in scenario mode: complete recourse fails.

    Carries the scenario index, first-stage point, and node box so the report
    can point at the exact hole; `slack_augment` repairs such instances.
    """

    def __init__(self, scenario, y, zL_v, zU_v):
        self.scenario = scenario
        self.y = None if y is None else np.asarray(y, dtype=float)
        self.zL_v = np.asarray(zL_v, dtype=float)
        self.zU_v = np.asarray(zU_v, dtype=float)
        where = f"scenario {scenario}" if scenario is not None else "subproblem"
        ystr = "" if y is None else f" at y={np.asarray(y).astype(int).tolist()}"
        super().__init__(
            f"infeasible node relaxation in {where}{ystr} "
            f"(box {self.zL_v.tolist()} .. {self.zU_v.tolist()}); "
            "complete recourse (Assumption 1) is violated - "
            "consider slack_augment")


class SolverNumericalError(RuntimeError):
    """Interior-point failure at a node, with provenance."""


@dataclass(frozen=True)
class NodeBox:
    zL_v: np.ndarray
    zU_v: np.ndarray
    local_cuts: Optional[tuple] = None  # (X rows over x, t rhs) or None

    def __post_init__(self):
        object.__setattr__(self, "zL_v", np.asarray(self.zL_v, dtype=float))
        object.__setattr__(self, "zU_v", np.asarray(self.zU_v, dtype=float))


@dataclass
class LeafRecord:
    leaf_id: int
    box: NodeBox
    relaxation: ConicSolution
    fathom_reason: str                 # integral | bound | bounds-fixed
    R: Optional[np.ndarray] = None     # affine minorant coefficients in y
    S: Optional[float] = None


@dataclass
class BcResult:
    status: str
    incumbent: Optional[np.ndarray]
    obj: float
    leaves: list
    nodes_explored: int
    bound: float

    @property
    def gap(self) -> float:
        if not np.isfinite(self.obj):
            return np.inf
        return max(0.0, self.obj - self.bound) / (1.0 + abs(self.obj))


def scenario_relaxation(sc: ScenarioData, y, zL_v=None, zU_v=None,
                        local_cuts=None) -> ConeProgram:
    """The continuous node relaxation of Sub(y, w) on the given box."""
    y = np.asarray(y, dtype=float)
    h = sc.r - sc.T @ y if sc.W.shape[0] else np.zeros(0)
    G = sc.W
    tags = [TAG_RECOURSE] * sc.W.shape[0]
    if local_cuts is not None:
        X, t = local_cuts
        X = np.atleast_2d(np.asarray(X, dtype=float))
        G = np.vstack([G, X]) if G.shape[0] else X
        h = np.concatenate([h, np.asarray(t, dtype=float).ravel()])
        tags += [TAG_LOCAL_CUT] * X.shape[0]
    socs = tuple(SocRow(A=blk.A, b=blk.b + blk.B @ y, g=blk.g, d=blk.d)
                 for blk in sc.soc_blocks)
    return ConeProgram(c=sc.q, lin_G=G, lin_h=h, lin_tags=tuple(tags), socs=socs,
                       lo=sc.zL if zL_v is None else zL_v,
                       hi=sc.zU if zU_v is None else zU_v,
                       integers=sc.integers)


@dataclass
class _Node:
    box: NodeBox
    relaxation: ConicSolution


def _with_box(p: ConeProgram, box: NodeBox) -> ConeProgram:
    q = replace(p, lo=box.zL_v, hi=box.zU_v)
    if box.local_cuts is None:
        return q
    X, t = box.local_cuts
    X = np.atleast_2d(np.asarray(X, dtype=float))
    t = np.asarray(t, dtype=float).ravel()
    G = np.vstack([p.lin_G, X]) if p.lin_G.shape[0] else X
    h = np.concatenate([p.lin_h, t])
    tags = tuple(p.lin_tags) + (TAG_LOCAL_CUT,) * X.shape[0]
    return replace(q, lin_G=G, lin_h=h, lin_tags=tags)


def _branch_and_cut(base: ConeProgram, *, scenario_mode: bool,
                    sc: Optional[ScenarioData] = None, y=None,
                    scenario_index=None, conic_tol: float = 1e-8,
                    sub_tol: float = 1e-8, gap_limit: Optional[float] = None,
                    deadline: Optional[float] = None,
                    cut_callback: Optional[Callable] = None,
                    log: Optional[list] = None) -> BcResult:
    integers = list(base.integers)
    for i in integers:
        if not (np.isfinite(base.lo[i]) and np.isfinite(base.hi[i])):
            raise ValueError(f"integer variable {i} must have finite bounds")

    def solve_node(box: NodeBox) -> ConicSolution:
        sol = solve_conic(_with_box(base, box), tol=conic_tol)
        rounds = 0
        while sol.status == OPTIMAL and cut_callback is not None and rounds < 5:
            new_rows = cut_callback(box, sol)
            if not new_rows:
                break
            X = np.atleast_2d(np.array([row for row, _ in new_rows], dtype=float))
            t = np.array([rhs for _, rhs in new_rows], dtype=float)
            if box.local_cuts is not None:
                X = np.vstack([box.local_cuts[0], X])
                t = np.concatenate([box.local_cuts[1], t])
            box = NodeBox(box.zL_v, box.zU_v, (X, t))
            sol = solve_conic(_with_box(base, box), tol=conic_tol)
            rounds += 1
        # the callback may have replaced the box; keep them paired
        solve_node.last_box = box
        return sol

    root_box = NodeBox(base.lo.copy(), base.hi.copy())
    rel = solve_node(root_box)
    root_box = solve_node.last_box
    if rel.status == INFEASIBLE:
        if scenario_mode:
            raise AssumptionViolation(scenario_index, y, root_box.zL_v, root_box.zU_v)
        return BcResult(status=BC_INFEASIBLE, incumbent=None, obj=np.inf,
                        leaves=[], nodes_explored=1, bound=np.inf)
    if rel.status != OPTIMAL:
        raise SolverNumericalError(f"root relaxation: {rel.message or rel.status}")

    heap = []
    seq = 0
    heapq.heappush(heap, (rel.obj, seq, _Node(root_box, rel)))
    ub = np.inf
    incumbent = None
    leaves = []
    nodes = 1
    leaf_seq = 0
    flushed = False

    def prune_eps():
        return sub_tol * (1.0 + abs(ub)) if np.isfinite(ub) else 0.0

    def add_leaf(node: _Node, reason: str):
        nonlocal leaf_seq
        leaves.append(LeafRecord(leaf_id=leaf_seq, box=node.box,
                                 relaxation=node.relaxation, fathom_reason=reason))
        if log is not None:
            log.append(f"leaf {leaf_seq} reason={reason} bound={node.relaxation.obj:.9g} "
                       f"box={node.box.zL_v.tolist()}..{node.box.zU_v.tolist()}")
        leaf_seq += 1

    def try_incumbent(node: _Node):
        nonlocal ub, incumbent
        x = node.relaxation.x
        snapped = x.copy()
        if integers:
            snapped[integers] = np.round(snapped[integers])
        if np.max(np.abs(snapped - x), initial=0.0) > 1e-9:
            # re-solve with integers pinned for an exact completion value
            box = NodeBox(node.box.zL_v.copy(), node.box.zU_v.copy(), node.box.local_cuts)
            box.zL_v[integers] = snapped[integers]
            box.zU_v[integers] = snapped[integers]
            ref = solve_conic(_with_box(base, box), tol=conic_tol)
            if ref.status == OPTIMAL:
                x, val = ref.x, ref.obj
            else:
                x, val = snapped, float(base.c @ snapped)
        else:
            val = node.relaxation.obj
        if val < ub:
            ub = val
            incumbent = x.copy()

    while heap:
        bound, _, node = heapq.heappop(heap)
        if deadline is not None and time.monotonic() > deadline:
            add_leaf(node, "bound")
            flushed = True
            while heap:
                _, _, rest = heapq.heappop(heap)
                add_leaf(rest, "bound")
            break
        if np.isfinite(ub):
            if bound >= ub - prune_eps():
                add_leaf(node, "bound")
                continue
            if gap_limit is not None and (ub - bound) <= gap_limit * (1.0 + abs(ub)):
                add_leaf(node, "bound")
                flushed = True
                while heap:
                    _, _, rest = heapq.heappop(heap)
                    add_leaf(rest, "bound")
                break

        x = node.relaxation.x
        free = [i for i in integers
                if node.box.zU_v[i] - node.box.zL_v[i] > 0.5]
        if not free and integers:
            add_leaf(node, "bounds-fixed")
            try_incumbent(node)
            continue
        frac = np.array([abs(x[i] - round(x[i])) for i in free]) if free else np.zeros(0)
        if frac.size == 0 or np.max(frac) <= INTEGRALITY_TOL:
            add_leaf(node, "integral")
            try_incumbent(node)
            continue

        bvar = free[int(np.argmax(frac))]
        fl = math.floor(x[bvar])
        fl = min(max(fl, int(node.box.zL_v[bvar])), int(node.box.zU_v[bvar]) - 1)
        for lo_i, hi_i in ((node.box.zL_v[bvar], float(fl)),
                           (float(fl + 1), node.box.zU_v[bvar])):
            zl = node.box.zL_v.copy()
            zu = node.box.zU_v.copy()
            zl[bvar], zu[bvar] = lo_i, hi_i
            cbox = NodeBox(zl, zu, node.box.local_cuts)
            crel = solve_node(cbox)
            cbox = solve_node.last_box
            nodes += 1
            if crel.status == INFEASIBLE:
                if scenario_mode:
                    raise AssumptionViolation(scenario_index, y, zl, zu)
                continue
            if crel.status != OPTIMAL:
                raise SolverNumericalError(
                    f"node relaxation failed ({crel.message or crel.status}) "
                    f"on box {zl.tolist()}..{zu.tolist()}")
            seq += 1
            heapq.heappush(heap, (crel.obj, seq, _Node(cbox, crel)))

    status = BC_GAP_LIMIT if flushed else BC_OPTIMAL
    if incumbent is None and not flushed:
        # every node was fathomed by bound against +inf: impossible unless
        # the tree is empty; treat defensively as numerical trouble
        if not leaves:
            return BcResult(status=BC_INFEASIBLE, incumbent=None, obj=np.inf,
                            leaves=[], nodes_explored=nodes, bound=np.inf)
    lb = min((lf.relaxation.obj for lf in leaves), default=np.inf)
    result = BcResult(status=status, incumbent=incumbent,
                      obj=ub, leaves=leaves, nodes_explored=nodes,
                      bound=min(lb, ub))

    if scenario_mode and sc is not None:
        from .cuts import node_cut_from_duals
        for lf in leaves:
            cut = node_cut_from_duals(lf, sc)
            lf.R, lf.S = cut.R, cut.S
    return result


def solve_subproblem(sc: ScenarioData, y, opts=None, *, scenario_index=None,
                     gap_limit: Optional[float] = None,
                     deadline: Optional[float] = None,
                     cut_callback: Optional[Callable] = None,
                     log: Optional[list] = None) -> BcResult:
    """Branch-and-cut on Sub(y, w); returns the incumbent and the leaf ledger."""
    conic_tol = getattr(opts, "conic_tol", 1e-8) if opts is not None else 1e-8
    sub_tol = getattr(opts, "sub_tol", 1e-8) if opts is not None else 1e-8
    base = scenario_relaxation(sc, y)
    return _branch_and_cut(base, scenario_mode=True, sc=sc, y=y,
                           scenario_index=scenario_index, conic_tol=conic_tol,
                           sub_tol=sub_tol, gap_limit=gap_limit,
                           deadline=deadline, cut_callback=cut_callback, log=log)


def solve_monolithic(p: ConeProgram, *, conic_tol: float = 1e-8,
                     sub_tol: float = 1e-8, gap_limit: Optional[float] = None,
                     deadline: Optional[float] = None,
                     cut_callback: Optional[Callable] = None,
                     log: Optional[list] = None) -> BcResult:
    """Branch-and-cut on an arbitrary bounded mixed-integer cone program."""
    return _branch_and_cut(p, scenario_mode=False, conic_tol=conic_tol,
                           sub_tol=sub_tol, gap_limit=gap_limit,
                           deadline=deadline, cut_callback=cut_callback, log=log)
