"""Main decomposition loop: master-in-binaries, per-scenario branch-and-cut,
disjunctive scenario cuts, worst-case reweighting, and sandwich bounds.

Each main iteration evaluates one first-stage candidate y_k: every scenario
subproblem is solved by branch-and-cut, its leaf duals are turned into one
disjunctive cut, the ambiguity set reweights the cut values to pick p_k, and
the p_k-weighted aggregate joins the master.  U tracks the best certified
objective c.y_k + worst-case expectation of the realized recourse values
(recomputed fresh so U stays valid even under gap-limited subsolves); L is
the master optimum.  Terminates when U - L <= epsilon.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Set, Tuple

import numpy as np

from .ambiguity import worst_case_distribution
from .conic import ConeProgram, SocRow, TAG_OTHER
from .cuts import (AggregatedCut, NodeCut, ScenarioCut, aggregate,
                   build_and_solve_disjunctive_lp, is_duplicate)
from .misocp import (BC_GAP_LIMIT, BC_INFEASIBLE, BC_OPTIMAL,
                     SolverNumericalError, solve_monolithic, solve_subproblem)
from .model import FirstStage, Instance, SolveOptions, augment_with_slacks, \
    iter_binary_points

log = logging.getLogger("dr2s.driver")

STATUS_OPTIMAL = "optimal"
STATUS_GAP_LIMIT = "gap-limit"
STATUS_INFEASIBLE = "infeasible"

#: hard safety net; finite convergence normally stops the loop much earlier
MAX_OUTER_ITERATIONS = 100000

#: enumerate-mode master is exhaustive over binaries; refuse silly sizes
ENUMERATE_MAX_VARS = 25


@dataclass
class MasterState:
    """Mutable loop state: cut pool, sandwich bounds, incumbent, bookkeeping."""
    cuts: List[AggregatedCut] = field(default_factory=list)
    L: float = -math.inf
    U: float = math.inf
    incumbent: Optional[np.ndarray] = None
    incumbent_obj: float = math.inf
    iteration: int = 0
    visited: Set[Tuple[int, ...]] = field(default_factory=set)


@dataclass
class IterationRecord:
    k: int
    y: list
    eta: Optional[float]
    L: float
    U: float
    p: list
    cut_values: list
    realized: list
    scenario_cuts: list          # per-scenario {lam, zeta, degraded, leaves}
    agg_f: list
    agg_h: float
    agg_added: bool
    master_seconds: float
    scenario_seconds: float
    wall: float

    def to_dict(self) -> dict:
        return {
            "k": self.k, "y": self.y, "eta": self.eta,
            "L": _num(self.L), "U": _num(self.U), "p": self.p,
            "cut_values": self.cut_values, "realized": self.realized,
            "scenario_cuts": self.scenario_cuts,
            "agg_f": self.agg_f, "agg_h": self.agg_h,
            "agg_added": self.agg_added,
            "master_seconds": self.master_seconds,
            "scenario_seconds": self.scenario_seconds,
            "wall": self.wall,
        }


@dataclass
class SolveTrace:
    records: List[IterationRecord] = field(default_factory=list)
    status: str = STATUS_GAP_LIMIT
    L: float = -math.inf
    U: float = math.inf
    iterations: int = 0
    wall_time: float = 0.0
    masT: float = 0.0
    scenT: float = 0.0
    y_star: Optional[list] = None
    objective: Optional[float] = None
    message: str = ""

    def report(self) -> dict:
        return {
            "status": self.status,
            "objective": _num(self.objective),
            "y_star": self.y_star,
            "L": _num(self.L),
            "U": _num(self.U),
            "iterations": self.iterations,
            "wall_time": self.wall_time,
            "masT": self.masT,
            "scenT": self.scenT,
            "message": self.message,
        }


def _num(v):
    if v is None:
        return None
    v = float(v)
    if math.isinf(v) or math.isnan(v):
        return None
    return v


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def eta_guard(instance: Instance) -> float:
    """Crude but valid bound on |Q(y, w)|: recourse costs times box mass."""
    total = 0.0
    for sc in instance.scenarios:
        qmax = float(np.max(np.abs(sc.q), initial=0.0))
        total += qmax * (float(np.sum(np.abs(sc.zU))) + float(np.sum(np.abs(sc.zL))))
    return total + 1.0


def _master_enumerate(fs: FirstStage, cuts: Sequence[AggregatedCut],
                      M0: float):
    if fs.n > ENUMERATE_MAX_VARS:
        raise ValueError(
            f"enumerate master mode is exhaustive over 2^{fs.n} binaries; "
            f"use master_mode='branch-and-cut' for n > {ENUMERATE_MAX_VARS}")
    best = None
    for y in iter_binary_points(fs.n):
        if not fs.feasible(y):
            continue
        eta = -M0
        if cuts:
            eta = max(eta, max(c.value_at(y) for c in cuts))
        val = float(fs.c @ y) + eta
        if best is None or val < best[0] - 1e-12:
            best = (val, np.asarray(y, dtype=float).copy(), eta)
    return best


def _master_bc(fs: FirstStage, cuts: Sequence[AggregatedCut], M0: float,
               *, conic_tol: float, sub_tol: float,
               deadline: Optional[float]):
    n = fs.n
    rows, rhs = [], []
    F = np.atleast_2d(fs.F) if fs.F.size else np.zeros((0, n))
    for i in range(F.shape[0]):
        rows.append(np.concatenate([F[i], [0.0]]))
        rhs.append(float(fs.a[i]))
    for cut in cuts:
        rows.append(np.concatenate([-cut.f, [1.0]]))
        rhs.append(float(cut.h))
    socs = []
    for s in fs.socs:
        A = np.hstack([s.A, np.zeros((s.A.shape[0], 1))])
        g = np.concatenate([s.g, [0.0]])
        socs.append(SocRow(A=A, b=s.b, g=g, d=s.d))
    G = np.array(rows) if rows else np.zeros((0, n + 1))
    h = np.array(rhs) if rhs else np.zeros(0)
    prog = ConeProgram(
        c=np.concatenate([fs.c, [1.0]]),
        lin_G=G, lin_h=h, lin_tags=(TAG_OTHER,) * G.shape[0],
        socs=tuple(socs),
        lo=np.concatenate([np.zeros(n), [-M0]]),
        hi=np.concatenate([np.ones(n), [math.inf]]),
        integers=tuple(range(n)))
    res = solve_monolithic(prog, conic_tol=conic_tol, sub_tol=sub_tol,
                           deadline=deadline)
    if res.status == BC_INFEASIBLE:
        return None
    if res.incumbent is None:
        if res.status == BC_GAP_LIMIT:
            return float(res.bound), None, None
        raise SolverNumericalError(
            f"master branch-and-cut returned {res.status} with no incumbent")
    y = np.clip(np.round(res.incumbent[:n]), 0.0, 1.0)
    eta = float(res.incumbent[n])
    return float(res.bound), y, eta


def _solve_master(fs, cuts, M0, opts: SolveOptions, deadline):
    if opts.master_mode == "enumerate":
        return _master_enumerate(fs, cuts, M0)
    return _master_bc(fs, cuts, M0, conic_tol=opts.conic_tol,
                      sub_tol=opts.sub_tol, deadline=deadline)


def _thread_count(opts: SolveOptions, n_scenarios: int) -> int:
    if not opts.parallel_scenarios:
        return 1
    env = os.environ.get("DR2S_THREADS")
    t = None
    if env is not None:
        try:
            t = int(env)
        except ValueError:
            log.warning("ignoring non-integer DR2S_THREADS=%r", env)
    if t is None:
        t = opts.threads
    if t is None:
        t = min(n_scenarios, os.cpu_count() or 1)
    return max(1, min(int(t), n_scenarios))


def _check_initial_y(fs: FirstStage, initial_y) -> np.ndarray:
    y = np.asarray(initial_y, dtype=float).ravel()
    if y.shape[0] != fs.n:
        raise ValueError(f"initial_y has {y.shape[0]} entries, expected {fs.n}")
    if np.max(np.abs(y - np.round(y))) > 1e-9 or np.min(y) < -1e-9 \
            or np.max(y) > 1 + 1e-9:
        raise ValueError("initial_y must be a 0/1 vector")
    y = np.round(y)
    if not fs.feasible(y):
        raise ValueError("initial_y violates the first-stage constraints")
    return y


def run(instance: Instance, opts: Optional[SolveOptions] = None):
    """Solve the instance; returns (y_star, objective, trace)."""
    opts = opts if opts is not None else SolveOptions()
    opts.check()
    if opts.slack_augment:
        instance = augment_with_slacks(instance, opts.slack_penalty)
    fs = instance.first_stage
    scens = instance.scenarios
    amb = instance.ambiguity

    t_start = time.perf_counter()
    deadline = (t_start + opts.time_limit_seconds
                if opts.time_limit_seconds is not None else None)
    state = MasterState()
    trace = SolveTrace()
    M0 = eta_guard(instance)
    threads = _thread_count(opts, len(scens))

    def eps_now() -> float:
        if opts.epsilon is not None:
            return opts.epsilon
        if math.isfinite(state.U):
            return 1e-6 * (1.0 + abs(state.U))
        return 1e-6

    trace_fh = open(opts.trace_path, "w") if opts.trace_path else None

    def emit(rec: IterationRecord):
        trace.records.append(rec)
        if trace_fh is not None:
            trace_fh.write(json.dumps(rec.to_dict(), default=_jsonable) + "\n")
            trace_fh.flush()

    def scenario_phase(i: int, y_k: np.ndarray, k: int):
        gap = None
        if opts.partial_subsolve and k <= opts.partial_subsolve:
            gap = opts.partial_gap
        res = solve_subproblem(scens[i], y_k, opts, scenario_index=i,
                               gap_limit=gap, deadline=deadline)
        node_cuts = [NodeCut(R=l.R, S=l.S, leaf_id=l.leaf_id)
                     for l in res.leaves]
        scut = build_and_solve_disjunctive_lp(
            node_cuts, fs.F, fs.a, y_k, conic_tol=opts.conic_tol,
            scenario=i, iteration=k)
        return res, node_cuts, scut

    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    status = None
    message = ""
    try:
        # first candidate: caller-provided seed, else the cut-free master
        if opts.initial_y is not None:
            y_next = _check_initial_y(fs, opts.initial_y)
            eta_next: Optional[float] = None
        else:
            t0 = time.perf_counter()
            m = _solve_master(fs, state.cuts, M0, opts, deadline)
            trace.masT += time.perf_counter() - t0
            if m is None:
                status, message = STATUS_INFEASIBLE, "first stage infeasible"
                y_next, eta_next = None, None
            else:
                L0, y_next, eta_next = m
                state.L = max(state.L, L0)
                if y_next is None:
                    status = STATUS_GAP_LIMIT
                    message = "time limit during initial master solve"

        while status is None:
            state.iteration += 1
            k = state.iteration
            if k > MAX_OUTER_ITERATIONS:
                status = STATUS_GAP_LIMIT
                message = "iteration safety cap reached"
                break
            y_k = y_next
            eta_k = eta_next
            ytup = tuple(int(round(v)) for v in y_k)
            repeat = ytup in state.visited
            state.visited.add(ytup)

            t0 = time.perf_counter()
            if pool is not None:
                results = list(pool.map(lambda i: scenario_phase(i, y_k, k),
                                        range(len(scens))))
            else:
                results = [scenario_phase(i, y_k, k) for i in range(len(scens))]
            t_scen = time.perf_counter() - t0
            trace.scenT += t_scen

            realized = [float(r.obj) for r, _, _ in results]
            scen_cuts = [sc for _, _, sc in results]
            cut_values = [sc.value_at(y_k) for sc in scen_cuts]
            wc_cut = worst_case_distribution(cut_values, amb)
            agg = aggregate(scen_cuts, wc_cut.p)
            added = not is_duplicate(agg, state.cuts)
            if added:
                state.cuts.append(agg)

            if all(math.isfinite(v) for v in realized):
                wc_real = worst_case_distribution(realized, amb)
                cand = float(fs.c @ y_k) + wc_real.value
                if cand < state.U:
                    state.U = cand
                    state.incumbent = y_k.copy()
                    state.incumbent_obj = cand

            t0 = time.perf_counter()
            m = _solve_master(fs, state.cuts, M0, opts, deadline)
            t_mas = time.perf_counter() - t0
            trace.masT += t_mas
            if m is None:
                status, message = STATUS_INFEASIBLE, "first stage infeasible"
                break
            L_new, y_next, eta_next = m
            state.L = max(state.L, L_new)
            master_timed_out = y_next is None

            emit(IterationRecord(
                k=k, y=[int(v) for v in ytup], eta=_num(eta_k),
                L=state.L, U=state.U, p=[float(v) for v in wc_cut.p],
                cut_values=[float(v) for v in cut_values],
                realized=realized,
                scenario_cuts=[{
                    "scenario": sc.scenario,
                    "lam": sc.lam.tolist(), "zeta": sc.zeta,
                    "degraded": sc.degraded,
                    "leaves": [{"leaf_id": c.leaf_id, "R": c.R.tolist(),
                                "S": c.S} for c in ncuts],
                } for (_, ncuts, sc) in results],
                agg_f=agg.f.tolist(), agg_h=agg.h, agg_added=added,
                master_seconds=t_mas, scenario_seconds=t_scen,
                wall=time.perf_counter() - t_start))

            if state.U - state.L <= eps_now():
                status = STATUS_OPTIMAL
                break
            if master_timed_out:
                status = STATUS_GAP_LIMIT
                message = "time limit during master solve"
                break
            if deadline is not None and time.perf_counter() >= deadline:
                status = STATUS_GAP_LIMIT
                message = "time limit reached"
                break
            if k >= opts.max_iters:
                status = STATUS_GAP_LIMIT
                message = "iteration limit reached"
                break
            if repeat and not added:
                status = STATUS_GAP_LIMIT
                message = "no progress: repeated candidate with duplicate cut"
                break
    finally:
        if pool is not None:
            pool.shutdown(wait=False)
        if trace_fh is not None:
            trace_fh.close()

    trace.status = status
    trace.message = message
    trace.L = state.L
    trace.U = state.U
    trace.iterations = len(trace.records)
    trace.wall_time = time.perf_counter() - t_start
    if state.incumbent is not None:
        trace.y_star = [int(round(v)) for v in state.incumbent]
        trace.objective = state.incumbent_obj
    if opts.report_path:
        with open(opts.report_path, "w") as fh:
            json.dump(trace.report(), fh, indent=2, default=_jsonable)
            fh.write("\n")
    y_star = state.incumbent.copy() if state.incumbent is not None else None
    obj = state.incumbent_obj if state.incumbent is not None else math.inf
    return y_star, obj, trace
