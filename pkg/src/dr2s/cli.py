"""Command-line front end: instance I/O, the two instance generators (a small
worked 4-scenario example and a randomized service-center location family),
an extensive-form builder for the zero-ambiguity case, and report rendering.

Verbs: solve / gen illustrative / gen rfl / extensive / check.
Exit codes: 0 optimal, 2 gap-limit, 3 infeasible, 4 input error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .conic import ConeProgram, SocRow, TAG_OTHER
from .driver import (STATUS_GAP_LIMIT, STATUS_INFEASIBLE, STATUS_OPTIMAL, run)
from .misocp import AssumptionViolation, SolverNumericalError
from .model import (AmbiguitySet, FirstStage, Instance, KIND_SINGLETON,
                    KIND_TV, ScenarioData, ScenarioSoc, SolveOptions,
                    load_instance, save_instance, validate)

EXIT_OPTIMAL = 0
EXIT_GAP_LIMIT = 2
EXIT_INFEASIBLE = 3
EXIT_INPUT = 4


# ----------------------------------------------------------------------------
# generators

def gen_illustrative() -> Instance:
    """The small worked example: two binary first-stage decisions, four
    scenarios, one mixed second stage (x1 binary, x2 in [0,1]) each."""
    def scen(q, g, d):
        return ScenarioData(
            q=np.array(q), W=np.array([[1.0, 1.0]]),
            T=np.array([[-0.5, -0.5]]), r=np.array([0.0]),
            soc_blocks=[ScenarioSoc(A=np.eye(2), B=0.5 * np.eye(2),
                                    b=np.zeros(2), g=np.array(g), d=d)],
            l1=1, l2=1, zL=np.zeros(2), zU=np.ones(2))

    return Instance(
        first_stage=FirstStage(c=np.array([10.0, 12.0]),
                               F=np.array([[1.0, 1.0]]), a=np.array([1.0]),
                               socs=()),
        scenarios=[scen((2.0, 1.0), (0.5, 1.0), 1.0),
                   scen((1.5, 1.5), (0.5, 1.0), 1.0),
                   scen((1.2, 1.5), (0.5, 1.0), 1.5),
                   scen((1.0, 1.0), (0.5, 1.5), 1.0)],
        ambiguity=AmbiguitySet(kind=KIND_TV, p0=np.full(4, 0.25), radius=0.1),
        name="illustrative")


@dataclass(frozen=True)
class RflParams:
    """Service-center location family: |sites| candidate locations doubling
    as customer sites, budget-limited openings, per-scenario random demand."""
    sites: int
    budget: int
    scenarios: int
    seed: int = 0
    d_tv: float = 0.1
    square_side: float = 15.0
    L0: float = 5.0
    gamma: float = 0.2
    b_coef: float = 0.2
    demand_range: Tuple[float, float] = (40.0, 60.0)
    capacity_range: Tuple[float, float] = (100.0, 180.0)
    a_scale: float = 0.3
    beta_self: float = 10.0

    def check(self):
        if self.sites < 1 or self.scenarios < 1:
            raise ValueError("sites and scenarios must be positive")
        if not (1 <= self.budget <= self.sites):
            raise ValueError("budget must satisfy 1 <= budget <= sites")
        for name in ("demand_range", "capacity_range"):
            lo, hi = getattr(self, name)
            if not (0 <= lo <= hi):
                raise ValueError(f"{name} must be ordered and nonnegative")
        if self.d_tv < 0 or self.d_tv > 2:
            raise ValueError("d_tv must lie in [0, 2]")


def _sym_sqrt(S: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    return V @ np.diag(np.sqrt(np.maximum(w, 1e-12))) @ V.T


def _sym_inv_sqrt(S: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    return V @ np.diag(1.0 / np.sqrt(np.maximum(w, 1e-12))) @ V.T


def gen_rfl(params: RflParams) -> Instance:
    """Utility-maximizing service-center location with random demand, written
    in the solver's minimization form (all utility terms negated).

    Per (customer i, center j) pair the second stage carries a binary switch
    s, two utility parts U1/U2 with their SOC rows, and two auxiliary vectors
    v1/v2 (their sum plays the role of the pair's allocation profile); per
    pair there is one shipped quantity x_ij, capped by capacity-if-open and
    by demand.
    """
    params.check()
    N = params.sites
    root = np.random.SeedSequence(params.seed)
    ss_coords, ss_caps, ss_pairs, ss_dem = root.spawn(4)

    rng_coords = np.random.default_rng(ss_coords)
    coords = rng_coords.uniform(0.0, params.square_side, (N, 2))
    for _attempt in range(100):
        dist = np.linalg.norm(coords[:, None, :] - coords[None, :, :], axis=2)
        empty = [i for i in range(N) if not np.any(dist[i] <= params.L0)]
        if not empty:
            break
        for i in empty:
            coords[i] = rng_coords.uniform(0.0, params.square_side, 2)
    else:
        raise RuntimeError("could not draw site geometry with nonempty "
                           "effective sets after 100 retries")

    caps = np.random.default_rng(ss_caps).uniform(*params.capacity_range, N)
    pair_seqs = ss_pairs.spawn(N * N)
    dem_seqs = ss_dem.spawn(params.scenarios)

    betas = np.zeros((N, N, N))      # betas[i, j] is the pair's weight vector
    M1 = np.zeros((N, N, N, N))      # scaled inverse square roots
    M2 = np.zeros((N, N, N, N))      # scaled square roots
    sq_gamma = math.sqrt(params.gamma)
    for i in range(N):
        for j in range(N):
            rng = np.random.default_rng(pair_seqs[i * N + j])
            Q = rng.uniform(0.0, 1.0, (N, N))
            Sig = Q.T @ Q
            A = np.eye(N) + params.a_scale * Sig
            M1[i, j] = params.b_coef * _sym_inv_sqrt(A)
            M2[i, j] = sq_gamma * _sym_sqrt(Sig)
            if dist[i, j] <= params.L0:
                b = 1.0 - dist[i] / params.L0
                b[j] = params.beta_self * (1.0 - dist[i, j] / params.L0)
                betas[i, j] = b

    # second-stage layout: all pair binaries s first, then per pair
    # (U1, U2, v1[N], v2[N]), then the shipped quantities x.
    P = N * N
    blk = 2 + 2 * N
    nx = P + P * blk + P
    l1 = P
    l2 = nx - P

    def s_ix(p):
        return p

    def u1_ix(p):
        return P + p * blk

    def u2_ix(p):
        return P + p * blk + 1

    def v1_ix(p, k):
        return P + p * blk + 2 + k

    def v2_ix(p, k):
        return P + p * blk + 2 + N + k

    def x_ix(p):
        return P + P * blk + p

    n = N  # first-stage dimension
    scens = []
    for w in range(params.scenarios):
        D = np.random.default_rng(dem_seqs[w]).uniform(*params.demand_range, N)
        R = np.minimum(D[:, None], caps[None, :])      # R[i, j]

        rows, Ty, rhs = [], [], []

        def add(wrow, trow, r):
            rows.append(wrow)
            Ty.append(trow)
            rhs.append(r)

        q = np.zeros(nx)
        zL = np.zeros(nx)
        zU = np.ones(nx)
        socs = []
        for i in range(N):
            for j in range(N):
                p = i * N + j
                r_ij = float(R[i, j])
                beta = betas[i, j]
                # outside the service radius beta vanishes, and U >= 0 with
                # U <= -||M v|| pins the whole block at zero; writing that into
                # the bounds lets the presolve retire the cone block instead of
                # leaving an interior-free constraint in every relaxation
                live = float(dist[i, j] <= params.L0)
                ubar = live * r_ij * float(np.sum(np.maximum(beta, 0.0)))
                q[u1_ix(p)] = -1.0
                q[u2_ix(p)] = -1.0
                zU[u1_ix(p)] = ubar
                zU[u2_ix(p)] = ubar
                zU[s_ix(p)] = live
                for k in range(N):
                    zU[v1_ix(p, k)] = live * r_ij
                    zU[v2_ix(p, k)] = live * r_ij
                zU[x_ix(p)] = live * r_ij

                for k in range(N):
                    # v1_k <= R s
                    row = np.zeros(nx)
                    row[v1_ix(p, k)] = -1.0
                    row[s_ix(p)] = r_ij
                    add(row, np.zeros(n), 0.0)
                    # v2_k <= R (1 - s)
                    row = np.zeros(nx)
                    row[v2_ix(p, k)] = -1.0
                    row[s_ix(p)] = -r_ij
                    add(row, np.zeros(n), -r_ij)
                    # v1_k + v2_k <= R y_k
                    row = np.zeros(nx)
                    row[v1_ix(p, k)] = -1.0
                    row[v2_ix(p, k)] = -1.0
                    t = np.zeros(n)
                    t[k] = r_ij
                    add(row, t, 0.0)
                    # v1_k + v2_k <= x_ij
                    row = np.zeros(nx)
                    row[v1_ix(p, k)] = -1.0
                    row[v2_ix(p, k)] = -1.0
                    row[x_ix(p)] = 1.0
                    add(row, np.zeros(n), 0.0)
                    # v1_k + v2_k >= x_ij - R (1 - y_k)
                    row = np.zeros(nx)
                    row[v1_ix(p, k)] = 1.0
                    row[v2_ix(p, k)] = 1.0
                    row[x_ix(p)] = -1.0
                    t = np.zeros(n)
                    t[k] = -r_ij
                    add(row, t, -r_ij)

                # U1 <= beta.v1 - || M1 v1 ||
                A1 = np.zeros((N, nx))
                g1 = np.zeros(nx)
                g1[u1_ix(p)] = -1.0
                for k in range(N):
                    A1[:, v1_ix(p, k)] = M1[i, j][:, k]
                    g1[v1_ix(p, k)] = beta[k]
                socs.append(ScenarioSoc(A=A1, B=np.zeros((N, n)),
                                        b=np.zeros(N), g=g1, d=0.0))
                # U2 <= beta.v2 - || M2 v2 ||
                A2 = np.zeros((N, nx))
                g2 = np.zeros(nx)
                g2[u2_ix(p)] = -1.0
                for k in range(N):
                    A2[:, v2_ix(p, k)] = M2[i, j][:, k]
                    g2[v2_ix(p, k)] = beta[k]
                socs.append(ScenarioSoc(A=A2, B=np.zeros((N, n)),
                                        b=np.zeros(N), g=g2, d=0.0))

        for j in range(N):
            # capacity: sum_i x_ij <= C_j y_j
            row = np.zeros(nx)
            for i in range(N):
                row[x_ix(i * N + j)] = -1.0
            t = np.zeros(n)
            t[j] = float(caps[j])
            add(row, t, 0.0)
        for i in range(N):
            # demand: sum_j x_ij <= D_i
            row = np.zeros(nx)
            for j in range(N):
                row[x_ix(i * N + j)] = -1.0
            add(row, np.zeros(n), -float(D[i]))

        scens.append(ScenarioData(
            q=q, W=np.array(rows), T=np.array(Ty), r=np.array(rhs),
            soc_blocks=socs, l1=l1, l2=l2, zL=zL, zU=zU))

    kind = KIND_SINGLETON if params.d_tv == 0.0 else KIND_TV
    amb = AmbiguitySet(kind=kind, p0=np.full(params.scenarios,
                                             1.0 / params.scenarios),
                       radius=float(params.d_tv))
    fs = FirstStage(c=np.zeros(N), F=-np.ones((1, N)),
                    a=np.array([-float(params.budget)]), socs=())
    name = (f"rfl-s{params.sites}-b{params.budget}-w{params.scenarios}"
            f"-seed{params.seed}-dtv{params.d_tv:g}")
    return Instance(first_stage=fs, scenarios=scens, ambiguity=amb, name=name)


# ----------------------------------------------------------------------------
# extensive form

def build_extensive_form(instance: Instance) -> ConeProgram:
    """Monolithic mixed-integer cone program over (y, x^1, ..., x^m) for the
    zero-ambiguity case: objective c.y + sum_w p0_w q_w . x^w with every
    scenario's constraint block replicated against the shared y."""
    amb = instance.ambiguity
    if not (amb.kind == KIND_SINGLETON or
            (amb.kind == KIND_TV and amb.radius == 0.0)):
        raise ValueError("extensive form requires a singleton ambiguity set "
                         "(total-variation radius 0); got "
                         f"kind={amb.kind!r} radius={getattr(amb, 'radius', None)}")
    fs = instance.first_stage
    n = fs.n
    offs = [n]
    for sc in instance.scenarios:
        offs.append(offs[-1] + sc.nx)
    ntot = offs[-1]

    c = np.zeros(ntot)
    c[:n] = fs.c
    lo = np.zeros(ntot)
    hi = np.ones(ntot)
    integers = list(range(n))
    rows, rhs = [], []
    socs = []

    F = np.atleast_2d(fs.F) if fs.F.size else np.zeros((0, n))
    for i in range(F.shape[0]):
        row = np.zeros(ntot)
        row[:n] = F[i]
        rows.append(row)
        rhs.append(float(fs.a[i]))
    for s in fs.socs:
        A = np.zeros((s.A.shape[0], ntot))
        A[:, :n] = s.A
        g = np.zeros(ntot)
        g[:n] = s.g
        socs.append(SocRow(A=A, b=s.b, g=g, d=s.d))

    for w, sc in enumerate(instance.scenarios):
        o = offs[w]
        pw = float(amb.p0[w])
        c[o:o + sc.nx] = pw * sc.q
        lo[o:o + sc.nx] = sc.zL
        hi[o:o + sc.nx] = sc.zU
        integers.extend(range(o, o + sc.l1))
        W = np.atleast_2d(sc.W) if sc.W.size else np.zeros((0, sc.nx))
        T = np.atleast_2d(sc.T) if sc.T.size else np.zeros((0, n))
        for i in range(W.shape[0]):
            row = np.zeros(ntot)
            row[:n] = T[i]
            row[o:o + sc.nx] = W[i]
            rows.append(row)
            rhs.append(float(sc.r[i]))
        for blk in sc.soc_blocks:
            A = np.zeros((blk.A.shape[0], ntot))
            A[:, :n] = blk.B
            A[:, o:o + sc.nx] = blk.A
            g = np.zeros(ntot)
            g[o:o + sc.nx] = blk.g
            socs.append(SocRow(A=A, b=blk.b, g=g, d=blk.d))

    G = np.array(rows) if rows else np.zeros((0, ntot))
    h = np.array(rhs) if rhs else np.zeros(0)
    return ConeProgram(c=c, lin_G=G, lin_h=h,
                       lin_tags=(TAG_OTHER,) * G.shape[0], socs=tuple(socs),
                       lo=lo, hi=hi, integers=tuple(integers))


def cone_program_to_dict(p: ConeProgram, name: str = "") -> dict:
    return {
        "format": 1,
        "kind": "mixed-integer-cone-program",
        "name": name,
        "c": p.c.tolist(),
        "lin_G": [row.tolist() for row in np.atleast_2d(p.lin_G)] if p.lin_G.size else [],
        "lin_h": p.lin_h.tolist(),
        "lin_tags": list(p.lin_tags),
        "socs": [{"A": [r.tolist() for r in s.A], "b": s.b.tolist(),
                  "g": s.g.tolist(), "d": float(s.d)} for s in p.socs],
        "lo": p.lo.tolist(),
        "hi": p.hi.tolist(),
        "integers": list(p.integers),
    }


# ----------------------------------------------------------------------------
# argument handling

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # keep the documented input-error exit code
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    p = _Parser(prog="dr2s", description=__doc__)
    sub = p.add_subparsers(dest="verb", required=True)

    ps = sub.add_parser("solve", help="solve an instance file")
    ps.add_argument("instance")
    ps.add_argument("--epsilon", type=float, default=None,
                    help="absolute optimality gap target")
    ps.add_argument("--time-limit", type=float, default=None, metavar="SEC")
    ps.add_argument("--threads", type=int, default=None)
    ps.add_argument("--master-mode", choices=["branch-and-cut", "enumerate"],
                    default="branch-and-cut")
    ps.add_argument("--partial-subsolve", type=int, default=0, metavar="N",
                    help="gap-limited subproblem solves for the first N iterations")
    ps.add_argument("--slack-augment", action="store_true",
                    help="add penalized recourse slacks so every subproblem is feasible")
    ps.add_argument("--initial-y", default=None, metavar="BITS",
                    help="comma-separated 0/1 first-stage seed, e.g. 1,0")
    ps.add_argument("--trace", default=None, metavar="OUT.JSONL")
    ps.add_argument("--report", default=None, metavar="OUT.JSON")

    pg = sub.add_parser("gen", help="write a generated instance")
    gsub = pg.add_subparsers(dest="what", required=True)
    gi = gsub.add_parser("illustrative", help="the small worked 4-scenario example")
    gi.add_argument("-o", "--output", required=True)
    gr = gsub.add_parser("rfl", help="randomized service-center location family")
    gr.add_argument("--sites", type=int, required=True)
    gr.add_argument("--budget", type=int, required=True)
    gr.add_argument("--scenarios", type=int, required=True)
    gr.add_argument("--seed", type=int, default=0)
    gr.add_argument("--dtv", type=float, default=0.1)
    gr.add_argument("-o", "--output", required=True)

    pe = sub.add_parser("extensive",
                        help="write the monolithic zero-ambiguity program")
    pe.add_argument("instance")
    pe.add_argument("-o", "--output", required=True)

    pc = sub.add_parser("check", help="validate an instance file")
    pc.add_argument("instance")
    return p


def _load(path: str) -> Instance:
    try:
        return load_instance(path)
    except (OSError, json.JSONDecodeError, ValueError, KeyError, TypeError) as e:
        raise SystemExit(_fail(f"cannot load {path}: {e}"))


def _fail(msg: str) -> int:
    print(f"dr2s: error: {msg}", file=sys.stderr)
    return EXIT_INPUT


def _cmd_solve(args) -> int:
    inst = _load(args.instance)
    report = validate(inst)
    for f in report.findings:
        print(f, file=sys.stderr)
    if not report.ok:
        return _fail("instance failed validation")

    initial_y = None
    if args.initial_y is not None:
        try:
            initial_y = tuple(int(tok) for tok in args.initial_y.split(","))
        except ValueError:
            return _fail(f"--initial-y must be comma-separated integers, "
                         f"got {args.initial_y!r}")
    opts = SolveOptions(
        epsilon=args.epsilon, time_limit_seconds=args.time_limit,
        threads=args.threads, master_mode=args.master_mode,
        partial_subsolve=args.partial_subsolve,
        slack_augment=args.slack_augment, initial_y=initial_y,
        trace_path=args.trace, report_path=args.report)
    try:
        y_star, obj, trace = run(inst, opts)
    except AssumptionViolation as e:
        print(f"dr2s: infeasible subproblem: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ValueError as e:
        return _fail(str(e))
    except SolverNumericalError as e:
        print(f"dr2s: numerical failure: {e}", file=sys.stderr)
        return 1

    for r in trace.records:
        print(f"iter {r.k:3d}  y={r.y}  L={r.L:.6f}  U={r.U:.6f}  "
              f"p={[round(v, 4) for v in r.p]}  "
              f"scen {r.scenario_seconds:.2f}s  master {r.master_seconds:.2f}s")
    print(f"status     {trace.status}")
    if y_star is not None:
        print(f"objective  {obj:.10g}")
        print(f"y*         {[int(round(v)) for v in y_star]}")
    print(f"bounds     L={trace.L:.10g} U={trace.U:.10g}")
    print(f"iterations {trace.iterations}")
    print(f"time       {trace.wall_time:.2f}s "
          f"(master {trace.masT:.2f}s, scenarios {trace.scenT:.2f}s)")
    if trace.message:
        print(f"note       {trace.message}")
    return {STATUS_OPTIMAL: EXIT_OPTIMAL,
            STATUS_GAP_LIMIT: EXIT_GAP_LIMIT,
            STATUS_INFEASIBLE: EXIT_INFEASIBLE}[trace.status]


def _cmd_gen(args) -> int:
    if args.what == "illustrative":
        inst = gen_illustrative()
    else:
        try:
            inst = gen_rfl(RflParams(sites=args.sites, budget=args.budget,
                                     scenarios=args.scenarios, seed=args.seed,
                                     d_tv=args.dtv))
        except ValueError as e:
            return _fail(str(e))
    save_instance(inst, args.output)
    print(f"wrote {args.output}: {inst.name} "
          f"({len(inst.scenarios)} scenarios, n={inst.first_stage.n})")
    return 0


def _cmd_extensive(args) -> int:
    inst = _load(args.instance)
    try:
        prog = build_extensive_form(inst)
    except ValueError as e:
        return _fail(str(e))
    with open(args.output, "w") as fh:
        json.dump(cone_program_to_dict(prog, name=inst.name + "+extensive"),
                  fh, indent=2)
        fh.write("\n")
    print(f"wrote {args.output}: {prog.n} variables, "
          f"{prog.m_lin} linear rows, {len(prog.socs)} cone rows, "
          f"{len(prog.integers)} integers")
    return 0


def _cmd_check(args) -> int:
    inst = _load(args.instance)
    report = validate(inst)
    for f in report.findings:
        print(f)
    n_err = len(report.errors())
    print(f"{inst.name or args.instance}: {len(report.findings)} findings, "
          f"{n_err} errors")
    return 0 if report.ok else EXIT_INPUT


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.verb == "solve":
            return _cmd_solve(args)
        if args.verb == "gen":
            return _cmd_gen(args)
        if args.verb == "extensive":
            return _cmd_extensive(args)
        if args.verb == "check":
            return _cmd_check(args)
    except SystemExit as e:
        code = e.code
        return code if isinstance(code, int) else EXIT_INPUT
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
