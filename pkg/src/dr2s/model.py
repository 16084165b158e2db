"""Domain types for distributionally robust two-stage stochastic MISOCP instances.

Canonical in-memory representation consumed by every other module, structural
validation of the standing assumptions (bounded second stage, nominal
distribution on the simplex, recourse spot checks), slack augmentation for
instances without complete recourse, and the versioned JSON exchange format.

Second-stage variable layout: the first ``l1`` variables are integer, the
remaining ``l2`` continuous.  All second-stage variables carry finite bounds;
that is what makes the branch-and-cut leaf boxes a partition of a finite
lattice, so unbounded instances are rejected outright instead of big-M'ed.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .conic import SocRow

KIND_SINGLETON = "singleton-nominal"
KIND_TV = "total-variation"
KIND_POLYHEDRAL = "polyhedral"
_KINDS = (KIND_SINGLETON, KIND_TV, KIND_POLYHEDRAL)

FORMAT_VERSION = 1


def _arr(a) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(a, dtype=float))


def _mat(a, ncols: int) -> np.ndarray:
    m = np.atleast_2d(_arr(a))
    if m.size == 0:
        m = np.zeros((0, ncols))
    return m


@dataclass(frozen=True)
class FirstStage:
    """min c.y  s.t.  F y >= a,  SOC rows on y,  y binary."""

    c: np.ndarray
    F: np.ndarray
    a: np.ndarray
    socs: tuple = ()

    def __post_init__(self):
        c = _arr(self.c).ravel()
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "F", _mat(self.F, c.shape[0]))
        object.__setattr__(self, "a", _arr(self.a).ravel())
        object.__setattr__(self, "socs", tuple(self.socs))

    @property
    def n(self) -> int:
        return self.c.shape[0]

    def feasible(self, y: np.ndarray, tol: float = 1e-9) -> bool:
        y = _arr(y)
        if self.F.shape[0] and np.any(self.F @ y < self.a - tol):
            return False
        return all(s.residual(y) >= -tol for s in self.socs)


@dataclass(frozen=True)
class ScenarioData:
    """One scenario's recourse program:

        Q(y, w) = min q.x  s.t.  W x >= r - T y,
                                 ||A_i x + B_i y + b_i|| <= g_i.x + d_i,
                                 zL <= x <= zU,  x[:l1] integer.

    soc_blocks entries are (A, B, b, g, d); all bounds finite.
    """

    q: np.ndarray
    W: np.ndarray
    T: np.ndarray
    r: np.ndarray
    soc_blocks: tuple
    l1: int
    l2: int
    zL: np.ndarray
    zU: np.ndarray

    def __post_init__(self):
        q = _arr(self.q).ravel()
        nx = q.shape[0]
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "W", _mat(self.W, nx))
        r = _arr(self.r).ravel()
        object.__setattr__(self, "r", r)
        T = np.atleast_2d(_arr(self.T))
        if T.size == 0:
            T = T.reshape(0, T.shape[1] if T.ndim == 2 else 0)
        object.__setattr__(self, "T", T)
        blocks = []
        for blk in self.soc_blocks:
            if isinstance(blk, ScenarioSoc):
                blocks.append(blk)
            else:
                A, B, b, g, d = blk
                blocks.append(ScenarioSoc(A, B, b, g, d))
        object.__setattr__(self, "soc_blocks", tuple(blocks))
        object.__setattr__(self, "l1", int(self.l1))
        object.__setattr__(self, "l2", int(self.l2))
        object.__setattr__(self, "zL", _arr(self.zL).ravel())
        object.__setattr__(self, "zU", _arr(self.zU).ravel())

    @property
    def nx(self) -> int:
        return self.q.shape[0]

    @property
    def integers(self) -> tuple:
        return tuple(range(self.l1))


@dataclass(frozen=True)
class ScenarioSoc:
    """||A x + B y + b|| <= g.x + d with separate x and y column blocks."""

    A: np.ndarray
    B: np.ndarray
    b: np.ndarray
    g: np.ndarray
    d: float

    def __post_init__(self):
        A = np.atleast_2d(_arr(self.A))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", np.atleast_2d(_arr(self.B)))
        object.__setattr__(self, "b", _arr(self.b).ravel())
        object.__setattr__(self, "g", _arr(self.g).ravel())
        object.__setattr__(self, "d", float(self.d))


@dataclass(frozen=True)
class AmbiguitySet:
    """Convex set of probability vectors over the scenario index set.

    kinds: singleton-nominal {p0}; total-variation {p : sum|p - p0| <= radius}
    (the unhalved absolute-sum convention); polyhedral {p : C p <= b} meeting
    the simplex.
    """

    kind: str
    p0: np.ndarray
    radius: float = 0.0
    rows: Optional[tuple] = None  # (C, b) for the polyhedral kind

    def __post_init__(self):
        object.__setattr__(self, "kind", str(self.kind))
        object.__setattr__(self, "p0", _arr(self.p0).ravel())
        object.__setattr__(self, "radius", float(self.radius))
        if self.rows is not None:
            C, b = self.rows
            object.__setattr__(self, "rows", (_mat(C, self.p0.shape[0]), _arr(b).ravel()))

    @property
    def n_scenarios(self) -> int:
        return self.p0.shape[0]


@dataclass(frozen=True)
class Instance:
    first_stage: FirstStage
    scenarios: tuple
    ambiguity: AmbiguitySet
    name: str = "instance"

    def __post_init__(self):
        object.__setattr__(self, "scenarios", tuple(self.scenarios))
        object.__setattr__(self, "name", str(self.name))


@dataclass
class SolveOptions:
    epsilon: Optional[float] = None        # None -> 1e-6 * (1 + |U|) once U is finite
    sub_tol: float = 1e-8                  # subproblem branch-and-cut optimality tolerance
    conic_tol: float = 1e-8                # interior-point duality-gap tolerance
    max_iters: int = 200                   # master iteration cap
    time_limit_seconds: Optional[float] = None
    master_mode: str = "branch-and-cut"    # or "enumerate"
    parallel_scenarios: bool = True
    threads: Optional[int] = None
    slack_augment: bool = False
    slack_penalty: float = 1e6
    partial_subsolve: int = 0              # gap-limited subsolves for the first N iterations
    partial_gap: float = 0.05
    initial_y: Optional[Sequence[float]] = None
    trace_path: Optional[str] = None
    report_path: Optional[str] = None

    def check(self) -> None:
        if self.epsilon is not None and self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        for nm in ("sub_tol", "conic_tol", "slack_penalty", "partial_gap"):
            if getattr(self, nm) <= 0:
                raise ValueError(f"{nm} must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.master_mode not in ("branch-and-cut", "enumerate"):
            raise ValueError(f"unknown master_mode {self.master_mode!r}")
        if self.partial_subsolve < 0:
            raise ValueError("partial_subsolve must be >= 0")


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Finding:
    level: str      # "error" | "warning"
    code: str
    message: str
    where: str = ""

    def __str__(self):
        loc = f" [{self.where}]" if self.where else ""
        return f"{self.level.upper()} {self.code}{loc}: {self.message}"


@dataclass
class ValidationReport:
    findings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not any(f.level == "error" for f in self.findings)

    def errors(self) -> list:
        return [f for f in self.findings if f.level == "error"]

    def add(self, level, code, message, where=""):
        self.findings.append(Finding(level, code, message, where))


def iter_binary_points(n: int):
    """Lexicographic enumeration of {0,1}^n as float arrays."""
    for bits in itertools.product((0.0, 1.0), repeat=n):
        yield np.array(bits)


def feasible_binaries(fs: FirstStage, tol: float = 1e-9) -> list:
    return [y for y in iter_binary_points(fs.n) if fs.feasible(y, tol)]


def validate(instance: Instance, spot_check: bool = True) -> ValidationReport:
    """Structural and assumption checks; 'error' findings reject the instance.

    Complete recourse is spot-checked at one feasible first-stage point (root
    relaxations only): failures are warnings because exhaustive verification
    over all binary y is exponential; the solver raises a structured error if
    an infeasible node shows up mid-run.
    """
    rep = ValidationReport()
    fs = instance.first_stage
    n = fs.n

    if n < 1:
        rep.add("error", "E_DIM", "first stage has no variables", "first_stage.c")
    if fs.F.shape[0] != fs.a.shape[0]:
        rep.add("error", "E_DIM", f"F has {fs.F.shape[0]} rows but a has {fs.a.shape[0]}",
                "first_stage")
    if fs.F.shape[0] and fs.F.shape[1] != n:
        rep.add("error", "E_DIM", f"F has {fs.F.shape[1]} columns, expected {n}", "first_stage.F")
    for k, s in enumerate(fs.socs):
        if s.A.shape[1] != n or s.g.shape[0] != n:
            rep.add("error", "E_DIM", "first-stage SOC row column count != n",
                    f"first_stage.socs[{k}]")
    if not np.all(np.isfinite(fs.c)) or not np.all(np.isfinite(fs.F)) \
            or not np.all(np.isfinite(fs.a)):
        rep.add("error", "E_NONFINITE", "first-stage data contains non-finite entries",
                "first_stage")

    if len(instance.scenarios) < 1:
        rep.add("error", "E_SCEN_COUNT", "instance needs at least one scenario", "scenarios")

    for w, sc in enumerate(instance.scenarios):
        where = f"scenarios[{w}]"
        nx = sc.nx
        if sc.l1 < 0 or sc.l2 < 0 or sc.l1 + sc.l2 != nx:
            rep.add("error", "E_DIM", f"l1 + l2 = {sc.l1}+{sc.l2} != len(q) = {nx}", where)
        if sc.W.shape[0] != sc.r.shape[0]:
            rep.add("error", "E_DIM", f"W has {sc.W.shape[0]} rows but r has {sc.r.shape[0]}", where)
            continue
        if sc.W.shape[0] and sc.W.shape[1] != nx:
            rep.add("error", "E_DIM", f"W has {sc.W.shape[1]} columns, expected {nx}", where)
        if sc.W.shape[0]:
            if sc.T.shape != (sc.W.shape[0], n):
                rep.add("error", "E_DIM",
                        f"T shape {sc.T.shape} != ({sc.W.shape[0]}, {n})", where)
        if sc.zL.shape[0] != nx or sc.zU.shape[0] != nx:
            rep.add("error", "E_DIM", "bound vectors must match variable count", where)
            continue
        if not (np.all(np.isfinite(sc.zL)) and np.all(np.isfinite(sc.zU))):
            rep.add("error", "E_UNBOUNDED",
                    "all second-stage variables need finite bounds "
                    "(leaf partition requires a bounded box)", where)
        elif np.any(sc.zL > sc.zU):
            rep.add("error", "E_BOUNDS", "zL > zU for some variable", where)
        else:
            ints = sc.zL[:sc.l1]
            intu = sc.zU[:sc.l1]
            if np.any(np.abs(ints - np.round(ints)) > 1e-9) or \
                    np.any(np.abs(intu - np.round(intu)) > 1e-9):
                rep.add("error", "E_BOUNDS", "integer variables need integral bounds", where)
        for k, blk in enumerate(sc.soc_blocks):
            bad = (blk.A.shape[1] != nx or blk.g.shape[0] != nx
                   or blk.B.shape != (blk.A.shape[0], n)
                   or blk.b.shape[0] != blk.A.shape[0])
            if bad:
                rep.add("error", "E_DIM", "SOC block dimensions inconsistent",
                        f"{where}.soc_blocks[{k}]")
        if not np.all(np.isfinite(sc.q)):
            rep.add("error", "E_NONFINITE", "q contains non-finite entries", where)

    amb = instance.ambiguity
    if amb.kind not in _KINDS:
        rep.add("error", "E_KIND", f"unknown ambiguity kind {amb.kind!r}", "ambiguity")
    if amb.n_scenarios != len(instance.scenarios):
        rep.add("error", "E_SCEN_COUNT",
                f"p0 has {amb.n_scenarios} entries but instance has "
                f"{len(instance.scenarios)} scenarios", "ambiguity")
    if np.any(amb.p0 < -1e-12) or abs(float(np.sum(amb.p0)) - 1.0) > 1e-9:
        rep.add("error", "E_P0_SIMPLEX", "nominal not a distribution", "ambiguity.p0")
    if amb.kind == KIND_TV and not (0.0 <= amb.radius <= 2.0):
        rep.add("error", "E_RADIUS", f"TV radius {amb.radius} outside [0, 2]", "ambiguity")
    if amb.kind == KIND_POLYHEDRAL:
        if amb.rows is None:
            rep.add("error", "E_ROWS", "polyhedral kind needs linear rows", "ambiguity")
        else:
            C, b = amb.rows
            if C.shape != (b.shape[0], amb.n_scenarios):
                rep.add("error", "E_DIM", "polyhedral row shapes inconsistent", "ambiguity")
            elif np.any(C @ amb.p0 > b + 1e-9):
                rep.add("error", "E_P0_MEMBER", "p0 violates the polyhedral rows", "ambiguity")

    if not rep.ok or not spot_check:
        return rep

    # complete-recourse spot check at one feasible binary point
    witness = None
    if n <= 20:
        for y in iter_binary_points(n):
            if fs.feasible(y):
                witness = y
                break
        if witness is None:
            rep.add("error", "E_FIRST_STAGE_INFEASIBLE",
                    "no feasible binary first-stage point exists", "first_stage")
            return rep
    else:
        rep.add("warning", "W_SPOT_SKIPPED",
                "first stage too large for enumeration; recourse spot check skipped", "")
        return rep

    from .misocp import scenario_relaxation  # deferred: misocp imports model
    from .conic import solve_conic, OPTIMAL, INFEASIBLE

    for w, sc in enumerate(instance.scenarios):
        sol = solve_conic(scenario_relaxation(sc, witness))
        if sol.status == INFEASIBLE:
            rep.add("warning", "W_RECOURSE",
                    f"scenario {w} root relaxation infeasible at y={witness.astype(int).tolist()}; "
                    "complete recourse may fail (consider slack_augment)", f"scenarios[{w}]")
        elif sol.status != OPTIMAL:
            rep.add("warning", "W_NUMERICS",
                    f"scenario {w} spot-check solve ended with {sol.status}", f"scenarios[{w}]")
    return rep


def augment_with_slacks(instance: Instance, penalty: float) -> Instance:
    """Add a nonnegative continuous slack to every linear recourse row.

    Slack upper bounds are derived from the row data so they can absorb the
    worst violation over the whole (y, x) box, keeping every variable bounded.
    Optimal values are preserved whenever all slacks are zero at optimality.
    """
    if penalty <= 0:
        raise ValueError("penalty must be positive")
    new_scens = []
    for sc in instance.scenarios:
        m = sc.W.shape[0]
        if m == 0:
            new_scens.append(sc)
            continue
        # worst violation of  W x >= r - T y  over the boxes
        worst_ty = np.sum(np.maximum(-sc.T, 0.0), axis=1) if sc.T.size else np.zeros(m)
        worst_wx = np.sum(np.maximum(-sc.W * sc.zL, -sc.W * sc.zU), axis=1)
        s_hi = np.maximum(sc.r + worst_ty + worst_wx, 0.0) + 1.0
        W2 = np.hstack([sc.W, np.eye(m)])
        q2 = np.concatenate([sc.q, np.full(m, float(penalty))])
        blocks = [ScenarioSoc(np.hstack([blk.A, np.zeros((blk.A.shape[0], m))]),
                              blk.B, blk.b,
                              np.concatenate([blk.g, np.zeros(m)]), blk.d)
                  for blk in sc.soc_blocks]
        new_scens.append(ScenarioData(
            q=q2, W=W2, T=sc.T, r=sc.r, soc_blocks=tuple(blocks),
            l1=sc.l1, l2=sc.l2 + m,
            zL=np.concatenate([sc.zL, np.zeros(m)]),
            zU=np.concatenate([sc.zU, s_hi])))
    return Instance(first_stage=instance.first_stage, scenarios=tuple(new_scens),
                    ambiguity=instance.ambiguity, name=instance.name + "+slack")


# ---------------------------------------------------------------------------
# JSON exchange format (version 1)
#
# Canonical key order and plain repr floats make serialize -> parse ->
# serialize byte-identical.


def _fl(x) -> float:
    return float(x)


def _vec(v) -> list:
    return [float(t) for t in np.asarray(v, dtype=float).ravel()]


def _rows(m) -> list:
    m = np.atleast_2d(np.asarray(m, dtype=float))
    return [[float(t) for t in row] for row in m]


def instance_to_dict(instance: Instance) -> dict:
    fs = instance.first_stage
    d = {
        "format": FORMAT_VERSION,
        "name": instance.name,
        "first_stage": {
            "c": _vec(fs.c),
            "F": _rows(fs.F) if fs.F.shape[0] else [],
            "a": _vec(fs.a),
            "socs": [{"A": _rows(s.A), "b": _vec(s.b), "g": _vec(s.g), "d": _fl(s.d)}
                     for s in fs.socs],
        },
        "scenarios": [],
        "ambiguity": None,
    }
    for sc in instance.scenarios:
        d["scenarios"].append({
            "q": _vec(sc.q),
            "W": _rows(sc.W) if sc.W.shape[0] else [],
            "T": _rows(sc.T) if sc.W.shape[0] else [],
            "r": _vec(sc.r),
            "socs": [{"A": _rows(b.A), "B": _rows(b.B), "b": _vec(b.b),
                      "g": _vec(b.g), "d": _fl(b.d)} for b in sc.soc_blocks],
            "l1": sc.l1,
            "l2": sc.l2,
            "zL": _vec(sc.zL),
            "zU": _vec(sc.zU),
        })
    amb = instance.ambiguity
    a = {"kind": amb.kind, "p0": _vec(amb.p0)}
    if amb.kind == KIND_TV:
        a["radius"] = _fl(amb.radius)
    if amb.kind == KIND_POLYHEDRAL and amb.rows is not None:
        a["rows"] = {"C": _rows(amb.rows[0]), "b": _vec(amb.rows[1])}
    d["ambiguity"] = a
    return d


def instance_from_dict(d: dict) -> Instance:
    if d.get("kind") == "mixed-integer-cone-program":
        raise ValueError(
            "this is a monolithic cone-program export (from `dr2s extensive`), "
            "not a two-stage instance")
    if d.get("format") != FORMAT_VERSION:
        raise ValueError(f"unsupported format version {d.get('format')!r}")
    f = d["first_stage"]
    n = len(f["c"])
    fs = FirstStage(
        c=f["c"],
        F=np.array(f["F"], dtype=float).reshape(-1, n) if f["F"] else np.zeros((0, n)),
        a=f["a"],
        socs=tuple(SocRow(A=s["A"], b=s["b"], g=s["g"], d=s["d"]) for s in f.get("socs", ())),
    )
    scens = []
    for s in d["scenarios"]:
        nx = len(s["q"])
        m = len(s["r"])
        scens.append(ScenarioData(
            q=s["q"],
            W=np.array(s["W"], dtype=float).reshape(m, nx) if m else np.zeros((0, nx)),
            T=np.array(s["T"], dtype=float).reshape(m, n) if m else np.zeros((0, n)),
            r=s["r"],
            soc_blocks=tuple(ScenarioSoc(A=b["A"], B=b["B"], b=b["b"], g=b["g"], d=b["d"])
                             for b in s.get("socs", ())),
            l1=s["l1"], l2=s["l2"], zL=s["zL"], zU=s["zU"]))
    a = d["ambiguity"]
    rows = None
    if a.get("rows") is not None:
        rows = (np.array(a["rows"]["C"], dtype=float), np.array(a["rows"]["b"], dtype=float))
    amb = AmbiguitySet(kind=a["kind"], p0=a["p0"], radius=a.get("radius", 0.0), rows=rows)
    return Instance(first_stage=fs, scenarios=tuple(scens), ambiguity=amb,
                    name=d.get("name", "instance"))


def instance_to_json(instance: Instance) -> str:
    return json.dumps(instance_to_dict(instance), indent=2) + "\n"


def instance_from_json(text: str) -> Instance:
    return instance_from_dict(json.loads(text))


def save_instance(instance: Instance, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(instance_to_json(instance))


def load_instance(path: str) -> Instance:
    with open(path) as fh:
        return instance_from_json(fh.read())
