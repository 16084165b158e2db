"""Embedded primal-dual interior-point solver for mixed LP / second-order-cone programs.

Solves programs of the form

    minimize    c.x
    subject to  G x >= h          (tagged linear rows)
                ||A_i x + b_i|| <= g_i.x + d_i   (second-order-cone rows)
                lo <= x <= hi     (per-variable boxes, +-inf allowed)

via a homogeneous self-dual embedding with Nesterov-Todd scaling and a
Mehrotra predictor-corrector step, so primal/dual solutions and certificates
of infeasibility come out of one code path.  Duals are reported in the
multiplier layout used by the cut machinery: per SOC row a pair
(lambda_i, theta_i) with ||theta_i|| <= lambda_i, per linear row a
nonnegative multiplier, and per box side nonnegative tau_lo / tau_up.

Fixed variables (lo == hi) are substituted out before the interior-point
iteration and their box multipliers are recovered from the stationarity
residual afterwards, which keeps every solved system strictly interior.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
NUMERICAL_FAILURE = "numerical-failure"

TAG_RECOURSE = "recourse"
TAG_LOCAL_CUT = "local-cut"
TAG_OTHER = "other"
_VALID_TAGS = (TAG_RECOURSE, TAG_LOCAL_CUT, TAG_OTHER)

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITERS = 200


def _arr(a, dtype=float) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(a, dtype=dtype))


@dataclass(frozen=True)
class SocRow:
    """One constraint ||A x + b||_2 <= g.x + d."""

    A: np.ndarray
    b: np.ndarray
    g: np.ndarray
    d: float

    def __post_init__(self):
        object.__setattr__(self, "A", np.atleast_2d(_arr(self.A)))
        object.__setattr__(self, "b", _arr(self.b).ravel())
        object.__setattr__(self, "g", _arr(self.g).ravel())
        object.__setattr__(self, "d", float(self.d))
        if self.A.shape[0] != self.b.shape[0]:
            raise ValueError("SocRow: A and b row counts differ")
        if self.A.shape[1] != self.g.shape[0]:
            raise ValueError("SocRow: A and g column counts differ")
        if self.A.shape[0] < 1:
            raise ValueError("SocRow: empty norm argument")

    @property
    def dim(self) -> int:
        return self.A.shape[0] + 1

    def residual(self, x: np.ndarray) -> float:
        """Slack g.x + d - ||A x + b|| (nonnegative when satisfied)."""
        return float(self.g @ x + self.d - np.linalg.norm(self.A @ x + self.b))


@dataclass(frozen=True)
class ConeProgram:
    """Continuous conic program in the shape described in the module docstring.

    ``integers`` optionally marks variable indices that outer branch-and-cut
    layers treat as integral; the conic solve itself ignores it.
    """

    c: np.ndarray
    lin_G: np.ndarray
    lin_h: np.ndarray
    lin_tags: tuple
    socs: tuple
    lo: np.ndarray
    hi: np.ndarray
    integers: tuple = ()

    def __post_init__(self):
        c = _arr(self.c).ravel()
        n = c.shape[0]
        G = np.atleast_2d(_arr(self.lin_G))
        if G.size == 0:
            G = np.zeros((0, n))
        h = _arr(self.lin_h).ravel()
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "lin_G", G)
        object.__setattr__(self, "lin_h", h)
        object.__setattr__(self, "lin_tags", tuple(self.lin_tags))
        object.__setattr__(self, "socs", tuple(self.socs))
        object.__setattr__(self, "lo", _arr(self.lo).ravel())
        object.__setattr__(self, "hi", _arr(self.hi).ravel())
        object.__setattr__(self, "integers", tuple(int(i) for i in self.integers))
        if G.shape != (h.shape[0], n):
            raise ValueError("ConeProgram: linear row shapes inconsistent")
        if len(self.lin_tags) != h.shape[0]:
            raise ValueError("ConeProgram: one tag per linear row required")
        for t in self.lin_tags:
            if t not in _VALID_TAGS:
                raise ValueError(f"ConeProgram: unknown row tag {t!r}")
        for s in self.socs:
            if s.A.shape[1] != n:
                raise ValueError("ConeProgram: SOC row has wrong column count")
        if self.lo.shape[0] != n or self.hi.shape[0] != n:
            raise ValueError("ConeProgram: bound vectors must have length n")
        if np.any(self.lo > self.hi + 1e-12):
            raise ValueError("ConeProgram: lo > hi")
        for i in self.integers:
            if not (0 <= i < n):
                raise ValueError("ConeProgram: integer index out of range")

    @property
    def n(self) -> int:
        return self.c.shape[0]

    @property
    def m_lin(self) -> int:
        return self.lin_h.shape[0]


@dataclass
class InfeasibilityCertificate:
    """Farkas ray: homogeneous dual feasibility with positive dual value.

    Satisfies  sum_i (g_i lam_i - A_i' theta_i) + G' lin + tau_lo - tau_up = 0
    and  value = sum_i (b_i.theta_i - d_i lam_i) + h.lin + lo.tau_lo - hi.tau_up > 0.
    """

    lin: np.ndarray
    soc: list
    tau_lo: np.ndarray
    tau_up: np.ndarray
    value: float


@dataclass
class ConicSolution:
    status: str
    program: ConeProgram
    x: Optional[np.ndarray] = None
    obj: float = np.nan
    dual_obj: float = np.nan
    lin_duals: Optional[np.ndarray] = None
    soc_duals: Optional[list] = None
    tau_lo: Optional[np.ndarray] = None
    tau_up: Optional[np.ndarray] = None
    gap: float = np.nan
    pres: float = np.nan
    dres: float = np.nan
    iterations: int = 0
    certificate: Optional[InfeasibilityCertificate] = None
    message: str = ""

    def _tag_slice(self, tag: str) -> np.ndarray:
        idx = [i for i, t in enumerate(self.program.lin_tags) if t == tag]
        if self.lin_duals is None:
            return np.zeros(len(idx))
        return self.lin_duals[idx]

    @property
    def gamma1(self) -> np.ndarray:
        """Multipliers of the recourse-tagged linear rows."""
        return self._tag_slice(TAG_RECOURSE)

    @property
    def gamma2(self) -> np.ndarray:
        """Multipliers of the local-cut-tagged linear rows."""
        return self._tag_slice(TAG_LOCAL_CUT)


@dataclass
class CertificateReport:
    pres: float
    dres: float
    gap: float
    complementarity: float
    ok: bool


# ---------------------------------------------------------------------------
# internal homogeneous self-dual interior-point core
#
# standard form:  min c.x  s.t.  G x + s = h,  s in K,
# K = R+^p x SOC(d_1) x ... x SOC(d_q).


class _Cones:
    def __init__(self, p: int, soc_dims: list):
        self.p = p
        self.soc_dims = list(soc_dims)
        self.m = p + sum(soc_dims)
        self.slices = []
        off = p
        for d in soc_dims:
            self.slices.append(slice(off, off + d))
            off += d
        self.nu = p + len(soc_dims)

    def unit(self) -> np.ndarray:
        e = np.zeros(self.m)
        e[: self.p] = 1.0
        for sl in self.slices:
            e[sl.start] = 1.0
        return e

    def inside(self, v: np.ndarray, margin: float = 0.0) -> bool:
        if np.any(v[: self.p] <= margin):
            return False
        for sl in self.slices:
            if v[sl.start] - np.linalg.norm(v[sl.start + 1 : sl.stop]) <= margin:
                return False
        return True

    def max_step(self, v: np.ndarray, dv: np.ndarray) -> float:
        """Largest t with v + t*dv on or inside the cone boundary."""
        t = np.inf
        p = self.p
        neg = dv[:p] < 0
        if np.any(neg):
            t = min(t, float(np.min(-v[:p][neg] / dv[:p][neg])))
        for sl in self.slices:
            v0, vb = v[sl.start], v[sl.start + 1 : sl.stop]
            d0, db = dv[sl.start], dv[sl.start + 1 : sl.stop]
            a = d0 * d0 - db @ db
            b = 2.0 * (v0 * d0 - vb @ db)
            c0 = v0 * v0 - vb @ vb
            # roots of a t^2 + b t + c0 = 0 (c0 >= 0 at interior points)
            if abs(a) < 1e-300:
                if b < 0:
                    t = min(t, -c0 / b)
            else:
                disc = b * b - 4.0 * a * c0
                if disc >= 0.0:
                    sq = np.sqrt(disc)
                    for r in ((-b - sq) / (2 * a), (-b + sq) / (2 * a)):
                        if r > 0:
                            t = min(t, r)
            if d0 < 0:
                t = min(t, -v0 / d0)
        return t

    def jprod(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Jordan product u o v blockwise."""
        out = np.empty(self.m)
        p = self.p
        out[:p] = u[:p] * v[:p]
        for sl in self.slices:
            u0, ub = u[sl.start], u[sl.start + 1 : sl.stop]
            v0, vb = v[sl.start], v[sl.start + 1 : sl.stop]
            out[sl.start] = u0 * v0 + ub @ vb
            out[sl.start + 1 : sl.stop] = u0 * vb + v0 * ub
        return out

    def jdiv(self, lam: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Solve lam o u = v blockwise."""
        out = np.empty(self.m)
        p = self.p
        out[:p] = v[:p] / lam[:p]
        for sl in self.slices:
            l0, lb = lam[sl.start], lam[sl.start + 1 : sl.stop]
            v0, vb = v[sl.start], v[sl.start + 1 : sl.stop]
            det = l0 * l0 - lb @ lb
            u0 = (l0 * v0 - lb @ vb) / det
            out[sl.start] = u0
            out[sl.start + 1 : sl.stop] = (vb - u0 * lb) / l0
        return out


class _Scaling:
    """Nesterov-Todd scaling point; W symmetric with lam = W z = W^{-1} s.

    Per SOC block W = eta * Wbar where Wbar is the hyperbolic Householder
    matrix [[w0, w1'], [w1, I + w1 w1'/(1+w0)]] built from the unit-J vector
    wbar = (sbar + J zbar)/(2 gamma); it satisfies Wbar^2 = 2 wbar wbar' - J
    and Wbar J Wbar = J, so Wbar^{-1} = J Wbar J.
    """

    def __init__(self, cones: _Cones, s: np.ndarray, z: np.ndarray):
        self.cones = cones
        p = cones.p
        self.wlin = np.sqrt(s[:p] / z[:p])
        self.blocks = []
        for sl in cones.slices:
            sb, zb = s[sl], z[sl]
            js = sb[0] ** 2 - sb[1:] @ sb[1:]
            jz = zb[0] ** 2 - zb[1:] @ zb[1:]
            if js <= 0 or jz <= 0:
                raise FloatingPointError("NT scaling point left the cone")
            nrms, nrmz = np.sqrt(js), np.sqrt(jz)
            sbar, zbar = sb / nrms, zb / nrmz
            gamma = np.sqrt((1.0 + sbar @ zbar) / 2.0)
            wbar = np.empty_like(sbar)
            wbar[0] = (sbar[0] + zbar[0]) / (2.0 * gamma)
            wbar[1:] = (sbar[1:] - zbar[1:]) / (2.0 * gamma)
            eta = np.sqrt(nrms / nrmz)
            self.blocks.append((eta, wbar))
        self.lam = self.mul_w(z)

    @staticmethod
    def _householder(wbar: np.ndarray, u: np.ndarray) -> np.ndarray:
        w0, w1 = wbar[0], wbar[1:]
        a = w1 @ u[1:]
        out = np.empty_like(u)
        out[0] = w0 * u[0] + a
        out[1:] = u[1:] + (u[0] + a / (1.0 + w0)) * w1
        return out

    def mul_w(self, u: np.ndarray) -> np.ndarray:
        out = np.empty_like(u)
        p = self.cones.p
        out[:p] = self.wlin * u[:p]
        for (eta, wbar), sl in zip(self.blocks, self.cones.slices):
            out[sl] = eta * self._householder(wbar, u[sl])
        return out

    def mul_winv(self, u: np.ndarray) -> np.ndarray:
        out = np.empty_like(u)
        p = self.cones.p
        out[:p] = u[:p] / self.wlin
        for (eta, wbar), sl in zip(self.blocks, self.cones.slices):
            ju = u[sl].copy()
            ju[1:] = -ju[1:]
            t = self._householder(wbar, ju)
            t[1:] = -t[1:]
            out[sl] = t / eta
        return out

    def w2inv_block(self, k: int) -> np.ndarray:
        """Dense W^{-2} = eta^{-2} (2 (J wbar)(J wbar)' - J) for SOC block k."""
        eta, wbar = self.blocks[k]
        v = wbar.copy()
        v[1:] = -v[1:]
        d = v.shape[0]
        J = -np.eye(d)
        J[0, 0] = 1.0
        return (2.0 * np.outer(v, v) - J) / (eta * eta)

    @property
    def dlin_inv(self) -> np.ndarray:
        """Diagonal of W^{-2} on the R+ part (= z/s)."""
        return 1.0 / (self.wlin * self.wlin)


class _Ipm:
    def __init__(self, G: np.ndarray, h: np.ndarray, c: np.ndarray, cones: _Cones,
                 tol: float, max_iters: int, obj_scale: float = 1.0):
        self.G, self.h, self.c = G, h, c
        self.cones = cones
        self.tol = tol
        self.max_iters = max_iters
        self.m, self.n = G.shape
        # the caller divided the objective by obj_scale; a gap that looks tiny
        # here can still be large in original units, so the convergence floor
        # must shrink accordingly
        self.gap_floor = 1.0 / max(1.0, float(obj_scale))

    def _kkt_prepare(self, scal: _Scaling):
        G, cones = self.G, self.cones
        p = cones.p
        Gl = G[:p]
        M = (Gl * scal.dlin_inv[:, None]).T @ Gl
        for k, sl in enumerate(cones.slices):
            Gb = G[sl]
            M += Gb.T @ (scal.w2inv_block(k) @ Gb)
        # per-column floor: a flat shift sized by the largest diagonal entry
        # swamps the small columns when the diagonal spread is wide (penalty
        # objectives), so regularize each column relative to its own scale
        base = np.maximum(np.diag(M), 1e-12)
        for bump in range(6):
            try:
                self._chol = sla.cho_factor(M + np.diag((1e-14 * 10.0 ** bump) * base),
                                            lower=True, check_finite=False)
                return
            except np.linalg.LinAlgError:
                continue
        raise FloatingPointError("KKT factorization failed")

    def _apply_w2inv(self, scal: _Scaling, u: np.ndarray) -> np.ndarray:
        return scal.mul_winv(scal.mul_winv(u))

    def _solve2(self, scal: _Scaling, bx: np.ndarray, bz: np.ndarray):
        """Solve  G'v = bx,  G u - W^2 v = bz  for (u, v)."""
        G = self.G
        rhs = bx + G.T @ self._apply_w2inv(scal, bz)
        u = sla.cho_solve(self._chol, rhs, check_finite=False)
        # one round of iterative refinement on the normal equations
        v = self._apply_w2inv(scal, G @ u - bz)
        r1 = bx - G.T @ v
        if np.max(np.abs(r1)) > 1e-13 * max(1.0, np.max(np.abs(bx))):
            du = sla.cho_solve(self._chol, r1, check_finite=False)
            u = u + du
            v = self._apply_w2inv(scal, G @ u - bz)
        return u, v

    def solve(self, x0: np.ndarray, s0: np.ndarray):
        G, h, c, cones = self.G, self.h, self.c, self.cones
        m, n = self.m, self.n
        x = x0.copy()
        s = s0.copy()
        z = cones.unit()
        tau, kappa = 1.0, 1.0
        nu = cones.nu + 1
        best = None
        status, msg = NUMERICAL_FAILURE, "iteration limit"
        niter = 0
        norm_h = 1.0 + np.max(np.abs(h)) if m else 1.0
        norm_c = 1.0 + (np.max(np.abs(c)) if n else 0.0)

        for it in range(self.max_iters):
            niter = it
            res_x = G.T @ z + tau * c
            res_z = G @ x + s - tau * h
            res_t = kappa + c @ x + h @ z
            mu = (s @ z + tau * kappa) / nu

            # scaled convergence measures
            xs, ss, zs = x / tau, s / tau, z / tau
            pres = np.max(np.abs(G @ xs + ss - h)) / norm_h if m else 0.0
            dres = np.max(np.abs(G.T @ zs + c)) / norm_c
            pobj = c @ xs
            dobj = -h @ zs
            gap = abs(pobj - dobj)
            if pres <= self.tol and dres <= self.tol and \
                    gap <= self.tol * max(self.gap_floor, abs(pobj), abs(dobj)):
                return OPTIMAL, xs, ss, zs, it, ""

            # remember the most accurate iterate seen; on degenerate optimal
            # faces the residuals bottom out above tol and then deteriorate
            # as mu keeps shrinking, so the last iterate can be much worse
            # than the best one.
            merit = max(pres, dres, gap / max(self.gap_floor, abs(pobj), abs(dobj)))
            if np.isfinite(merit) and (best is None or merit < best[0]):
                best = (merit, xs, ss, zs)
            if it == 0:
                mu0 = mu
            if best is not None and mu < 1e-6 * mu0 and \
                    merit > 1e2 * (best[0] + self.tol):
                status, msg = NUMERICAL_FAILURE, "residual deterioration"
                break
            if mu < 1e-14 * max(1.0, mu0):
                status, msg = NUMERICAL_FAILURE, "complementarity underflow"
                break

            # infeasibility certificates (homogeneous directions)
            hz = h @ z
            if hz < -1e-12 and tau <= 1e-8 * max(1.0, kappa):
                ray = z / (-hz)
                if np.max(np.abs(G.T @ ray)) <= 1e-7:
                    return INFEASIBLE, None, None, ray, it, "primal infeasible"
            cx = c @ x
            if cx < -1e-12 and tau <= 1e-8 * max(1.0, kappa):
                resid = np.max(np.abs(G @ x + s)) / max(-cx, 1e-300)
                if resid <= 1e-7:
                    return NUMERICAL_FAILURE, None, None, None, it, "unbounded objective"

            try:
                scal = _Scaling(cones, s, z)
                self._kkt_prepare(scal)
                lam = scal.lam

                # tau-column solve, shared by predictor and corrector
                x1, z1 = self._solve2(scal, -c, h)
                den = c @ x1 + h @ z1 - kappa / tau

                def direction(sigma, ds_extra, dk_extra):
                    dsrhs = -cones.jprod(lam, lam) + ds_extra + sigma * mu * cones.unit()
                    dkrhs = -tau * kappa + dk_extra + sigma * mu
                    f = 1.0 - sigma
                    rhs1 = -f * res_x
                    rhs2 = -f * res_z - scal.mul_w(cones.jdiv(lam, dsrhs))
                    x2, z2 = self._solve2(scal, rhs1, rhs2)
                    dtau = (-f * res_t - dkrhs / tau - c @ x2 - h @ z2) / den
                    dx = x2 + dtau * x1
                    dz = z2 + dtau * z1
                    ds = scal.mul_w(cones.jdiv(lam, dsrhs)) - scal.mul_w(scal.mul_w(dz))
                    dkap = (dkrhs - kappa * dtau) / tau
                    return dx, ds, dz, dtau, dkap

                # predictor
                dx, ds, dz, dtau, dkap = direction(0.0, 0.0, 0.0)
                alpha = min(cones.max_step(s, ds), cones.max_step(z, dz))
                if dtau < 0:
                    alpha = min(alpha, -tau / dtau)
                if dkap < 0:
                    alpha = min(alpha, -kappa / dkap)
                alpha = min(1.0, alpha)
                mu_aff = ((s + alpha * ds) @ (z + alpha * dz)
                          + (tau + alpha * dtau) * (kappa + alpha * dkap)) / nu
                sigma = min(1.0, max(0.0, (mu_aff / mu))) ** 3

                # corrector with Mehrotra second-order term
                wds = scal.mul_winv(ds)
                wdz = scal.mul_w(dz)
                ds_extra = -cones.jprod(wds, wdz)
                dk_extra = -dtau * dkap
                dx, ds, dz, dtau, dkap = direction(sigma, ds_extra, dk_extra)
            except (FloatingPointError, np.linalg.LinAlgError) as e:
                status, msg = NUMERICAL_FAILURE, str(e)
                break

            alpha = min(cones.max_step(s, ds), cones.max_step(z, dz))
            if dtau < 0:
                alpha = min(alpha, -tau / dtau)
            if dkap < 0:
                alpha = min(alpha, -kappa / dkap)
            alpha = min(1.0, 0.99 * alpha)
            if not np.isfinite(alpha) or alpha <= 1e-13:
                status, msg = NUMERICAL_FAILURE, "step length collapsed"
                break

            x += alpha * dx
            s += alpha * ds
            z += alpha * dz
            tau += alpha * dtau
            kappa += alpha * dkap
            if not (np.isfinite(tau) and tau > 0 and np.isfinite(kappa)):
                status, msg = NUMERICAL_FAILURE, "embedding variables diverged"
                break

        # final classification attempt at the iterate we stopped on
        hz = h @ z
        if hz < -1e-12 and tau <= 1e-6 * max(1.0, kappa):
            ray = z / (-hz)
            if np.max(np.abs(G.T @ ray)) <= 1e-6:
                return INFEASIBLE, None, None, ray, niter, "primal infeasible"
        loose = 1e3 * self.tol
        if best is not None and best[0] <= loose:
            return OPTIMAL, best[1], best[2], best[3], niter, "loose tolerance"
        if tau > 1e-10:
            xs, ss, zs = x / tau, s / tau, z / tau
            pres = np.max(np.abs(G @ xs + ss - h)) / norm_h if m else 0.0
            dres = np.max(np.abs(G.T @ zs + c)) / norm_c
            pobj, dobj = c @ xs, -h @ zs
            gap = abs(pobj - dobj)
            if pres <= loose and dres <= loose and \
                    gap <= loose * max(self.gap_floor, abs(pobj)):
                return OPTIMAL, xs, ss, zs, niter, "loose tolerance"
        return status, None, None, None, niter, msg


# ---------------------------------------------------------------------------
# public entry point with presolve / postsolve


class _Reduced:
    """Bookkeeping for the fixed-variable / constant-row presolve."""

    def __init__(self, p: ConeProgram, feas_tol: float):
        n = p.n
        lo, hi = p.lo, p.hi
        self.fixed_mask = np.isclose(lo, hi, rtol=0.0, atol=1e-12) | (lo == hi)
        self.free_idx = np.where(~self.fixed_mask)[0]
        self.fix_idx = np.where(self.fixed_mask)[0]
        self.xfix = np.where(self.fixed_mask, lo, 0.0)
        self.feas_tol = feas_tol
        self.infeasible_row = None  # ("lin", i, violation) or ("soc", i, violation)

        xf = self.xfix
        self.lin_keep = []
        Gr, hr = [], []
        for i in range(p.m_lin):
            grow = p.lin_G[i]
            gred = grow[self.free_idx]
            hred = p.lin_h[i] - grow[self.fix_idx] @ xf[self.fix_idx]
            if gred.size == 0 or np.max(np.abs(gred)) == 0.0:
                if hred > feas_tol * (1.0 + abs(p.lin_h[i])):
                    self.infeasible_row = ("lin", i, float(hred))
                continue
            self.lin_keep.append(i)
            Gr.append(gred)
            hr.append(hred)
        self.Gr = np.array(Gr) if Gr else np.zeros((0, self.free_idx.size))
        self.hr = np.array(hr) if hr else np.zeros(0)

        self.soc_keep = []
        self.soc_red = []
        for i, s in enumerate(p.socs):
            Ar = s.A[:, self.free_idx]
            br = s.b + s.A[:, self.fix_idx] @ xf[self.fix_idx]
            gr = s.g[self.free_idx]
            dr = s.d + s.g[self.fix_idx] @ xf[self.fix_idx]
            if (Ar.size == 0 or np.max(np.abs(Ar)) == 0.0) and \
                    (gr.size == 0 or np.max(np.abs(gr)) == 0.0):
                viol = np.linalg.norm(br) - dr
                if viol > feas_tol * (1.0 + abs(s.d) + np.linalg.norm(s.b)):
                    self.infeasible_row = ("soc", i, float(viol))
                continue
            self.soc_keep.append(i)
            self.soc_red.append((Ar, br, gr, dr))

        self.lo_r = lo[self.free_idx]
        self.hi_r = hi[self.free_idx]
        self.obj_const = float(p.c[self.fix_idx] @ xf[self.fix_idx])
        self.c_r = p.c[self.free_idx]


def _stationarity_residual(p: ConeProgram, lin: np.ndarray, soc: list) -> np.ndarray:
    """c - sum_i (g_i lam_i - A_i' theta_i) - G' lin  (box terms excluded)."""
    r = p.c.copy()
    for s, (lam, theta) in zip(p.socs, soc):
        r -= s.g * lam - s.A.T @ theta
    if p.m_lin:
        r -= p.lin_G.T @ lin
    return r


def _dual_objective(p: ConeProgram, lin, soc, tau_lo, tau_up) -> float:
    val = 0.0
    for s, (lam, theta) in zip(p.socs, soc):
        val += s.b @ theta - s.d * lam
    if p.m_lin:
        val += p.lin_h @ lin
    finite_lo = np.isfinite(p.lo)
    finite_hi = np.isfinite(p.hi)
    val += p.lo[finite_lo] @ tau_lo[finite_lo] - p.hi[finite_hi] @ tau_up[finite_hi]
    return float(val)


def solve_conic(p: ConeProgram, tol: float = DEFAULT_TOL,
                max_iters: int = DEFAULT_MAX_ITERS,
                backend: Optional[Callable] = None) -> ConicSolution:
    """Solve a ConeProgram; the embedded interior-point method is the default backend."""
    if backend is not None:
        return backend(p, tol=tol, max_iters=max_iters)

    feas_tol = max(tol, 1e-9)
    red = _Reduced(p, feas_tol)
    n = p.n

    if red.infeasible_row is not None:
        return _constant_row_certificate(p, red)

    nfree = red.free_idx.size
    if nfree == 0:
        return _all_fixed_solution(p, red)

    # bound-based column equilibration: binary indicators living next to
    # quantities in the hundreds otherwise push the normal equations onto a
    # residual floor far above tol
    dcol = np.maximum(
        np.where(np.isfinite(red.lo_r), np.abs(red.lo_r), 0.0),
        np.where(np.isfinite(red.hi_r), np.abs(red.hi_r), 0.0))
    dcol = np.maximum(dcol, 1.0)
    Gcol = red.Gr * dcol[None, :] if red.Gr.size else red.Gr
    soc_col = [(Ar * dcol[None, :], br, gr * dcol, dr)
               for (Ar, br, gr, dr) in red.soc_red]
    c_col = red.c_r * dcol
    lo_col = red.lo_r / dcol
    hi_col = red.hi_r / dcol

    # scale rows, SOC blocks, and the objective
    row_scale = np.maximum(np.max(np.abs(Gcol), axis=1), 1e-12) if Gcol.size else np.zeros(0)
    Gs = Gcol / row_scale[:, None] if Gcol.size else Gcol
    hs = red.hr / row_scale if red.hr.size else red.hr
    soc_scale = []
    socs_s = []
    for (Ar, br, gr, dr) in soc_col:
        sc = max(np.max(np.abs(Ar)) if Ar.size else 0.0,
                 np.max(np.abs(gr)) if gr.size else 0.0,
                 abs(dr), np.max(np.abs(br)) if br.size else 0.0, 1e-12)
        soc_scale.append(sc)
        socs_s.append((Ar / sc, br / sc, gr / sc, dr / sc))
    c_scale = max(1.0, float(np.max(np.abs(c_col))) if nfree else 1.0)
    cs = c_col / c_scale

    # assemble internal  min cs.x  s.t.  Gx + s = h,  s in K
    lo_rows = np.where(np.isfinite(lo_col))[0]
    hi_rows = np.where(np.isfinite(hi_col))[0]
    m_lin_int = Gs.shape[0] + lo_rows.size + hi_rows.size
    soc_dims = [a.shape[0] + 1 for (a, _, _, _) in socs_s]
    m_int = m_lin_int + sum(soc_dims)
    Gi = np.zeros((m_int, nfree))
    hi_vec = np.zeros(m_int)
    r = 0
    if Gs.size:
        Gi[r:r + Gs.shape[0]] = -Gs
        hi_vec[r:r + Gs.shape[0]] = -hs
    r += Gs.shape[0]
    for j, v in enumerate(lo_rows):
        Gi[r + j, v] = -1.0
        hi_vec[r + j] = -lo_col[v]
    r += lo_rows.size
    for j, v in enumerate(hi_rows):
        Gi[r + j, v] = 1.0
        hi_vec[r + j] = hi_col[v]
    r += hi_rows.size
    for (Ar, br, gr, dr) in socs_s:
        d = Ar.shape[0]
        Gi[r, :] = -gr
        hi_vec[r] = dr
        Gi[r + 1: r + 1 + d, :] = -Ar
        hi_vec[r + 1: r + 1 + d] = br
        r += 1 + d

    cones = _Cones(m_lin_int, soc_dims)

    # strict-interior start: box midpoints, slacks pushed inside the cones
    x0 = np.zeros(nfree)
    for j in range(nfree):
        l, u = lo_col[j], hi_col[j]
        if np.isfinite(l) and np.isfinite(u):
            x0[j] = 0.5 * (l + u)
        elif np.isfinite(l):
            x0[j] = l + 1.0
        elif np.isfinite(u):
            x0[j] = u - 1.0
    resid = hi_vec - Gi @ x0
    s0 = np.empty(m_int)
    s0[:m_lin_int] = np.maximum(resid[:m_lin_int], 1.0)
    for sl in cones.slices:
        wb = resid[sl.start + 1: sl.stop]
        s0[sl.start] = max(1.0, 2.0 * np.linalg.norm(wb))
        s0[sl.start + 1: sl.stop] = wb

    def postsolve(xs, zs, niter, msg) -> ConicSolution:
        # expand x, unscale duals, complete fixed-variable multipliers
        x = red.xfix.copy()
        x[red.free_idx] = xs * dcol
        z = zs * c_scale

        lin_d = np.zeros(p.m_lin)
        nlin = Gs.shape[0]
        for k, i in enumerate(red.lin_keep):
            lin_d[i] = z[k] / row_scale[k]
        tau_lo = np.zeros(n)
        tau_up = np.zeros(n)
        for j, v in enumerate(lo_rows):
            tau_lo[red.free_idx[v]] = z[nlin + j] / dcol[v]
        for j, v in enumerate(hi_rows):
            tau_up[red.free_idx[v]] = z[nlin + lo_rows.size + j] / dcol[v]
        soc_d = [(0.0, np.zeros(s.A.shape[0])) for s in p.socs]
        off = m_lin_int
        for k, i in enumerate(red.soc_keep):
            dim = soc_dims[k]
            blk = z[off:off + dim] / soc_scale[k]
            soc_d[i] = (float(blk[0]), -blk[1:].copy())
            off += dim

        # stationarity residual carries the multipliers of substituted variables
        rho = _stationarity_residual(p, lin_d, soc_d)
        for j in red.fix_idx:
            rem = rho[j] - tau_lo[j] + tau_up[j]
            tau_lo[j] = max(rem, 0.0)
            tau_up[j] = max(-rem, 0.0)

        obj = float(p.c @ x)
        dobj = _dual_objective(p, lin_d, soc_d, tau_lo, tau_up)
        return ConicSolution(status=OPTIMAL, program=p, x=x, obj=obj, dual_obj=dobj,
                             lin_duals=lin_d, soc_duals=soc_d, tau_lo=tau_lo,
                             tau_up=tau_up, gap=abs(obj - dobj), iterations=niter,
                             message=msg)

    # solve, then verify the certificate in original units; badly scaled
    # objectives can look converged internally, so an uncertified solution is
    # re-solved once at a tighter interior tolerance before giving up
    rep_tol = max(1e-6, 1e2 * tol)
    last_gap = np.nan
    for attempt_tol in (tol, max(1e-13, 1e-4 * tol)):
        ipm = _Ipm(Gi, hi_vec, cs, cones, attempt_tol, max_iters,
                   obj_scale=c_scale)
        status, xs, ss, zs, niter, msg = ipm.solve(x0.copy(), s0.copy())

        if status == INFEASIBLE:
            return _ray_to_certificate(p, red, zs, Gs.shape[0], row_scale,
                                       soc_scale, lo_rows, hi_rows, cones,
                                       niter, dcol)
        if status != OPTIMAL:
            return ConicSolution(status=NUMERICAL_FAILURE, program=p,
                                 iterations=niter, message=msg)
        sol = postsolve(xs, zs, niter, msg)
        rep = check_strong_duality(sol, tol=rep_tol)
        if rep.ok:
            sol.pres, sol.dres = rep.pres, rep.dres
            return sol
        last_gap = rep.gap
    return ConicSolution(status=NUMERICAL_FAILURE, program=p, iterations=niter,
                         message=f"uncertified solution (gap {last_gap:.2e})")


def _all_fixed_solution(p: ConeProgram, red: _Reduced) -> ConicSolution:
    x = red.xfix.copy()
    lin_d = np.zeros(p.m_lin)
    soc_d = [(0.0, np.zeros(s.A.shape[0])) for s in p.socs]
    tau_lo = np.maximum(p.c, 0.0)
    tau_up = np.maximum(-p.c, 0.0)
    obj = float(p.c @ x)
    dobj = _dual_objective(p, lin_d, soc_d, tau_lo, tau_up)
    return ConicSolution(status=OPTIMAL, program=p, x=x, obj=obj, dual_obj=dobj,
                         lin_duals=lin_d, soc_duals=soc_d, tau_lo=tau_lo, tau_up=tau_up,
                         gap=abs(obj - dobj), pres=0.0, dres=0.0)


def _constant_row_certificate(p: ConeProgram, red: _Reduced) -> ConicSolution:
    kind, i, viol = red.infeasible_row
    lin = np.zeros(p.m_lin)
    soc = [(0.0, np.zeros(s.A.shape[0])) for s in p.socs]
    tau_lo = np.zeros(p.n)
    tau_up = np.zeros(p.n)
    if kind == "lin":
        lin[i] = 1.0
        grow = p.lin_G[i]
        # cancel the fixed-variable columns with box multipliers
        for j in red.fix_idx:
            if grow[j] > 0:
                tau_up[j] += grow[j]
            else:
                tau_lo[j] += -grow[j]
    else:
        s = p.socs[i]
        w = s.b + s.A[:, red.fix_idx] @ red.xfix[red.fix_idx]
        nw = np.linalg.norm(w)
        theta = -w / nw if nw > 0 else np.zeros_like(w)
        soc[i] = (1.0, theta)
        coldir = s.g - s.A.T @ theta
        for j in red.fix_idx:
            if coldir[j] > 0:
                tau_lo[j] += coldir[j]
            else:
                tau_up[j] += -coldir[j]
    cert = InfeasibilityCertificate(lin=lin, soc=soc, tau_lo=tau_lo, tau_up=tau_up,
                                    value=_dual_objective(p, lin, soc, tau_lo, tau_up))
    return ConicSolution(status=INFEASIBLE, program=p, certificate=cert,
                         message=f"constant {kind} row {i} violated by {viol:.3g}")


def _ray_to_certificate(p: ConeProgram, red: _Reduced, ray: np.ndarray, nlin: int,
                        row_scale, soc_scale, lo_rows, hi_rows, cones: _Cones,
                        niter: int, dcol) -> ConicSolution:
    lin = np.zeros(p.m_lin)
    for k, i in enumerate(red.lin_keep):
        lin[i] = ray[k] / row_scale[k]
    tau_lo = np.zeros(p.n)
    tau_up = np.zeros(p.n)
    for j, v in enumerate(lo_rows):
        tau_lo[red.free_idx[v]] = ray[nlin + j] / dcol[v]
    for j, v in enumerate(hi_rows):
        tau_up[red.free_idx[v]] = ray[nlin + lo_rows.size + j] / dcol[v]
    soc = [(0.0, np.zeros(s.A.shape[0])) for s in p.socs]
    off = cones.p
    for k, i in enumerate(red.soc_keep):
        dim = cones.soc_dims[k]
        blk = ray[off:off + dim] / soc_scale[k]
        soc[i] = (float(blk[0]), -blk[1:].copy())
        off += dim
    # zero out the columns of substituted variables with box multipliers;
    # homogeneous stationarity wants
    #   sum_i (g_i lam_i - A_i' theta_i) + G' lin + tau_lo - tau_up = 0
    r = np.zeros(p.n)
    for s, (lam, theta) in zip(p.socs, soc):
        r += s.g * lam - s.A.T @ theta
    if p.m_lin:
        r += p.lin_G.T @ lin
    for j in red.fix_idx:
        tau_lo[j] = max(-r[j], 0.0)
        tau_up[j] = max(r[j], 0.0)
    cert = InfeasibilityCertificate(lin=lin, soc=soc, tau_lo=tau_lo, tau_up=tau_up,
                                    value=_dual_objective(p, lin, soc, tau_lo, tau_up))
    return ConicSolution(status=INFEASIBLE, program=p, certificate=cert,
                         iterations=niter, message="interior-point infeasibility ray")


def check_strong_duality(sol: ConicSolution, tol: float = 1e-6) -> CertificateReport:
    """Recompute feasibility, stationarity, complementarity, and the duality gap
    from the original program data, independent of solver internals."""
    p = sol.program
    if sol.status != OPTIMAL or sol.x is None:
        return CertificateReport(np.inf, np.inf, np.inf, np.inf, False)
    x = sol.x
    scale_h = 1.0 + (np.max(np.abs(p.lin_h)) if p.m_lin else 0.0)
    pres = 0.0
    comp = 0.0
    if p.m_lin:
        slack = p.lin_G @ x - p.lin_h
        pres = max(pres, float(np.max(-slack)) / scale_h)
        comp = max(comp, float(np.max(np.abs(slack * sol.lin_duals))))
    for s, (lam, theta) in zip(p.socs, sol.soc_duals):
        sl = s.residual(x)
        pres = max(pres, -sl / (1.0 + abs(s.d)))
        comp = max(comp, abs(sl * lam))
    finite_lo = np.isfinite(p.lo)
    finite_hi = np.isfinite(p.hi)
    if np.any(finite_lo):
        bl = x[finite_lo] - p.lo[finite_lo]
        pres = max(pres, float(np.max(-bl, initial=0.0)))
        comp = max(comp, float(np.max(np.abs(bl * sol.tau_lo[finite_lo]), initial=0.0)))
    if np.any(finite_hi):
        bu = p.hi[finite_hi] - x[finite_hi]
        pres = max(pres, float(np.max(-bu, initial=0.0)))
        comp = max(comp, float(np.max(np.abs(bu * sol.tau_up[finite_hi]), initial=0.0)))

    r = _stationarity_residual(p, sol.lin_duals, sol.soc_duals)
    r -= sol.tau_lo - sol.tau_up
    dres = float(np.max(np.abs(r))) / (1.0 + float(np.max(np.abs(p.c))))
    gap = abs(sol.obj - sol.dual_obj)
    scale = max(1.0, abs(sol.obj))
    ok = pres <= tol and dres <= tol and gap <= tol * scale
    return CertificateReport(pres=pres, dres=dres, gap=gap, complementarity=comp, ok=ok)
