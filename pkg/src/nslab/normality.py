"""Normality residual evaluators and variational integrators.

Four residual families characterise Newtonian systems that move every
hypersurface normally: two weak-normality vectors (weak_a, weak_b) and two
additional-normality matrices (add_sym, add_proj).  All four vanish at every
cotangent point with p != 0 exactly when the system admits normal shift.

weak_b is evaluated from the covariant coefficient fields (alpha, beta, eta)
of the deviation equation; an independently transcribed expanded variant is
kept for cross-checking.  The two agree wherever the horizontal derivative of
omega annihilates <Q|v>, in particular on x-independent models with a flat
connection, and only the coefficient-field variant stays invariant under
connection shifts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calculus import CotangentState
from .dynamics import Trajectory, rhs_v_array
from .errors import (DimensionTooSmall, RepresentationMismatch,
                     ValidationError)
from .tensorfields import FieldPoint, MOMENTUM, VELOCITY

__all__ = [
    "DeviationODECoeffs", "OperatorB", "VariationState", "VariationSeries",
    "PointResiduals", "ResidualReport", "InvarianceReport",
    "weak_residuals", "weak_residual_b_printed", "additional_residuals",
    "deviation_coefficients", "integrate_variation", "deviation_ode_residual",
    "connection_invariance_check", "b_symmetry_of_B", "evaluate_residuals",
    "variation_matrices",
]


def _frame(system, gamma, costate):
    fp = FieldPoint(system.model, gamma, costate.x, costate.p,
                    force=system.force)
    fp.require_momentum()
    fp.require_omega()
    return fp


@dataclass
class DeviationODECoeffs:
    alpha: np.ndarray
    beta_cov: np.ndarray
    eta: np.ndarray
    sigma: float
    a_coef: float         # coefficient of phi-dot in the deviation equation
    b_coef: float         # coefficient of phi


def _coefficient_fields(fp):
    v, p, om, q = fp.v, fp.p, fp.omega, fp.q
    w = fp.nabla_h / om - q
    scal = (fp.nabla_omega / om**2) @ (v / om) + (fp.vt_omega / om**2) @ (q - fp.nabla_h / om)
    alpha = scal * v - np.einsum("s,rs->r", v / om, fp.qp + np.outer(fp.vt_omega, q) / om)
    beta = (scal * fp.nabla_h
            + np.einsum("s,sr->r", v / om, fp.nabla_q)
            - np.einsum("s,rs->r", v / om, fp.nabla_q + np.outer(fp.nabla_omega, q) / om)
            - np.einsum("s,sr->r", w, fp.qp))
    pa = float(p @ alpha)
    eta = beta - pa * w
    sigma = float((v / om) @ eta)
    return alpha, beta, eta, sigma, pa, w


def deviation_coefficients(system, gamma, costate):
    """Covariant coefficient fields of the second-order deviation equation."""
    fp = _frame(system, gamma, costate)
    alpha, beta, eta, sigma, pa, _ = _coefficient_fields(fp)
    return DeviationODECoeffs(alpha=alpha, beta_cov=beta, eta=eta, sigma=sigma,
                              a_coef=-pa, b_coef=sigma)


def weak_residuals(system, gamma, costate):
    """Left-hand sides of the two weak normality equations at one point."""
    fp = _frame(system, gamma, costate)
    alpha, _, eta, _, _, _ = _coefficient_fields(fp)
    P = fp.projector
    return P @ alpha, eta @ P


def weak_residual_b_printed(system, gamma, costate):
    """Expanded transcription of the second weak equation (cross-check only)."""
    fp = _frame(system, gamma, costate)
    v, p, om, q = fp.v, fp.p, fp.omega, fp.q
    w = fp.nabla_h / om - q
    g1 = (np.einsum("s,sr->r", v / om, fp.nabla_q)
          + ((fp.nabla_omega @ v) / om**2) * q
          - np.einsum("s,rs->r", v / om, fp.nabla_q)
          + fp.nabla_omega / om * float(q @ v) / om)
    g2 = w * float(p @ ((fp.qp + np.outer(fp.vt_omega, q) / om) @ (v / om)))
    g3 = np.einsum("s,sr->r", w, fp.qp + np.outer(fp.vt_omega, q) / om)
    return (g1 + g2 - g3) @ fp.projector


@dataclass
class OperatorB:
    matrix: np.ndarray
    lambda_b: float


def additional_residuals(system, gamma, costate):
    """Antisymmetrised compatibility residual, the force-shape operator B and
    its defect from a multiple of the projector."""
    if system.n < 3:
        raise DimensionTooSmall(
            "additional normality is unconstrained for n = 2")
    fp = _frame(system, gamma, costate)
    p, om, q = fp.p, fp.omega, fp.q
    P = fp.projector
    C = (np.outer(fp.p_norm2 * fp.nabla_h / om**2, q)
         - np.outer((fp.nabla_vt_h @ p) / om, q)
         - fp.nabla_q
         + np.outer(fp.nabla_h / om, p @ fp.qp)
         + np.outer(fp.nabla_h / om, q)
         + np.outer(p @ fp.qp, q).T)
    add_sym = np.einsum("rs,si,rj->ij", C - C.T, P, P)
    B = P @ (np.outer(fp.p_up, q) / om + fp.qp) @ P
    lam = float(np.trace(B)) / (fp.n - 1)
    add_proj = B - lam * P
    return add_sym, OperatorB(matrix=B, lambda_b=lam), add_proj


@dataclass
class VariationState:
    tau: np.ndarray
    fiber: np.ndarray       # xi (momentum rep) or theta (velocity rep)
    rep: str = MOMENTUM

    @property
    def xi(self):
        return self.fiber

    @property
    def theta(self):
        return self.fiber


@dataclass
class VariationSeries:
    t: np.ndarray
    tau: np.ndarray         # (K+1, n)
    fiber: np.ndarray       # (K+1, n)
    rep: str

    def state(self, k):
        return VariationState(self.tau[k], self.fiber[k], self.rep)


def _variation_matrix_momentum(fp):
    """Coefficient matrix of d/dt (tau, xi) on the base trajectory."""
    n = fp.n
    v, p, om = fp.v, fp.p, fp.omega
    U = v / om
    w = fp.nabla_h / om - fp.q
    # fiber and spatial derivatives of the flow velocity field U^s
    dU_dp = fp.ginv / om - np.outer(fp.vt_omega, v) / om**2
    dU_dx = fp.hxp / om - np.outer(fp.omega_x, v) / om**2
    HU = (dU_dx + np.einsum("a,arb,bs->rs", p, fp.gam, dU_dp)
          + np.einsum("sra,a->rs", fp.gam, U))
    # fiber and spatial derivatives of the covector field w_s
    dw_dp = fp.dw_dp / om - np.outer(fp.vt_omega, fp.nabla_h) / om**2 - fp.qp
    dw_dx = fp.dw_dx / om - np.outer(fp.omega_x, fp.nabla_h) / om**2 - fp.qx
    HW = (dw_dx + np.einsum("a,arb,bs->rs", p, fp.gam, dw_dp)
          - np.einsum("brs,b->rs", fp.gam, w))
    D = -np.moveaxis(fp.gam_p, 0, 1)
    R = (np.einsum("ikjr->krij", fp.gam_x) - np.einsum("jkir->krij", fp.gam_x)
         + np.einsum("kim,mjr->krij", fp.gam, fp.gam)
         - np.einsum("kjm,mir->krij", fp.gam, fp.gam)
         + np.einsum("a,ami,mkjr->krij", p, fp.gam, fp.gam_p)
         - np.einsum("a,amj,mkir->krij", p, fp.gam, fp.gam_p))
    A = np.einsum("m,bms->bs", U, fp.gam)
    M = np.zeros((2 * n, 2 * n))
    M[:n, :n] = HU.T - np.einsum("m,sma->sa", U, fp.gam)
    M[:n, n:] = dU_dp.T
    M[n:, :n] = (-np.einsum("mqrs,m,q->sr", D, p, w)
                 - np.einsum("q,m,msqr->sr", U, p, R)
                 - HW.T)
    M[n:, n:] = (-np.einsum("q,m,mrqs->sr", U, p, D) - dw_dp.T + A.T)
    return M


def _variation_matrix_velocity(system, x, v):
    """Coefficient matrix of d/dt (tau, theta) for the velocity form."""
    lag = system.lagrangian
    n = lag.n
    lv = lag.lv(x, v)
    lx = lag.lx(x, v)
    g = lag.lvv(x, v)
    lvx = lag.lvx(x, v)
    lxx = lag.lxx(x, v)
    lvvv = lag.lvvv(x, v)
    lvvx = lag.lvvx(x, v)
    lvxx = lag.lvxx(x, v)
    om = float(v @ lv)
    xdot, vdot = rhs_v_array(system, x, v)
    p = lv
    qx = system.force.dx(x, p)
    qp = system.force.dp(x, p)
    # force through the Legendre map: dQ~_i/dx^s and dQ~_i/dv^s
    qx_t = qx.T + np.einsum("ki,ks->is", qp, lvx)
    qv_t = np.einsum("ki,ks->is", qp, g)
    m_tt = -np.outer(v, np.einsum("ks,k->s", lvx, v)) / om**2
    m_tth = (np.eye(n) / om - np.outer(v, lv) / om**2
             - np.outer(v, np.einsum("ks,k->s", g, v)) / om**2)
    c_th = (qv_t - np.einsum("isk,k->is", lvvv, vdot)
            - np.einsum("isk,k->is", lvvx, xdot)
            + lvx.T / om
            - np.outer(lx, lv + np.einsum("ks,k->s", g, v)) / om**2
            - lvx @ m_tth)
    c_t = (qx_t - np.einsum("iks,k->is", lvvx, vdot)
           - np.einsum("isk,k->is", lvxx, xdot)
           + lxx / om
           - np.outer(lx, np.einsum("ks,k->s", lvx, v)) / om**2
           - lvx @ m_tt)
    ginv = np.linalg.inv(g)
    M = np.zeros((2 * n, 2 * n))
    M[:n, :n] = m_tt
    M[:n, n:] = m_tth
    M[n:, :n] = ginv @ c_t
    M[n:, n:] = ginv @ c_th
    return M


def variation_matrices(system, gamma, base, rep=MOMENTUM):
    """Coefficient matrices of the linearised dynamics at every stored node."""
    if not isinstance(base, Trajectory):
        raise ValidationError("base", "expected a Trajectory")
    if base.rep != rep:
        raise RepresentationMismatch(
            f"base trajectory is {base.rep}, variation requested in {rep}")
    if rep == MOMENTUM:
        return [
            _variation_matrix_momentum(
                _frame(system, gamma,
                       CotangentState(base.xs[k], base.fibers[k])))
            for k in range(len(base.t))]
    if rep == VELOCITY:
        return [_variation_matrix_velocity(system, base.xs[k], base.fibers[k])
                for k in range(len(base.t))]
    raise ValidationError("rep", f"unknown representation {rep!r}")


def integrate_variation(system, gamma, base, init, rep=MOMENTUM, mats=None):
    """Integrate the linearised dynamics along a stored base trajectory.

    Coefficient matrices are built at the stored nodes and interpolated
    linearly for the Runge-Kutta substeps; pass a list of initial states to
    reuse the matrices across several runs.
    """
    single = isinstance(init, VariationState)
    inits = [init] if single else list(init)
    if mats is None:
        mats = variation_matrices(system, gamma, base, rep)
    K = len(base.t) - 1
    h = base.h
    n = base.n
    series = []
    for vs in inits:
        z = np.concatenate([np.asarray(vs.tau, float), np.asarray(vs.fiber, float)])
        out = np.empty((K + 1, 2 * n))
        out[0] = z
        for k in range(K):
            m0 = mats[k]
            m1 = mats[k + 1]
            mh = 0.5 * (m0 + m1)
            k1 = m0 @ z
            k2 = mh @ (z + 0.5 * h * k1)
            k3 = mh @ (z + 0.5 * h * k2)
            k4 = m1 @ (z + h * k3)
            z = z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            out[k + 1] = z
        series.append(VariationSeries(t=base.t.copy(), tau=out[:, :n],
                                      fiber=out[:, n:], rep=rep))
    return series[0] if single else series


def _deviation_samples(system, gamma, base):
    """Coefficient fields of the deviation equation sampled along a trajectory."""
    K = len(base.t)
    n = base.n
    S = {"p": base.fibers, "v": np.empty((K, n)), "omega": np.empty(K),
         "alpha": np.empty((K, n)), "beta": np.empty((K, n)),
         "w": np.empty((K, n)), "sigma": np.empty(K), "pa": np.empty(K)}
    for k in range(K):
        fp = _frame(system, gamma, CotangentState(base.xs[k], base.fibers[k]))
        alpha, beta, _, sigma, pa, w = _coefficient_fields(fp)
        S["v"][k] = fp.v
        S["omega"][k] = fp.omega
        S["alpha"][k] = alpha
        S["beta"][k] = beta
        S["w"][k] = w
        S["sigma"][k] = sigma
        S["pa"][k] = pa
    return S


def deviation_ode_residual(system, gamma, base, variations, samples=None):
    """Worst defect of the second-order deviation equation along a trajectory.

    phi and its first two derivatives are evaluated from the covariant
    formulas on the supplied variation series; the result is normalised by
    max(1, max |phi-ddot|).  A list of series gives a list of defects with
    the coefficient samples shared.
    """
    single = isinstance(variations, VariationSeries)
    many = [variations] if single else list(variations)
    if samples is None:
        samples = _deviation_samples(system, gamma, base)
    out = []
    for series in many:
        if series.rep != MOMENTUM:
            raise RepresentationMismatch("deviation residual runs in momentum form")
        phi = np.einsum("ks,ks->k", samples["p"], series.tau)
        phi_dot = (-np.einsum("ks,ks->k", samples["v"] / samples["omega"][:, None],
                              series.fiber)
                   - np.einsum("ks,ks->k", samples["w"], series.tau))
        phi_ddot = (np.einsum("ks,ks->k", samples["alpha"], series.fiber)
                    + np.einsum("ks,ks->k", samples["beta"], series.tau))
        resid = phi_ddot + samples["pa"] * phi_dot - samples["sigma"] * phi
        out.append(float(np.abs(resid).max() / max(1.0, np.abs(phi_ddot).max())))
    return out[0] if single else out


@dataclass
class PointResiduals:
    x: np.ndarray
    p: np.ndarray
    weak_a: np.ndarray
    weak_b: np.ndarray
    add_sym: np.ndarray | None
    add_proj: np.ndarray | None

    def norms(self):
        out = {"weak_a": float(np.abs(self.weak_a).max()),
               "weak_b": float(np.abs(self.weak_b).max())}
        out["add_sym"] = (float(np.abs(self.add_sym).max())
                          if self.add_sym is not None else None)
        out["add_proj"] = (float(np.abs(self.add_proj).max())
                           if self.add_proj is not None else None)
        return out


@dataclass
class ResidualReport:
    points: list
    max_weak_a: float
    max_weak_b: float
    max_add_sym: float | None
    max_add_proj: float | None

    @classmethod
    def from_points(cls, points):
        def agg(key):
            vals = [pt.norms()[key] for pt in points if pt.norms()[key] is not None]
            return max(vals) if vals else None
        return cls(points=points, max_weak_a=agg("weak_a"), max_weak_b=agg("weak_b"),
                   max_add_sym=agg("add_sym"), max_add_proj=agg("add_proj"))


def evaluate_residuals(system, gamma, states):
    """All four residual families at each supplied cotangent state."""
    pts = []
    for c in states:
        wa, wb = weak_residuals(system, gamma, c)
        if system.n >= 3:
            add_sym, _, add_proj = additional_residuals(system, gamma, c)
        else:
            add_sym = add_proj = None
        pts.append(PointResiduals(x=c.x, p=c.p, weak_a=wa, weak_b=wb,
                                  add_sym=add_sym, add_proj=add_proj))
    return ResidualReport.from_points(pts)


@dataclass
class InvarianceReport:
    weak_a_diff: float
    weak_b_diff: float
    add_proj_diff: float | None
    add_sym_diff: float | None
    add_proj_magnitude: float | None


def connection_invariance_check(system, gamma, shift, states):
    """Residual differences under the connection displacement Gamma -> Gamma + T."""
    from .tensorfields import ExtendedConnection
    base = gamma if gamma is not None else ExtendedConnection.flat(system.n)
    shifted = base.shifted(shift)
    wa_d = wb_d = 0.0
    proj_d = sym_d = proj_mag = None
    if system.n >= 3:
        proj_d = sym_d = proj_mag = 0.0
    for c in states:
        wa0, wb0 = weak_residuals(system, base, c)
        wa1, wb1 = weak_residuals(system, shifted, c)
        wa_d = max(wa_d, float(np.abs(wa1 - wa0).max()))
        wb_d = max(wb_d, float(np.abs(wb1 - wb0).max()))
        if system.n >= 3:
            s0, _, pr0 = additional_residuals(system, base, c)
            s1, _, pr1 = additional_residuals(system, shifted, c)
            proj_d = max(proj_d, float(np.abs(pr1 - pr0).max()))
            sym_d = max(sym_d, float(np.abs(s1 - s0).max()))
            proj_mag = max(proj_mag, float(np.abs(pr0).max()))
    return InvarianceReport(weak_a_diff=wa_d, weak_b_diff=wb_d,
                            add_proj_diff=proj_d, add_sym_diff=sym_d,
                            add_proj_magnitude=proj_mag)


def b_symmetry_of_B(surface, system, nufield, gamma, y):
    """Symmetry defect of the force-shape operator with respect to the second
    fundamental form at a surface point."""
    from .hypersurface import second_fundamental_form, tangent_frame
    from .hypersurface import _lift_at
    if system.n < 3:
        raise DimensionTooSmall("needs n >= 3")
    sff = second_fundamental_form(surface, system, nufield, gamma, y)
    x, p = _lift_at(surface, nufield, y)
    _, Bop, _ = additional_residuals(system, gamma, CotangentState(x, p))
    frame = tangent_frame(surface, y)
    mism = sff.b @ Bop.matrix - Bop.matrix.T @ sff.b
    worst = 0.0
    for i in range(frame.shape[1]):
        for j in range(frame.shape[1]):
            worst = max(worst, abs(float(frame[:, i] @ mism @ frame[:, j])))
    return worst
