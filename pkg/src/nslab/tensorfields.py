"""Extended tensor fields and their calculus.

An extended tensor field assigns a tensor at the base point to every point
of the tangent or cotangent bundle; components here are expression trees
over (x, p) (momentum representation) or (x, v) (velocity representation).
Component array layout: upper indices first, then lower indices.  Gradient
index placement: the vertical momentum gradient prepends a new upper index
(axis 0); every other gradient prepends a new lower index (first axis of
the lower block).  Curvature layout: dynamic[k][r][i][j] and
riemann[k][r][i][j] with k, r upper and i, j lower.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import expr
from .calculus import _Table, SINGULAR_CUTOFF, invert_legendre_array
from .errors import (DegenerateOmega, InsufficientSamples,
                     RepresentationMismatch, ValidationError, ZeroMomentum)

MOMENTUM = "momentum"
VELOCITY = "velocity"


def _fiber_kind(rep):
    if rep == MOMENTUM:
        return "p"
    if rep == VELOCITY:
        return "v"
    raise ValidationError("representation", f"unknown representation {rep!r}")


def _fiber_env(rep, x, fiber):
    return {"x": x, _fiber_kind(rep): fiber}


class ExtendedTensorField:
    """Tensor-valued function on the (co)tangent bundle, symbolic components."""

    def __init__(self, n, r, s, rep, comps):
        self.n = int(n)
        self.r = int(r)
        self.s = int(s)
        self.rep = rep
        arr = np.empty((n,) * (r + s), dtype=object)
        src = np.asarray(comps, dtype=object).reshape(arr.shape) if (r + s) else None
        if r + s == 0:
            scalar = comps if isinstance(comps, expr.Expression) else np.asarray(comps, dtype=object).item()
            arr = np.empty((), dtype=object)
            arr[()] = scalar
        else:
            arr[...] = src
        fiber = _fiber_kind(rep)
        for e in arr.ravel() if arr.shape else [arr[()]]:
            expr.check_symbols(e, n, kinds=("x", fiber), where="tensor component")
        self.comps = arr
        self._table = None

    @classmethod
    def scalar(cls, n, rep, expression):
        return cls(n, 0, 0, rep, expression)

    def eval(self, x, fiber):
        if self._table is None:
            flat = self.comps.ravel() if self.comps.shape else [self.comps[()]]
            self._table = _Table(list(flat))
        vals = self._table(**_fiber_env(self.rep, x, fiber))
        return vals.reshape(self.comps.shape + vals.shape[1:])


class PullbackField:
    """Velocity-representation field composed with the inverse Legendre map.

    Evaluation maps the momentum fiber point through the Newton inversion and
    delegates to the underlying field; no symbolic components exist.
    """

    def __init__(self, base, lagrangian):
        if base.rep != VELOCITY:
            raise RepresentationMismatch("pullback expects a velocity-representation field")
        self.base = base
        self.lagrangian = lagrangian
        self.n = base.n
        self.r = base.r
        self.s = base.s
        self.rep = MOMENTUM

    def eval(self, x, fiber):
        v, _ = invert_legendre_array(self.lagrangian, np.asarray(x, float),
                                     np.asarray(fiber, float))
        return self.base.eval(x, v)


def convert_representation(field, lagrangian):
    """Compose a field with the Legendre map or its inverse.

    momentum -> velocity is exact symbolic substitution p_i -> dL/dv^i;
    velocity -> momentum needs the Newton inversion, so the result is an
    evaluation-only pullback.
    """
    if field.rep == MOMENTUM:
        lv = lagrangian.table("v").exprs
        mapping = {expr.sym("p", i + 1): lv[i] for i in range(lagrangian.n)}
        if field.comps.shape:
            comps = np.empty_like(field.comps)
            for idx in np.ndindex(field.comps.shape):
                comps[idx] = field.comps[idx].substitute(mapping)
        else:
            comps = field.comps[()].substitute(mapping)
        return ExtendedTensorField(field.n, field.r, field.s, VELOCITY, comps)
    return PullbackField(field, lagrangian)


def vertical_gradient(field):
    """Fiber derivative: adds an upper index (momentum) or a lower one
    (velocity)."""
    n = field.n
    kind = _fiber_kind(field.rep)
    syms = [expr.sym(kind, q + 1) for q in range(n)]
    if field.rep == MOMENTUM:
        out = np.empty((n,) + field.comps.shape, dtype=object)
        for q in range(n):
            for idx in np.ndindex(field.comps.shape) if field.comps.shape else [()]:
                out[(q,) + idx] = field.comps[idx].diff(syms[q])
        return ExtendedTensorField(n, field.r + 1, field.s, field.rep, out)
    out = np.empty(field.comps.shape[:field.r] + (n,) + field.comps.shape[field.r:],
                   dtype=object)
    for idx in np.ndindex(field.comps.shape) if field.comps.shape else [()]:
        up, lo = idx[:field.r], idx[field.r:]
        for q in range(n):
            out[up + (q,) + lo] = field.comps[idx].diff(syms[q])
    return ExtendedTensorField(n, field.r, field.s + 1, field.rep, out)


class ExtendedConnection:
    """Symmetric extended affine connection, components over (x, fiber).

    Symmetry in the two lower indices is exact: structurally asymmetric input
    is replaced by the symmetric average at construction.
    """

    def __init__(self, n, comps, rep=MOMENTUM):
        self.n = int(n)
        self.rep = rep
        fiber = _fiber_kind(rep)
        arr = np.empty((n, n, n), dtype=object)
        src = np.asarray(comps, dtype=object)
        if src.shape != (n, n, n):
            raise ValidationError("gamma", f"expected shape ({n}, {n}, {n})")
        for k in range(n):
            for i in range(n):
                arr[k][i][i] = src[k][i][i]
                for j in range(i + 1, n):
                    a, b = src[k][i][j], src[k][j][i]
                    e = a if a == b else expr.mul(expr.const(0.5), expr.add(a, b))
                    arr[k][i][j] = e
                    arr[k][j][i] = e
        for e in arr.ravel():
            expr.check_symbols(e, n, kinds=("x", fiber), where="gamma component")
        self.comps = arr
        self._tables = {}

    @classmethod
    def flat(cls, n, rep=MOMENTUM):
        zero = expr.const(0.0)
        return cls(n, np.full((n, n, n), zero, dtype=object), rep=rep)

    @property
    def is_flat(self):
        return all(e.is_zero() for e in self.comps.ravel())

    def _table(self, key):
        tab = self._tables.get(key)
        if tab is not None:
            return tab
        n = self.n
        fiber = _fiber_kind(self.rep)
        if key == "value":
            tab = _Table(self.comps)
        else:
            kind = "x" if key == "dx" else fiber
            tab = _Table([[[[self.comps[k][i][j].diff(expr.sym(kind, q + 1))
                             for j in range(n)] for i in range(n)]
                           for k in range(n)] for q in range(n)])
        self._tables[key] = tab
        return tab

    def values(self, x, fiber):
        return self._table("value")(**_fiber_env(self.rep, x, fiber))

    def dx(self, x, fiber):
        """[q][k][i][j] = d Gamma^k_ij / d x^q."""
        return self._table("dx")(**_fiber_env(self.rep, x, fiber))

    def dfiber(self, x, fiber):
        """[q][k][i][j] = d Gamma^k_ij / d fiber_q."""
        return self._table("dfiber")(**_fiber_env(self.rep, x, fiber))

    def to_velocity(self, lagrangian):
        """Components composed with the Legendre map, as expressions over (x, v)."""
        if self.rep != MOMENTUM:
            return self
        lv = lagrangian.table("v").exprs
        mapping = {expr.sym("p", i + 1): lv[i] for i in range(lagrangian.n)}
        comps = np.empty_like(self.comps)
        for idx in np.ndindex(self.comps.shape):
            comps[idx] = self.comps[idx].substitute(mapping)
        return ExtendedConnection(self.n, comps, rep=VELOCITY)

    def shifted(self, shift):
        """Connection with components Gamma + T."""
        if shift.rep != self.rep:
            raise RepresentationMismatch("connection shift representation differs")
        comps = np.empty_like(self.comps)
        for idx in np.ndindex(self.comps.shape):
            comps[idx] = expr.add(self.comps[idx], shift.comps[idx])
        return ExtendedConnection(self.n, comps, rep=self.rep)


class ConnectionShift(ExtendedConnection):
    """Symmetric (1,2) tensor used to displace a connection."""


def horizontal_gradient(field, gamma):
    """Spatial covariant derivative; adds a lower index in front of the
    existing lower block.  The field and the connection must be supplied in
    the same representation."""
    if isinstance(field, PullbackField):
        raise RepresentationMismatch("pullback fields have no symbolic gradient")
    if field.rep != gamma.rep:
        raise RepresentationMismatch(
            f"field is {field.rep}, connection is {gamma.rep}")
    n = field.n
    r, s = field.r, field.s
    fiber = _fiber_kind(field.rep)
    fsyms = [expr.sym(fiber, i + 1) for i in range(n)]
    xsyms = [expr.sym("x", i + 1) for i in range(n)]
    G = gamma.comps
    out = np.empty(field.comps.shape[:r] + (n,) + field.comps.shape[r:], dtype=object)
    for idx in np.ndindex(field.comps.shape) if field.comps.shape else [()]:
        up, lo = idx[:r], idx[r:]
        X = field.comps[idx]
        dXf = [X.diff(fs) for fs in fsyms]
        for q in range(n):
            e = X.diff(xsyms[q])
            if field.rep == MOMENTUM:
                for a in range(n):
                    for b in range(n):
                        e = expr.add(e, expr.mul(expr.mul(fsyms[a], G[a][q][b]), dXf[b]))
            else:
                for a in range(n):
                    for b in range(n):
                        e = expr.sub(e, expr.mul(expr.mul(fsyms[a], G[b][q][a]), dXf[b]))
            for k in range(r):
                for a in range(n):
                    swapped = up[:k] + (a,) + up[k + 1:] + lo
                    e = expr.add(e, expr.mul(G[up[k]][q][a], field.comps[swapped]))
            for k in range(s):
                for b in range(n):
                    swapped = up + lo[:k] + (b,) + lo[k + 1:]
                    e = expr.sub(e, expr.mul(G[b][q][lo[k]], field.comps[swapped]))
            out[up + (q,) + lo] = e
    return ExtendedTensorField(n, r, s + 1, field.rep, out)


@dataclass(frozen=True)
class Projector:
    """Pointwise projector along the velocity onto the null space of p."""
    matrix: np.ndarray

    def on_vector(self, vec):
        return self.matrix @ vec

    def on_covector(self, cov):
        return cov @ self.matrix


def projector(hmodel, costate):
    """P^r_s = delta^r_s - p_s v^r / omega at a cotangent state."""
    p = costate.p
    if np.linalg.norm(p) == 0.0:
        raise ZeroMomentum("projector undefined at p = 0")
    data = hmodel.partials(costate.x, p, order=1)
    omega = float(np.dot(p, data.dp))
    if abs(omega) <= SINGULAR_CUTOFF:
        raise DegenerateOmega("projector divides by omega = 0")
    n = len(p)
    return Projector(np.eye(n) - np.outer(data.dp, p) / omega)


@dataclass(frozen=True)
class CurvaturePair:
    dynamic: np.ndarray    # [k][r][i][j]
    riemann: np.ndarray    # [k][r][i][j]


def curvature_tensors(gamma, costate):
    """Dynamic curvature -dGamma/dp and the extended Riemann-type tensor."""
    x, p = costate.x, costate.p
    G = gamma.values(x, p)
    Gx = gamma.dx(x, p)
    Gp = gamma.dfiber(x, p)
    dynamic = -np.moveaxis(Gp, 0, 1)      # [k][r][i][j] = -dGamma^k_ij/dp_r
    riemann = (np.einsum("ikjr->krij", Gx) - np.einsum("jkir->krij", Gx)
               + np.einsum("kim,mjr->krij", G, G)
               - np.einsum("kjm,mir->krij", G, G)
               + np.einsum("a,ami,mkjr->krij", p, G, Gp)
               - np.einsum("a,amj,mkir->krij", p, G, Gp))
    return CurvaturePair(dynamic=dynamic, riemann=riemann)


class FieldPoint:
    """Numeric frame at one cotangent point: all first- and second-order data
    of the Hamiltonian, force and connection that the residual and variational
    formulas consume.

    Index conventions: hxp[q][k] = d2H/dx^q dp_k; qx[s][r] = dQ_r/dx^s;
    qp[r][s] = dQ_s/dp_r; gam[k][i][j]; gam_x/gam_p prepend the derivative.
    """

    def __init__(self, hmodel, gamma, x, p, force=None):
        self.n = hmodel.n
        self.x = np.asarray(x, dtype=float)
        self.p = np.asarray(p, dtype=float)
        data = hmodel.partials(self.x, self.p, order=2)
        self.h = data.value
        self.v = data.dp
        self.omega = float(np.dot(self.p, self.v))
        self.ginv = data.dpp
        self.hx = data.dx
        self.hxp = data.dxp
        self.hxx = data.dxx
        n = self.n
        if force is None:
            self.q = np.zeros(n)
            self.qx = np.zeros((n, n))
            self.qp = np.zeros((n, n))
        else:
            self.q = force.values(self.x, self.p)
            self.qx = force.dx(self.x, self.p)
            self.qp = force.dp(self.x, self.p)
        if gamma is None or gamma.is_flat:
            self.flat = True
            self.gam = np.zeros((n, n, n))
            self.gam_x = np.zeros((n, n, n, n))
            self.gam_p = np.zeros((n, n, n, n))
        else:
            if gamma.rep != MOMENTUM:
                raise RepresentationMismatch("point frame needs a momentum connection")
            self.flat = False
            self.gam = gamma.values(self.x, self.p)
            self.gam_x = gamma.dx(self.x, self.p)
            self.gam_p = gamma.dfiber(self.x, self.p)

    def require_omega(self):
        if abs(self.omega) <= SINGULAR_CUTOFF:
            raise DegenerateOmega("omega vanishes at evaluation point")

    def require_momentum(self):
        if np.linalg.norm(self.p) == 0.0:
            raise ZeroMomentum("operation undefined at p = 0")

    @cached_property
    def nabla_h(self):
        return self.hx + np.einsum("a,asb,b->s", self.p, self.gam, self.v)

    @cached_property
    def omega_x(self):
        return self.hxp @ self.p

    @cached_property
    def vt_omega(self):
        return self.v + self.ginv @ self.p

    @cached_property
    def nabla_omega(self):
        return self.omega_x + np.einsum("a,asb,b->s", self.p, self.gam, self.vt_omega)

    @cached_property
    def nabla_q(self):
        """[s][r] = horizontal derivative of Q_r in direction s."""
        return (self.qx + np.einsum("a,asb,br->sr", self.p, self.gam, self.qp)
                - np.einsum("bsr,b->sr", self.gam, self.q))

    @cached_property
    def nabla_vt_h(self):
        """[r][q] = horizontal derivative of the velocity field v^q."""
        return (self.hxp + np.einsum("a,arb,bq->rq", self.p, self.gam, self.ginv)
                + np.einsum("qra,a->rq", self.gam, self.v))

    @cached_property
    def p_up(self):
        return self.ginv @ self.p

    @cached_property
    def p_norm2(self):
        return float(self.p @ self.p_up)

    @cached_property
    def projector(self):
        self.require_omega()
        return np.eye(self.n) - np.outer(self.v, self.p) / self.omega

    @cached_property
    def dw_dx(self):
        """[i][j] = d(nabla_j H)/dx^i."""
        return (self.hxx
                + np.einsum("a,iajb,b->ij", self.p, self.gam_x, self.v)
                + np.einsum("a,ajb,ib->ij", self.p, self.gam, self.hxp))

    @cached_property
    def dw_dp(self):
        """[m][j] = d(nabla_j H)/dp_m."""
        return (self.hxp.T
                + np.einsum("mjb,b->mj", self.gam, self.v)
                + np.einsum("a,majb,b->mj", self.p, self.gam_p, self.v)
                + np.einsum("a,ajb,bm->mj", self.p, self.gam, self.ginv))


def commutator_residual(hmodel, gamma, costate, force=None):
    """Identity defects of the two curvature commutators applied to H.

    Both returned matrices vanish identically for exact arithmetic; their
    numeric size measures the consistency of the horizontal gradient with the
    curvature tensors.
    """
    fp = FieldPoint(hmodel, gamma, costate.x, costate.p, force=force)
    pair = curvature_tensors(gamma, costate) if gamma is not None else None
    n = fp.n
    D = pair.dynamic if pair is not None else np.zeros((n, n, n, n))
    R = pair.riemann if pair is not None else np.zeros((n, n, n, n))
    W = fp.nabla_h
    grad_w = (fp.dw_dx + np.einsum("a,aib,bj->ij", fp.p, fp.gam, fp.dw_dp)
              - np.einsum("bij,b->ij", fp.gam, W))
    res1 = grad_w - grad_w.T - np.einsum("k,ksij,s->ij", fp.p, R, fp.v)
    mixed = fp.nabla_vt_h - fp.dw_dp.T
    res2 = mixed - np.einsum("k,kjis,s->ij", fp.p, D, fp.v)
    return res1, res2


def concordance_residual(lagrangian, gamma, state):
    """Horizontal derivative of the fiber gradient of L; zero iff the
    connection is concordant with L at this point."""
    x, v = state.x, state.v
    lv = lagrangian.lv(x, v)
    g = lagrangian.lvv(x, v)
    lvx = lagrangian.lvx(x, v)
    if gamma is None:
        n = lagrangian.n
        gam = np.zeros((n, n, n))
    elif gamma.rep == VELOCITY:
        gam = gamma.values(x, v)
    else:
        gam = gamma.values(x, lv)
    return (lvx.T - np.einsum("a,bqa,bs->qs", v, gam, g)
            - np.einsum("bqs,b->qs", gam, lv))


def covariant_time_derivative(values, valence, xs, fibers, h, gamma):
    """Covariant derivative of tensor samples along a sampled curve.

    values: (K, n, ..., n) samples; valence = (r, s); xs, fibers: (K, n)
    samples of the curve and its lift; h: parameter step.  Time derivatives
    use central differences inside and one-sided second-order stencils at the
    ends; connection terms are evaluated on the lift.
    """
    values = np.asarray(values, dtype=float)
    xs = np.asarray(xs, dtype=float)
    fibers = np.asarray(fibers, dtype=float)
    K = values.shape[0]
    if K < 3:
        raise InsufficientSamples("need at least 3 samples along the curve")
    r, s = valence
    dt = np.empty_like(values)
    dt[1:-1] = (values[2:] - values[:-2]) / (2.0 * h)
    dt[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * h)
    dt[-1] = (3.0 * values[-1] - 4.0 * values[-2] + values[-3]) / (2.0 * h)
    xdot = np.empty_like(xs)
    xdot[1:-1] = (xs[2:] - xs[:-2]) / (2.0 * h)
    xdot[0] = (-3.0 * xs[0] + 4.0 * xs[1] - xs[2]) / (2.0 * h)
    xdot[-1] = (3.0 * xs[-1] - 4.0 * xs[-2] + xs[-3]) / (2.0 * h)
    if gamma is None or gamma.is_flat:
        return dt
    out = dt.copy()
    for k in range(K):
        G = gamma.values(xs[k], fibers[k])
        up_weight = np.einsum("m,kma->ka", xdot[k], G)
        for axis in range(r):
            out[k] += np.moveaxis(
                np.tensordot(up_weight, values[k], axes=([1], [axis])), 0, axis)
        for axis in range(r, r + s):
            out[k] -= np.moveaxis(
                np.tensordot(up_weight, values[k], axes=([0], [axis])), 0, axis)
    return out
