"""Parametric hypersurfaces, the scalar field fixing initial momentum
magnitude, shift simulation with deviation functions, and the second
fundamental form.

A hypersurface is a chart map x(y) over m = n - 1 parameters.  Its normal
covector is computed from cofactor minors of the tangent frame, normalised
to unit Euclidean length, with the overall sign fixed once at the base
point (first nonzero component positive) so that it varies continuously.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from . import expr
from .calculus import _Table
from .dynamics import integrate_batch
from .errors import (DegenerateOmega, InsufficientSamples, RankDeficient,
                     ValidationError, VanishingNu, ZeroMomentum, ZeroNu)

NORMAL_FD_STEP = 1e-4
PFAFF_FD_STEP = 1e-3


class Hypersurface:
    """Chart map x(y) on a declared parameter box."""

    def __init__(self, n, chart, box, base_point=None):
        self.n = int(n)
        self.m = self.n - 1
        chart = [expr.parse(c) if isinstance(c, str) else c for c in chart]
        if len(chart) != self.n:
            raise ValidationError("chart", f"expected {self.n} components")
        for e in chart:
            expr.check_symbols(e, 0, kinds=("y",), m=self.m, where="chart component")
        self.chart = chart
        box = np.asarray(box, dtype=float)
        if box.shape != (self.m, 2):
            raise ValidationError("box", f"expected shape ({self.m}, 2)")
        self.box = box
        self.y0 = (np.asarray(base_point, dtype=float) if base_point is not None
                   else box[:, 0].copy())
        if self.y0.shape != (self.m,):
            raise ValidationError("base_point", f"expected {self.m} entries")
        ys = [expr.sym("y", i + 1) for i in range(self.m)]
        self._chart_table = _Table(chart)
        self._frame_table = _Table([[c.diff(s) for s in ys] for c in chart])
        self._base_sign = None

    def chart_at(self, y):
        return self._chart_table(y=np.asarray(y, dtype=float))

    def frame_at(self, y):
        return self._frame_table(y=np.asarray(y, dtype=float))


def tangent_frame(surface, y):
    """Columns are the tangent vectors of the coordinate curves at y."""
    tau = surface.frame_at(y)
    sv = np.linalg.svd(tau, compute_uv=False)
    if sv[-1] <= 1e-10 * max(sv[0], 1.0):
        raise RankDeficient(f"tangent frame rank deficient at y={y}")
    return tau


def _raw_normal(surface, y):
    tau = surface.frame_at(y)
    n = surface.n
    raw = np.empty(n)
    for s in range(n):
        minor = np.delete(tau, s, axis=0)
        raw[s] = (-1.0) ** s * np.linalg.det(minor)
    return raw, tau


def normal_covector(surface, y):
    """Unit-normalised annihilator of the tangent frame, sign continuous
    from the base point."""
    raw, tau = _raw_normal(surface, y)
    scale = np.prod(np.linalg.norm(tau, axis=0)) or 1.0
    norm = np.linalg.norm(raw)
    if norm <= 1e-12 * scale:
        raise RankDeficient(f"tangent frame rank deficient at y={y}")
    if surface._base_sign is None:
        raw0, _ = _raw_normal(surface, surface.y0)
        norm0 = np.linalg.norm(raw0)
        if norm0 == 0.0:
            raise RankDeficient("tangent frame rank deficient at the base point")
        unit0 = raw0 / norm0
        lead = unit0[np.argmax(np.abs(unit0) > 1e-12)]
        surface._base_sign = 1.0 if lead > 0 else -1.0
    return surface._base_sign * raw / norm


def _normal_derivatives(surface, y, delta=NORMAL_FD_STEP):
    """dn[i][s] = central difference of the normal covector along y^i."""
    m = surface.m
    dn = np.empty((m, surface.n))
    for i in range(m):
        step = np.zeros(m)
        step[i] = delta
        dn[i] = (normal_covector(surface, y + step)
                 - normal_covector(surface, y - step)) / (2.0 * delta)
    return dn


@dataclass
class NormalField:
    """Unit normal covectors sampled on a parameter grid."""
    axes: tuple
    values: np.ndarray       # (*grid, n)

    def value_near(self, y):
        idx = tuple(int(np.argmin(np.abs(ax - yi)))
                    for ax, yi in zip(self.axes, np.atleast_1d(y)))
        return self.values[idx]


def sample_normals(surface, axes):
    """Evaluate the canonical normal covector on a full grid."""
    axes = tuple(np.asarray(a, dtype=float) for a in axes)
    shape = tuple(len(a) for a in axes)
    values = np.empty(shape + (surface.n,))
    for idx in np.ndindex(*shape):
        y = np.array([axes[a][idx[a]] for a in range(len(axes))])
        values[idx] = normal_covector(surface, y)
    return NormalField(axes=axes, values=values)


@dataclass
class NuField:
    """Scalar momentum magnitude on the parameter grid."""
    axes: tuple
    values: np.ndarray
    y0: np.ndarray
    nu0: float
    path_discrepancy: float | None = None

    def index_near(self, y):
        return tuple(int(np.argmin(np.abs(ax - yi)))
                     for ax, yi in zip(self.axes, np.atleast_1d(y)))

    def value_near(self, y):
        return float(self.values[self.index_near(y)])


def _pfaff_rhs(surface, system, nu, y):
    """Right-hand sides psi_i(nu, y) of the complete system for nu."""
    x = surface.chart_at(y)
    tau = surface.frame_at(y)
    nvec = normal_covector(surface, y)
    dn = _normal_derivatives(surface, y)
    p = nu * nvec
    data = system.model.partials(x, p, order=1)
    omega = float(p @ data.dp)
    if abs(omega) <= 1e-14:
        raise DegenerateOmega(f"omega vanishes on the lift at y={y}")
    qv = system.force.values(x, p)
    psi = (-(nu**2 / omega) * (dn @ data.dp)
           - nu * ((data.dx / omega - qv) @ tau))
    return psi


def _march_axis(surface, system, field_values, axes, start_idx, axis, nu_start):
    """RK4 march of nu along one grid axis, both directions from start_idx."""
    ax = axes[axis]
    m = len(axes)

    def y_of(idx, coord):
        y = np.array([axes[a][idx[a]] for a in range(m)])
        y[axis] = coord
        return y

    def rhs(nu, coord, idx):
        return _pfaff_rhs(surface, system, nu, y_of(idx, coord))[axis]

    for direction in (1, -1):
        idx = list(start_idx)
        nu = nu_start
        k = start_idx[axis]
        field_values[tuple(idx)] = nu
        while 0 <= k + direction < len(ax):
            h = ax[k + direction] - ax[k]
            y_k = ax[k]
            k1 = rhs(nu, y_k, idx)
            k2 = rhs(nu + 0.5 * h * k1, y_k + 0.5 * h, idx)
            k3 = rhs(nu + 0.5 * h * k2, y_k + 0.5 * h, idx)
            k4 = rhs(nu + h * k3, y_k + h, idx)
            nu = nu + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            if abs(nu) < 1e-12:
                raise VanishingNu(f"nu vanished while marching axis {axis}")
            k += direction
            idx[axis] = k
            field_values[tuple(idx)] = nu


def _solve_nu_sweep(surface, system, nu0, axes, base_idx, order):
    shape = tuple(len(ax) for ax in axes)
    values = np.full(shape, np.nan)
    values[base_idx] = nu0
    done_axes = []
    for axis in order:
        ranges = [range(shape[a]) if a in done_axes else [base_idx[a]]
                  for a in range(len(axes))]
        for idx in product(*ranges):
            _march_axis(surface, system, values, axes, tuple(idx), axis,
                        float(values[tuple(idx)]))
        done_axes.append(axis)
    return values


def _default_axis(lo, hi, count=201):
    return np.linspace(lo, hi, count)


def solve_nu_curve(surface, system, nu0, axis=None):
    """Solve the single ordinary differential equation for nu on a curve."""
    if surface.m != 1:
        raise ValidationError("surface", "curve solver needs n = 2")
    if nu0 == 0.0:
        raise ZeroNu("nu0 must be nonzero")
    if axis is None:
        axis = _default_axis(surface.box[0, 0], surface.box[0, 1])
    axis = np.asarray(axis, dtype=float)
    base_idx = (int(np.argmin(np.abs(axis - surface.y0[0]))),)
    values = _solve_nu_sweep(surface, system, nu0, (axis,), base_idx, [0])
    return NuField(axes=(axis,), values=values, y0=surface.y0.copy(), nu0=nu0)


def solve_nu_grid(surface, system, nu0, axes=None, counts=None):
    """Axis-by-axis integration of the complete system for nu on a grid.

    Marches in the fixed axis order (first parameter first), then again in
    reversed order; the maximal difference between the two sweeps is stored
    as an integrability diagnostic.
    """
    if surface.m < 2:
        raise ValidationError("surface", "grid solver needs n >= 3")
    if nu0 == 0.0:
        raise ZeroNu("nu0 must be nonzero")
    if axes is None:
        counts = counts or [31] * surface.m
        axes = tuple(_default_axis(surface.box[i, 0], surface.box[i, 1], counts[i])
                     for i in range(surface.m))
    axes = tuple(np.asarray(a, dtype=float) for a in axes)
    base_idx = tuple(int(np.argmin(np.abs(ax - y0i)))
                     for ax, y0i in zip(axes, surface.y0))
    fwd = _solve_nu_sweep(surface, system, nu0, axes, base_idx,
                          list(range(surface.m)))
    rev = _solve_nu_sweep(surface, system, nu0, axes, base_idx,
                          list(reversed(range(surface.m))))
    return NuField(axes=axes, values=fwd, y0=surface.y0.copy(), nu0=nu0,
                   path_discrepancy=float(np.abs(fwd - rev).max()))


def pfaff_compatibility_residual(surface, system, nufield, y,
                                 dy=PFAFF_FD_STEP, dnu=PFAFF_FD_STEP):
    """Antisymmetric part of the mixed second derivatives of nu.

    Identically zero for m = 1 where no compatibility constraint exists.
    """
    m = surface.m
    y = np.asarray(y, dtype=float)
    if m < 2:
        return np.zeros((m, m))
    nu = nufield.value_near(y) if isinstance(nufield, NuField) else float(nufield)
    psi0 = _pfaff_rhs(surface, system, nu, y)
    dpsi_dnu = (_pfaff_rhs(surface, system, nu + dnu, y)
                - _pfaff_rhs(surface, system, nu - dnu, y)) / (2.0 * dnu)
    theta = np.empty((m, m))
    for j in range(m):
        step = np.zeros(m)
        step[j] = dy
        dpsi_dyj = (_pfaff_rhs(surface, system, nu, y + step)
                    - _pfaff_rhs(surface, system, nu, y - step)) / (2.0 * dy)
        theta[:, j] = dpsi_dyj + dpsi_dnu * psi0[j]
    return theta - theta.T


@dataclass
class DeviationSeries:
    t: np.ndarray
    phi: np.ndarray          # (K+1, m)

    @property
    def max_abs(self):
        return float(np.abs(self.phi).max())


@dataclass
class ShiftFamily:
    """Grid of trajectories with the deviation functions of the family."""
    t: np.ndarray                 # (K+1,)
    axes: tuple                   # parameter axes
    xs: np.ndarray                # (K+1, *grid, n)
    ps: np.ndarray                # (K+1, *grid, n)
    tau: np.ndarray               # (K+1, *grid, n, m)
    phi: np.ndarray               # (K+1, *grid, m)
    nu: NuField
    max_abs_phi: np.ndarray = field(init=False)   # (m,)

    def __post_init__(self):
        m = self.phi.shape[-1]
        flat = self.phi.reshape(-1, m)
        self.max_abs_phi = np.abs(flat).max(axis=0)

    def deviation_series(self, idx):
        return DeviationSeries(t=self.t, phi=self.phi[(slice(None),) + tuple(idx)])


def _grid_derivative(arr, axis, spacing):
    """Second-order differences along one grid axis (one-sided at edges)."""
    out = np.empty_like(arr)
    src = np.moveaxis(arr, axis, 0)
    dst = np.moveaxis(out, axis, 0)
    if src.shape[0] < 3:
        raise InsufficientSamples("grid axis needs at least 3 nodes")
    dst[1:-1] = (src[2:] - src[:-2]) / (2.0 * spacing)
    dst[0] = (-3.0 * src[0] + 4.0 * src[1] - src[2]) / (2.0 * spacing)
    dst[-1] = (3.0 * src[-1] - 4.0 * src[-2] + src[-3]) / (2.0 * spacing)
    return out


def run_shift(surface, system, nufield, t_end, h):
    """Shift the hypersurface along trajectories started from the lift
    p = nu * normal, and measure the deviation functions on the family.

    Tangent frames along the shifted family are computed from neighbouring
    trajectories, matching the construction of the family itself.
    """
    axes = nufield.axes
    m = surface.m
    if len(axes) != m:
        raise ValidationError("nufield", "grid dimension differs from surface")
    grid_shape = tuple(len(ax) for ax in axes)
    mesh = np.meshgrid(*axes, indexing="ij")
    ys = np.stack([g.ravel() for g in mesh])         # (m, B)
    xs0 = surface.chart_at(ys).T                     # (B, n)
    normals = sample_normals(surface, axes).values.reshape(-1, surface.n)
    nus = nufield.values.reshape(-1)
    ps0 = nus[:, None] * normals
    t, xs, ps = integrate_batch(system, xs0, ps0, t_end, h)
    K = len(t)
    xs = xs.reshape((K,) + grid_shape + (surface.n,))
    ps = ps.reshape((K,) + grid_shape + (surface.n,))
    tau = np.empty(xs.shape + (m,))
    for a in range(m):
        spacing = axes[a][1] - axes[a][0]
        tau[..., a] = _grid_derivative(xs, 1 + a, spacing)
    phi = np.einsum("...s,...sm->...m", ps, tau)
    return ShiftFamily(t=t, axes=axes, xs=xs, ps=ps, tau=tau, phi=phi, nu=nufield)


@dataclass
class SecondFundamentalForm:
    b: np.ndarray            # (n, n) outer components
    beta: np.ndarray         # (m, m) inner components
    symmetry_defect: float


def _lift_at(surface, nufield, y):
    x = surface.chart_at(y)
    nu = nufield.value_near(y) if isinstance(nufield, NuField) else float(nufield)
    return x, nu * normal_covector(surface, y)


def second_fundamental_form(surface, system, nufield, gamma, y,
                            delta=NORMAL_FD_STEP):
    """Outer and inner components of the second fundamental form at y.

    The covariant derivative of the momentum lift across the surface is
    built from central differences of nu * normal with nu frozen at its
    value at y; the projector annihilates the discarded variation of nu
    exactly, so the form is unaffected.
    """
    y = np.asarray(y, dtype=float)
    m = surface.m
    n = surface.n
    x, p = _lift_at(surface, nufield, y)
    nu = nufield.value_near(y) if isinstance(nufield, NuField) else float(nufield)
    tau = tangent_frame(surface, y)
    data = system.model.partials(x, p, order=1)
    omega = float(p @ data.dp)
    if abs(omega) <= 1e-14:
        raise DegenerateOmega("omega vanishes on the lift")
    P = np.eye(n) - np.outer(data.dp, p) / omega
    dp = np.empty((m, n))
    for i in range(m):
        step = np.zeros(m)
        step[i] = delta
        dp[i] = nu * (normal_covector(surface, y + step)
                      - normal_covector(surface, y - step)) / (2.0 * delta)
    if gamma is not None and not gamma.is_flat:
        G = gamma.values(x, p)
        dp = dp - np.einsum("asr,a,si->ir", G, p, tau)
    # b(E_j) = -P* f(P E_j): expand P E_j over the frame, push through f
    coeff, *_ = np.linalg.lstsq(tau, P, rcond=None)     # (m, n) columns solve tau c = P e_j
    f_cols = dp.T @ coeff                               # (n, n): f(P E_j) as columns
    bmat = -(P.T @ f_cols)                              # rows indexed by covector slot
    beta = tau.T @ bmat @ tau
    return SecondFundamentalForm(b=bmat, beta=beta,
                                 symmetry_defect=float(np.abs(bmat - bmat.T).max()))


def surface_with_prescribed_form(point, momentum, beta, nu0, box_half=0.5):
    """Graph hypersurface through `point`, tangent to the null space of the
    momentum covector, whose second fundamental form at the point is `beta`.

    The graph height is quadratic over an orthonormal basis of the null
    space; its sign absorbs the base-point orientation of the canonical
    normal so that the constructor and the extractor agree.
    """
    from .calculus import ChartPoint
    if isinstance(point, ChartPoint):
        point = point.x
    point = np.asarray(point, dtype=float)
    momentum = np.asarray(momentum, dtype=float)
    n = len(point)
    m = n - 1
    if np.linalg.norm(momentum) == 0.0:
        raise ZeroMomentum("prescribed-form construction needs p != 0")
    if nu0 == 0.0:
        raise ZeroNu("nu0 must be nonzero")
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (m, m):
        raise ValidationError("beta", f"expected shape ({m}, {m})")
    if np.abs(beta - beta.T).max() > 1e-12 * max(1.0, np.abs(beta).max()):
        raise ValidationError("beta", "must be symmetric")
    _, _, vt = np.linalg.svd(momentum[None, :])
    u_n = vt[0] if vt[0] @ momentum > 0 else -vt[0]
    frame = vt[1:]
    lead = u_n[np.argmax(np.abs(u_n) > 1e-12)]
    sigma = 1.0 if lead > 0 else -1.0
    ys = [expr.sym("y", i + 1) for i in range(m)]
    z = expr.const(0.0)
    for i in range(m):
        for j in range(m):
            c = sigma * beta[i, j] / (2.0 * nu0)
            z = expr.add(z, expr.mul(expr.const(c), expr.mul(ys[i], ys[j])))
    chart = []
    for s in range(n):
        e = expr.const(point[s])
        for i in range(m):
            e = expr.add(e, expr.mul(expr.const(frame[i, s]), ys[i]))
        e = expr.add(e, expr.mul(expr.const(u_n[s]), z))
        chart.append(e)
    box = np.array([[-box_half, box_half]] * m)
    surf = Hypersurface(n, chart, box, base_point=np.zeros(m))
    surf.adapted_frame = frame
    surf.adapted_axis = u_n
    surf.orientation = sigma
    return surf
