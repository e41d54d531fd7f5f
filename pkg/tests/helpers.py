"""Shared model builders for the test suite."""

import numpy as np

from nslab import (ExtendedConnection, ForceField, HamiltonianModel,
                   LagrangianModel, NewtonianSystem)
from nslab import expr as ex


def kinetic(n, fiber="v"):
    return "0.5*(" + "+".join(f"{fiber}{i+1}^2" for i in range(n)) + ")"


def euclid_lagrangian(n):
    return LagrangianModel(n, kinetic(n))


def euclid_hamiltonian(n):
    return HamiltonianModel.from_expression(n, kinetic(n, "p"),
                                            lagrangian=euclid_lagrangian(n))


def euclid_system(n, q_comps):
    return NewtonianSystem(euclid_hamiltonian(n), ForceField(n, q_comps))


def quartic_lagrangian(n):
    return LagrangianModel(n, "0.25*(" + "+".join(f"v{i+1}^2" for i in range(n)) + ")^2")


def potential_lagrangian():
    """Quadratic-in-velocity model with an x-dependent metric and potential."""
    return LagrangianModel(
        2, "0.5*((1.2+0.2*sin(x1))*v1^2 + (1.0+0.1*x2^2)*v2^2) - 0.3*cos(x1)*x2")


def coupled_system():
    lag = potential_lagrangian()
    return NewtonianSystem(HamiltonianModel.from_lagrangian(lag),
                           ForceField(2, ["0.05*p2", "0.1*p1"]))


def scaled_momentum_force(n, factor="0.1"):
    return [f"{factor}*p{i+1}" for i in range(n)]


def radial_momentum_force(n, coef=0.1):
    mag = "sqrt(" + "+".join(f"p{i+1}^2" for i in range(n)) + ")"
    return [f"{coef}*{mag}*p{i+1}" for i in range(n)]


def swap_force(n):
    """x-independent force breaking both weak and additional normality."""
    comps = ["p2"] + ["0"] * (n - 1)
    return comps


def polynomial_connection(n, seed, scale=0.25, cls=ExtendedConnection):
    """Random symmetric connection with affine components in (x, p)."""
    rng = np.random.default_rng(seed)
    comps = np.empty((n, n, n), dtype=object)
    for k in range(n):
        for i in range(n):
            for j in range(n):
                c0, cx, cp = rng.normal(size=3) * scale
                e = ex.add(ex.const(c0),
                           ex.add(ex.mul(ex.const(cx), ex.sym("x", (k + j) % n + 1)),
                                  ex.mul(ex.const(cp), ex.sym("p", (i + j) % n + 1))))
                comps[k][i][j] = e
    return cls(n, comps)


def random_costates(n, count, seed, radius=(0.1, 10.0), x_scale=1.0):
    from nslab import CotangentState
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        direction = rng.normal(size=n)
        direction /= np.linalg.norm(direction)
        p = direction * rng.uniform(*radius)
        out.append(CotangentState(rng.normal(size=n) * x_scale, p))
    return out
