"""Manufactured-solution problems on a half annulus with anti-periodic ends.

The forcing ``J = -nu * Laplace(A)`` is derived symbolically, so the discrete
solver is checked against an exact field.
"""
import math

import numpy as np
import sympy as sp

from igamachine.assembly import assemble_system, build_dof_map
from igamachine.geometry import Material, MultiPatchModel, make_annular_patch, refine_model
from igamachine.linalg import solve_spd
from igamachine.postproc import l2_error

R_IN, R_OUT, NU = 1.0, 2.0, 1.0


def exact_and_forcing(kind="sin"):
    r, phi = sp.symbols("r phi", positive=True)
    trig = sp.sin(phi) if kind == "sin" else sp.cos(phi)
    a = r * trig * (r - R_IN) * (R_OUT - r)
    lap = sp.diff(a, r, 2) + sp.diff(a, r) / r + sp.diff(a, phi, 2) / r ** 2
    fa = sp.lambdify((r, phi), a, "numpy")
    fj = sp.lambdify((r, phi), sp.simplify(-NU * lap), "numpy")

    def polar(f):
        return lambda x, y: f(np.hypot(x, y), np.arctan2(y, x))

    return polar(fa), polar(fj)


def half_annulus(degree, level, forcing):
    """Two 90-degree patches over ``phi in [0, pi]``, pole pitch pi, zero Dirichlet data on both circles."""
    mat = {"core": Material(NU, j_src=forcing)}
    patches = [make_annular_patch(R_IN, R_OUT, 0.0, math.pi / 2, "core", radial_degree=degree),
               make_annular_patch(R_IN, R_OUT, math.pi / 2, math.pi, "core", radial_degree=degree)]
    tags = {(k, s): "dirichlet" for k in (0, 1) for s in ("u0", "u1")}
    tags[(0, "v0")] = "left"
    tags[(1, "v1")] = "right"
    return refine_model(MultiPatchModel(patches, mat, tags, ["rotor", "rotor"], 2), level)


def mms_errors(degree, levels, kind="sin"):
    """``(n_dof, L2 error)`` per refinement level."""
    exact, forcing = exact_and_forcing(kind)
    out = []
    for level in levels:
        m = half_annulus(degree, level, forcing)
        dm = build_dof_map(m, "rotor")
        sysm = assemble_system(m, dm)
        full = dm.expand(solve_spd(sysm.K, sysm.rhs(), 1e-13).x)
        out.append((dm.free_count, l2_error(m, dm, full, exact)))
    return out


def observed_orders(errors):
    return [math.log2(a / b) for (_, a), (_, b) in zip(errors, errors[1:])]
