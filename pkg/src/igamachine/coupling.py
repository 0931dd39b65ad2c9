"""Dirichlet-to-Neumann coupling of rotor and stator across the air-gap circle.

Trace functions are parametrised by the angle ``phi`` measured from the
owning subdomain's ``left`` boundary, over one pole pitch, and extend
anti-periodically: ``f(phi + pitch) = -f(phi)``.  A rotor angle ``offset``
relates the frames: ``phi_stator = phi_rotor + offset``.

The rotor takes the Dirichlet role and the stator the Neumann role.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .assembly import (DEFAULT_RULE, AssembledSystem, DofMap, apply_dirichlet_trace, assemble_mass,
                       assemble_system, build_dof_map)
from .errors import StructuralError, ValidationError
from .geometry import MultiPatchModel, edge_curve, edge_local_indices, edge_points, evaluate, side_param
from .linalg import solve_spd, spmv
from .quadrature import gauss_on_intervals
from .splines import nurbs_many


def _wrap(a):
    return (a + math.pi) % (2 * math.pi) - math.pi


def _merge_breaks(b, pitch, tol=1e-12):
    """Sorted breakpoints in [0, pitch] with near-duplicates merged and both ends present."""
    b = np.sort(np.clip(b, 0.0, pitch))
    inner = b[(b > tol * pitch) & (b < pitch * (1 - tol))]
    if inner.size:
        inner = inner[np.r_[True, np.diff(inner) > tol * pitch]]
    return np.concatenate([[0.0], inner, [pitch]])


@dataclass
class TraceEdge:
    patch_id: int
    side: str
    kv: object
    weights: np.ndarray
    points: np.ndarray
    gids: np.ndarray
    signs: np.ndarray
    phi_start: float
    phi_end: float

    @property
    def lo(self):
        return min(self.phi_start, self.phi_end)

    @property
    def hi(self):
        return max(self.phi_start, self.phi_end)

    def angle(self, s, frame):
        span, R, _ = nurbs_many(self.kv, self.weights, s)
        idx = span[:, None] - self.kv.degree + np.arange(self.kv.degree + 1)
        xy = np.einsum("kr,krd->kd", R, self.points[idx])
        mid = 0.5 * (self.phi_start + self.phi_end)
        return mid + _wrap(np.arctan2(xy[:, 1], xy[:, 0]) - frame - mid)

    def param_of(self, phi, frame, iters=60):
        """Invert the monotone angle map by bisection."""
        lo = np.zeros_like(phi)
        hi = np.ones_like(phi)
        increasing = self.phi_end > self.phi_start
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            a = self.angle(mid, frame)
            go_right = (a < phi) if increasing else (a > phi)
            lo = np.where(go_right, mid, lo)
            hi = np.where(go_right, hi, mid)
        return 0.5 * (lo + hi)


@dataclass
class TraceSpace:
    """Air-gap trace space of one subdomain discretisation."""

    ids: np.ndarray
    edges: list
    radius: float
    pitch: float
    frame: float
    _index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self._index = {int(g): i for i, g in enumerate(self.ids)}

    @property
    def dim(self):
        return self.ids.size

    @property
    def degree(self):
        return max(e.kv.degree for e in self.edges)

    def breakpoints(self) -> np.ndarray:
        pts = [e.angle(e.kv.breakpoints, self.frame) for e in self.edges]
        return _merge_breaks(np.concatenate(pts), self.pitch)

    def basis(self, phi) -> np.ndarray:
        """Dense ``(len(phi), dim)`` matrix of trace basis values with anti-periodic extension."""
        phi = np.asarray(phi, dtype=float)
        k = np.floor(phi / self.pitch)
        red = phi - k * self.pitch
        sgn = np.where(k.astype(np.int64) % 2 == 0, 1.0, -1.0)
        out = np.zeros((phi.size, self.dim))
        assigned = np.zeros(phi.size, dtype=bool)
        for e in self.edges:
            sel = (~assigned) & (red >= e.lo - 1e-14) & (red <= e.hi + 1e-14)
            if not np.any(sel):
                continue
            s = e.param_of(red[sel], self.frame)
            span, R, _ = nurbs_many(e.kv, e.weights, np.clip(s, 0.0, 1.0))
            idx = span[:, None] - e.kv.degree + np.arange(e.kv.degree + 1)
            cols = np.array([self._index[int(g)] for g in e.gids])[idx]
            rows = np.flatnonzero(sel)
            vals = R * e.signs[idx] * sgn[sel][:, None]
            np.add.at(out, (np.repeat(rows, idx.shape[1]), cols.ravel()), vals.ravel())
            assigned |= sel
        if not np.all(assigned):
            raise StructuralError("trace edges do not cover the pole pitch")
        return out

    def mass(self) -> np.ndarray:
        b = self.breakpoints()
        q, w = gauss_on_intervals(b, self.degree + 2)
        N = self.basis(q.ravel())
        return (N * (w.ravel() * self.radius)[:, None]).T @ N


def trace_space(model: MultiPatchModel, dofmap: DofMap, subdomain: str) -> TraceSpace:
    frame = model.frame_angle(subdomain)
    pitch = model.pole_pitch
    edges = []
    radii = []
    for k, s in model.tagged("airgap", subdomain):
        patch = model.patches[k]
        kv, net = edge_curve(patch, s)
        loc = edge_local_indices(patch, s)
        x = edge_points(patch, s, [0.0, 0.5, 1.0]).x
        ang = np.arctan2(x[:, 1], x[:, 0]) - frame
        mid = ang[1] % (2 * math.pi)
        if mid > pitch:
            mid -= 2 * math.pi
        p0 = mid + _wrap(ang[0] - ang[1])
        p1 = mid + _wrap(ang[2] - ang[1])
        radii.append(np.hypot(x[:, 0], x[:, 1]))
        edges.append(TraceEdge(k, s, kv, net[:, 2].copy(), net[:, :2].copy(),
                               dofmap.gid[k][loc], dofmap.sign[k][loc], p0, p1))
    if not edges:
        raise StructuralError(f"subdomain {subdomain} has no air-gap edges")
    edges.sort(key=lambda e: e.lo)
    r = np.concatenate(radii)
    return TraceSpace(dofmap.trace_ids, edges, float(r.mean()), pitch, frame)


@dataclass
class TraceFunction:
    space: TraceSpace
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.space.dim,):
            raise ValidationError(f"{self.coeffs.size} coefficients for a trace space of dimension {self.space.dim}")

    def __call__(self, phi):
        return self.space.basis(np.atleast_1d(phi)) @ self.coeffs


def merged_rule(target: TraceSpace, source: TraceSpace, offset: float):
    """Gauss points (in the target frame) on the union of both meshes."""
    pitch = target.pitch
    b_src = (source.breakpoints() + offset) % pitch
    b = _merge_breaks(np.concatenate([target.breakpoints(), b_src]), pitch)
    n = max(target.degree, source.degree) + 2
    q, w = gauss_on_intervals(b, n)
    return q.ravel(), w.ravel() * target.radius


def merged_gram(target: TraceSpace, source: TraceSpace, offset: float = 0.0):
    """Target mass ``M`` and transfer ``T`` integrated on one merged-mesh rule.

    ``T_ij = int N^target_i(phi) N^source_j(phi - offset) ds``.  Sharing the
    rule makes projection onto a nested space exact to round-off.
    """
    q, w = merged_rule(target, source, offset)
    Nt = target.basis(q)
    Ns = source.basis(q - offset)
    Ntw = Nt * w[:, None]
    return Ntw.T @ Nt, Ntw.T @ Ns


def transfer_matrix(target: TraceSpace, source: TraceSpace, offset: float = 0.0) -> np.ndarray:
    """``T_ij = int N^target_i(phi) N^source_j(phi - offset) ds`` on the merged mesh."""
    return merged_gram(target, source, offset)[1]


def project_trace(f: TraceFunction, target: TraceSpace, rotation_offset: float = 0.0) -> TraceFunction:
    """L2 projection of ``phi -> f(phi - rotation_offset)`` onto ``target``."""
    M, T = merged_gram(target, f.space, rotation_offset)
    try:
        c = np.linalg.solve(M, T @ f.coeffs)
    except np.linalg.LinAlgError as exc:
        raise StructuralError("singular trace mass matrix") from exc
    return TraceFunction(target, c)


def relax_update(lam: TraceFunction, stator_trace: TraceFunction, alpha: float) -> TraceFunction:
    if stator_trace.space is not lam.space:
        raise ValidationError("relaxation requires both traces in the same space")
    if not 0.0 <= alpha <= 1.0:
        raise ValidationError("alpha must lie in [0, 1]")
    return TraceFunction(lam.space, alpha * stator_trace.coeffs + (1.0 - alpha) * lam.coeffs)


# ---------------------------------------------------------------------------
# subdomain problems


@dataclass
class Subproblem:
    name: str
    dofmap: DofMap
    system: AssembledSystem
    mass: object
    trace: TraceSpace

    def l2(self, full) -> float:
        return math.sqrt(max(float(full @ spmv(self.mass, full)), 0.0))


def make_subproblem(model, name, dirichlet_airgap, rule=DEFAULT_RULE) -> Subproblem:
    constrained = ("dirichlet", "airgap") if dirichlet_airgap else ("dirichlet",)
    dm = build_dof_map(model, name, constrained)
    cache = {}
    sysm = assemble_system(model, dm, rule, cache)
    mass = assemble_mass(model, dm, rule, cache)
    return Subproblem(name, dm, sysm, mass, trace_space(model, dm, name))


def neumann_load(rotor: Subproblem, rotor_full, stator_trace: TraceSpace, offset: float,
                 method: str = "variational", model: MultiPatchModel | None = None,
                 transfer=None, mass_inv=None, orientation: float = 1.0) -> np.ndarray:
    """Flux load ``g_i = int nu grad A_rt . n_ag N_i ds`` on the stator trace basis.

    ``n_ag`` points from rotor into stator.  ``variational`` uses the rotor's
    discrete flux functional (residual on its trace ids) converted to a flux
    density by the rotor trace mass matrix; ``pointwise`` evaluates
    the natural flux through the rotor geometry (needs ``model``).
    ``orientation=-1`` reverses the normal.
    """
    if method == "variational":
        r = rotor.system.residual_full(rotor_full)[rotor.trace.ids]
        if mass_inv is None:
            q = np.linalg.solve(rotor.trace.mass(), r)
        else:
            q = mass_inv @ r
        T = transfer if transfer is not None else transfer_matrix(stator_trace, rotor.trace, offset)
        return orientation * (T @ q)
    if method == "pointwise":
        if model is None:
            raise ValidationError("pointwise flux needs the model")
        q, w = merged_rule(stator_trace, rotor.trace, offset)
        flux = rotor_normal_flux(model, rotor, rotor_full, q - offset)
        return orientation * (stator_trace.basis(q) * (w * flux)[:, None]).sum(axis=0)
    raise ValidationError(f"unknown flux method {method!r}")


def rotor_normal_flux(model, sub: Subproblem, full, phi) -> np.ndarray:
    """Natural flux ``nu grad A . n - H_pm x n`` (n radially outward) at trace angles ``phi``."""
    space = sub.trace
    phi = np.asarray(phi, dtype=float)
    k = np.floor(phi / space.pitch)
    red = phi - k * space.pitch
    sgn = np.where(k.astype(np.int64) % 2 == 0, 1.0, -1.0)
    out = np.full(phi.size, np.nan)
    for e in space.edges:
        sel = np.isnan(out) & (red >= e.lo - 1e-14) & (red <= e.hi + 1e-14)
        if not np.any(sel):
            continue
        s = np.clip(e.param_of(red[sel], space.frame), 0.0, 1.0)
        d, t = side_param(e.side)
        full_t = np.full_like(s, t)
        patch = model.patches[e.patch_id]
        pe = evaluate(patch, full_t, s) if d == 0 else evaluate(patch, s, full_t)
        gx, gy = pe.gradients()
        c = sub.dofmap.local_coefficients(e.patch_id, full)[pe.local]
        ax = np.einsum("nab,nab->n", gx, c)
        ay = np.einsum("nab,nab->n", gy, c)
        r = np.hypot(pe.x[:, 0], pe.x[:, 1])
        mat = model.materials[patch.region]
        nx, ny = pe.x[:, 0] / r, pe.x[:, 1] / r
        hx, hy = mat.h_pm
        out[sel] = sgn[sel] * (mat.nu * (ax * nx + ay * ny) - (hy * nx - hx * ny))
    return out


# ---------------------------------------------------------------------------
# fixed-point iteration


@dataclass
class CouplingState:
    lam: TraceFunction
    alpha: float
    tol: float
    max_iter: int
    k: int = 0
    history: list = field(default_factory=list)
    converged: bool = False


@dataclass
class DtnResult:
    rotor: Subproblem
    stator: Subproblem
    rotor_full: np.ndarray
    stator_full: np.ndarray
    state: CouplingState
    inner_iterations: int = 0

    @property
    def converged(self):
        return self.state.converged


class DtnSolver:
    """Pre-assembled rotor/stator pair for repeated DtN solves at one rotor angle."""

    def __init__(self, model: MultiPatchModel, rule=DEFAULT_RULE, inner_rtol=1e-12, flux="variational"):
        if flux not in ("variational", "pointwise"):
            raise ValidationError(f"unknown flux method {flux!r}")
        self.model = model
        self.flux = flux
        self.offset = model.rotor_angle
        self.rotor = make_subproblem(model, "rotor", True, rule)
        self.stator = make_subproblem(model, "stator", False, rule)
        self.inner_rtol = inner_rtol
        self.M_rt_inv = np.linalg.inv(self.rotor.trace.mass())
        # T[i, j] = int N^st_i(phi) N^rt_j(phi - offset) ds; P is the rotor mass on the same rule
        q, w = merged_rule(self.stator.trace, self.rotor.trace, self.offset)
        Nst = self.stator.trace.basis(q)
        Nrt = self.rotor.trace.basis(q - self.offset) * np.sqrt(w)[:, None]
        self.T = (Nst * np.sqrt(w)[:, None]).T @ Nrt
        self.P_inv = np.linalg.inv(Nrt.T @ Nrt)

    def solve_rotor(self, lam_coeffs, x0=None):
        sysm = apply_dirichlet_trace(self.rotor.system, self.rotor.trace.ids, lam_coeffs)
        res = solve_spd(sysm.K, sysm.rhs(), self.inner_rtol, x0=x0)
        return sysm, res

    def solve_stator(self, load, x0=None):
        dm = self.stator.dofmap
        extra = np.zeros(dm.n_total)
        extra[self.stator.trace.ids] = load
        sysm = self.stator.system
        return solve_spd(sysm.K, sysm.rhs(extra), self.inner_rtol, x0=x0)

    def sweep(self, lam_coeffs, x0_rt=None, x0_st=None):
        """One rotor-Dirichlet / stator-Neumann sweep; returns full vectors and the projected stator trace."""
        sysm, rr = self.solve_rotor(lam_coeffs, x0_rt)
        full_rt = self.rotor.dofmap.expand(rr.x, sysm.fixed_values)
        if self.flux == "variational":
            q = self.M_rt_inv @ sysm.residual_full(full_rt)[self.rotor.trace.ids]
            g = self.T @ q
        else:
            g = neumann_load(self.rotor, full_rt, self.stator.trace, self.offset, "pointwise", self.model)
        # stator outward normal is -n_ag
        load = -g
        rs = self.solve_stator(load, x0_st)
        full_st = self.stator.dofmap.expand(rs.x)
        st_trace = self.P_inv @ (self.T.T @ full_st[self.stator.trace.ids])
        return full_rt, full_st, st_trace, rr, rs

    def iterate(self, alpha=0.5, tol=1e-7, max_iter=200, lam0=None) -> DtnResult:
        if not 0.0 <= alpha <= 1.0:
            raise ValidationError("alpha must lie in [0, 1]")
        if not tol > 0:
            raise ValidationError("tol must be positive")
        lam = np.zeros(self.rotor.trace.dim) if lam0 is None else np.array(lam0, dtype=float)
        state = CouplingState(TraceFunction(self.rotor.trace, lam), alpha, tol, max_iter)
        prev_rt = np.zeros(self.rotor.dofmap.n_total)
        prev_st = np.zeros(self.stator.dofmap.n_total)
        x_rt = x_st = None
        inner = 0
        full_rt, full_st = prev_rt, prev_st
        for k in range(1, max_iter + 1):
            full_rt, full_st, st_trace, rr, rs = self.sweep(lam, x_rt, x_st)
            inner += rr.iterations + rs.iterations
            x_rt, x_st = rr.x, rs.x
            e_rt = _rel_change(self.rotor, full_rt, prev_rt)
            e_st = _rel_change(self.stator, full_st, prev_st)
            state.history.append((e_rt, e_st))
            state.k = k
            lam = alpha * st_trace + (1.0 - alpha) * lam
            prev_rt, prev_st = full_rt, full_st
            if e_rt < tol and e_st < tol:
                state.converged = True
                break
        state.lam = TraceFunction(self.rotor.trace, lam)
        return DtnResult(self.rotor, self.stator, full_rt, full_st, state, inner)


def _rel_change(sub, new, old):
    num = sub.l2(new - old)
    den = sub.l2(new)
    if den == 0.0:
        return 0.0 if num == 0.0 else math.inf
    return num / den


def dtn_iterate(model: MultiPatchModel, alpha: float = 0.5, tol: float = 1e-7, max_iter: int = 200,
                lam0=None, rule=DEFAULT_RULE, flux="variational") -> DtnResult:
    """Relaxed Dirichlet-Neumann iteration; non-convergence is reported, not raised."""
    return DtnSolver(model, rule, flux=flux).iterate(alpha, tol, max_iter, lam0)


def solve_monolithic(model: MultiPatchModel, rule=DEFAULT_RULE, rtol=1e-12):
    """Single-system solve over all patches; needs a conforming air gap."""
    dm = build_dof_map(model, None, ("dirichlet",))
    if np.any(dm.fixed[dm.trace_ids]):
        raise StructuralError("air-gap ids must be interior in a monolithic solve")
    sysm = assemble_system(model, dm, rule)
    res = solve_spd(sysm.K, sysm.rhs(), rtol)
    return dm, dm.expand(res.x), res


def write_history(state: CouplingState, path) -> None:
    """Text table ``k,eps_rotor,eps_stator`` (CSV)."""
    with open(path, "w", newline="\n") as fh:
        fh.write("k,eps_rotor,eps_stator\n")
        for k, (a, b) in enumerate(state.history, start=1):
            fh.write(f"{k},{a:.17g},{b:.17g}\n")
