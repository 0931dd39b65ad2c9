"""Galerkin assembly of ``K_nu u = j_src + j_pm`` on a set of patches.

Global numbering works on *glued* ids: coincident functions of conforming
neighbours share an id, and functions on a ``left`` pole boundary are slaves
of their ``right`` partner with sign -1.  Every local function therefore
maps to ``sign * u[gid]``.  Ids on constrained edges are eliminated; the
rest are the free unknowns.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AssemblyError, StructuralError, ValidationError
from .geometry import (MATCH_TOL, SIDES, MultiPatchModel, _rotate_xy, edge_curve, edge_local_indices,
                       evaluate, find_interfaces, validate_model)
from .linalg import SparseMatrix, spmv
from .quadrature import element_rule


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor Gauss rule with ``n_points`` per direction and element.

    ``None`` selects p+1 points per direction, exact for polynomials of
    degree 2p+1 on the parametric element.
    """

    n_points: int | None = None

    def on(self, kv):
        return element_rule(kv, self.n_points)


DEFAULT_RULE = QuadratureRule()


@dataclass
class DofMap:
    patch_ids: list
    gid: dict
    sign: dict
    n_total: int
    fixed: np.ndarray  # bool mask over gids
    trace_ids: np.ndarray  # gids on air-gap edges
    trace_fixed: bool
    free: np.ndarray = field(init=False)
    free_index: np.ndarray = field(init=False)

    def __post_init__(self):
        self.free = np.flatnonzero(~self.fixed)
        self.free_index = np.full(self.n_total, -1, dtype=np.int64)
        self.free_index[self.free] = np.arange(self.free.size)

    @property
    def free_count(self) -> int:
        return int(self.free.size)

    @property
    def fixed_ids(self) -> np.ndarray:
        return np.flatnonzero(self.fixed)

    def expand(self, u_free, fixed_values=None) -> np.ndarray:
        """Full coefficient vector over all gids."""
        full = np.zeros(self.n_total) if fixed_values is None else np.array(fixed_values, dtype=float)
        full[self.free] = u_free
        return full

    def local_coefficients(self, patch_id, full) -> np.ndarray:
        return self.sign[patch_id] * full[self.gid[patch_id]]


class _SignedUnionFind:
    def __init__(self, n):
        self.parent = np.arange(n)
        self.parity = np.ones(n, dtype=np.int8)

    def find(self, a):
        s = 1
        path = []
        while self.parent[a] != a:
            path.append(a)
            s *= self.parity[a]
            a = self.parent[a]
        root = a
        # path compression with accumulated parity
        acc = s
        for node in path:
            p = self.parity[node]
            self.parent[node] = root
            self.parity[node] = acc
            acc *= p
        return root, s

    def union(self, a, b, sign):
        """Record ``f_a = sign * f_b``."""
        ra, sa = self.find(a)
        rb, sb = self.find(b)
        if ra == rb:
            if sa * sb != sign:
                raise StructuralError("inconsistent anti-periodic identification")
            return
        # f_a = sa f_ra, f_b = sb f_rb  =>  f_ra = sa * sign * sb * f_rb
        self.parent[ra] = rb
        self.parity[ra] = sa * sign * sb


def _edge_pairs(pa, sa, pb, sb, reverse):
    ia = edge_local_indices(pa, sa)
    ib = edge_local_indices(pb, sb)
    return ia, (ib[::-1] if reverse else ib)


def _match_rotated(model, left, right):
    """Pair each left edge with the right edge it maps onto under rotation by one pitch."""
    pairs = []
    for k, s in left:
        pts = _rotate_xy(edge_curve(model.patches[k], s)[1], model.pole_pitch)[:, :2]
        found = None
        for k2, s2 in right:
            q = edge_curve(model.patches[k2], s2)[1][:, :2]
            if q.shape != pts.shape:
                continue
            if np.allclose(q, pts, atol=MATCH_TOL, rtol=0):
                found = (k2, s2, False)
            elif np.allclose(q[::-1], pts, atol=MATCH_TOL, rtol=0):
                found = (k2, s2, True)
            if found:
                break
        if found is None:
            raise StructuralError(f"left edge {(k, s)} has no anti-periodic partner")
        pairs.append(((k, s), found))
    return pairs


def build_dof_map(model: MultiPatchModel, subdomain: str | None = None,
                  constrained=("dirichlet",), check=False) -> DofMap:
    """Global numbering for ``subdomain`` (all patches if ``None``).

    ``constrained`` lists the edge tags whose functions are eliminated;
    include ``"airgap"`` for the rotor's Dirichlet role.
    """
    if check:
        bad = validate_model(model)
        if bad:
            raise StructuralError("invalid model: " + "; ".join(bad))
    ids = model.patch_ids(subdomain)
    if not ids:
        raise StructuralError(f"no patches in subdomain {subdomain!r}")
    offset = {}
    n = 0
    for k in ids:
        offset[k] = n
        n += model.patches[k].n_functions
    uf = _SignedUnionFind(n)
    interfaces = find_interfaces(model, ids)
    matched = set()
    for a, sa, b, sb, rev in interfaces:
        ia, ib = _edge_pairs(model.patches[a], sa, model.patches[b], sb, rev)
        for x, y in zip(ia, ib):
            uf.union(offset[a] + x, offset[b] + y, 1)
        matched.update({(a, sa), (b, sb)})
    tagged = {key for key in model.edge_tags if key[0] in offset}
    for k in ids:
        for s in SIDES:
            if (k, s) not in matched and (k, s) not in tagged:
                raise StructuralError(f"patch {k} side {s}: untagged edge without a conforming neighbour")
    left = [e for e in model.tagged("left") if e[0] in offset]
    right = [e for e in model.tagged("right") if e[0] in offset]
    for (k, s), (k2, s2, rev) in _match_rotated(model, left, right):
        ia, ib = _edge_pairs(model.patches[k], s, model.patches[k2], s2, rev)
        for x, y in zip(ia, ib):
            uf.union(offset[k] + x, offset[k2] + y, -1)

    roots = np.empty(n, dtype=np.int64)
    signs = np.empty(n, dtype=np.int8)
    for i in range(n):
        roots[i], signs[i] = uf.find(i)
    _, first = np.unique(roots, return_index=True)
    order = np.sort(first)  # number ids by first appearance
    root_to_gid = {roots[i]: g for g, i in enumerate(order)}
    gid_all = np.array([root_to_gid[r] for r in roots], dtype=np.int64)
    n_total = order.size
    gid = {k: gid_all[offset[k]: offset[k] + model.patches[k].n_functions] for k in ids}
    sign = {k: signs[offset[k]: offset[k] + model.patches[k].n_functions].astype(float) for k in ids}

    fixed = np.zeros(n_total, dtype=bool)
    trace = set()
    airgap_interior = subdomain is None and any(
        model.edge_tags.get((a, sa)) == "airgap" for a, sa, *_ in interfaces)
    for (k, s), tag in model.edge_tags.items():
        if k not in offset:
            continue
        g = gid[k][edge_local_indices(model.patches[k], s)]
        if tag == "airgap":
            trace.update(g.tolist())
        if tag in constrained and not (tag == "airgap" and airgap_interior):
            fixed[g] = True
    return DofMap(list(ids), gid, sign, n_total, fixed, np.array(sorted(trace), dtype=np.int64),
                  "airgap" in constrained)


# ---------------------------------------------------------------------------
# element integration


@dataclass
class ElementData:
    """Quadrature data of one patch grouped by element.

    Shapes: ``w`` (E, Q) includes |det J|; ``R``, ``gx``, ``gy`` (E, Q, F);
    ``x`` (E, Q, 2); ``local`` (E, F).
    """

    patch_id: int
    w: np.ndarray
    R: np.ndarray
    gx: np.ndarray
    gy: np.ndarray
    x: np.ndarray
    local: np.ndarray


def element_data(model: MultiPatchModel, k: int, rule: QuadratureRule = DEFAULT_RULE) -> ElementData:
    patch = model.patches[k]
    qu, wu = rule.on(patch.kv_u)
    qv, wv = rule.on(patch.kv_v)
    eu, nq_u = qu.shape
    ev, nq_v = qv.shape
    uu = np.broadcast_to(qu[:, None, :, None], (eu, ev, nq_u, nq_v)).ravel()
    vv = np.broadcast_to(qv[None, :, None, :], (eu, ev, nq_u, nq_v)).ravel()
    ww = (wu[:, None, :, None] * wv[None, :, None, :]).ravel()
    pe = evaluate(patch, uu, vv)
    E, Q = eu * ev, nq_u * nq_v
    bad = pe.det <= 0
    if np.any(bad):
        e = int(np.flatnonzero(bad)[0] // Q)
        raise AssemblyError(f"patch {k}: singular or inverted Jacobian in element "
                            f"({e // ev}, {e % ev})")
    gx, gy = pe.gradients()
    F = pe.R.shape[1] * pe.R.shape[2]
    return ElementData(
        k,
        (ww * pe.det).reshape(E, Q),
        pe.R.reshape(E, Q, F),
        gx.reshape(E, Q, F),
        gy.reshape(E, Q, F),
        pe.x.reshape(E, Q, 2),
        pe.local.reshape(E, Q, F)[:, 0, :],
    )


def _scatter_matrix(dofmap, ed, Ke, coo):
    g = dofmap.gid[ed.patch_id][ed.local]
    s = dofmap.sign[ed.patch_id][ed.local]
    vals = Ke * s[:, :, None] * s[:, None, :]
    F = g.shape[1]
    coo[0].append(np.repeat(g, F, axis=1).ravel())
    coo[1].append(np.tile(g, (1, F)).ravel())
    coo[2].append(vals.ravel())


def _scatter_vector(dofmap, ed, fe, out):
    g = dofmap.gid[ed.patch_id][ed.local]
    s = dofmap.sign[ed.patch_id][ed.local]
    np.add.at(out, g.ravel(), (fe * s).ravel())


def _coo_to_matrix(coo, n):
    if not coo[0]:
        return SparseMatrix.from_coo([], [], [], (n, n))
    return SparseMatrix.from_coo(np.concatenate(coo[0]), np.concatenate(coo[1]), np.concatenate(coo[2]), (n, n))


def _material(model, k):
    reg = model.patches[k].region
    try:
        return model.materials[reg]
    except KeyError:
        raise ValidationError(f"patch {k}: no material for region {reg!r}") from None


def assemble_stiffness(model: MultiPatchModel, dofmap: DofMap, rule: QuadratureRule = DEFAULT_RULE,
                       cache=None) -> SparseMatrix:
    """Stiffness ``int nu grad w_i . grad w_j`` over all glued ids (constraints not yet eliminated)."""
    coo = ([], [], [])
    for k in dofmap.patch_ids:
        ed = _element_data_cached(model, k, rule, cache)
        nu = _material(model, k).nu
        Ke = nu * (np.einsum("eq,eqk,eql->ekl", ed.w, ed.gx, ed.gx)
                   + np.einsum("eq,eqk,eql->ekl", ed.w, ed.gy, ed.gy))
        _scatter_matrix(dofmap, ed, Ke, coo)
    return _coo_to_matrix(coo, dofmap.n_total)


def assemble_mass(model: MultiPatchModel, dofmap: DofMap, rule: QuadratureRule = DEFAULT_RULE,
                  cache=None) -> SparseMatrix:
    coo = ([], [], [])
    for k in dofmap.patch_ids:
        ed = _element_data_cached(model, k, rule, cache)
        Me = np.einsum("eq,eqk,eql->ekl", ed.w, ed.R, ed.R)
        _scatter_matrix(dofmap, ed, Me, coo)
    return _coo_to_matrix(coo, dofmap.n_total)


def assemble_sources(model: MultiPatchModel, dofmap: DofMap, rule: QuadratureRule = DEFAULT_RULE,
                     cache=None):
    """``(j_src, j_pm)`` over all glued ids.

    ``j_src_i = int J_z w_i`` and ``j_pm_i = int H_pm . (-dw_i/dy, dw_i/dx)``.
    """
    js = np.zeros(dofmap.n_total)
    jp = np.zeros(dofmap.n_total)
    for k in dofmap.patch_ids:
        mat = _material(model, k)
        ed = _element_data_cached(model, k, rule, cache)
        if callable(mat.j_src):
            J = mat.j_src(ed.x[..., 0], ed.x[..., 1])
            _scatter_vector(dofmap, ed, np.einsum("eq,eqk->ek", ed.w * J, ed.R), js)
        elif mat.j_src != 0.0:
            _scatter_vector(dofmap, ed, mat.j_src * np.einsum("eq,eqk->ek", ed.w, ed.R), js)
        hx, hy = mat.h_pm
        if hx or hy:
            fe = np.einsum("eq,eqk->ek", ed.w, -hx * ed.gy + hy * ed.gx)
            _scatter_vector(dofmap, ed, fe, jp)
    return js, jp


def _element_data_cached(model, k, rule, cache):
    if cache is None:
        return element_data(model, k, rule)
    key = (k, rule)
    if key not in cache:
        cache[key] = element_data(model, k, rule)
    return cache[key]


# ---------------------------------------------------------------------------
# constrained system


@dataclass
class AssembledSystem:
    """Full (glued) operators plus the reduced free-DoF system.

    ``K``, ``j_src``, ``j_pm`` and ``dirichlet_lift`` live on free DoFs;
    ``K_full``/``b_full`` on all glued ids are kept for flux residuals.
    """

    dofmap: DofMap
    K_full: SparseMatrix
    j_src_full: np.ndarray
    j_pm_full: np.ndarray
    K: SparseMatrix
    K_fc: SparseMatrix
    j_src: np.ndarray
    j_pm: np.ndarray
    fixed_values: np.ndarray
    dirichlet_lift: np.ndarray

    @property
    def b_full(self):
        return self.j_src_full + self.j_pm_full

    def rhs(self, extra=None) -> np.ndarray:
        b = self.j_src + self.j_pm + self.dirichlet_lift
        if extra is not None:
            b = b + extra[self.dofmap.free]
        return b

    def residual_full(self, full) -> np.ndarray:
        """``K_full u - b_full``: the discrete boundary flux functional on constrained ids."""
        return spmv(self.K_full, full) - self.b_full


def assemble_system(model: MultiPatchModel, dofmap: DofMap, rule: QuadratureRule = DEFAULT_RULE,
                    cache=None) -> AssembledSystem:
    K_full = assemble_stiffness(model, dofmap, rule, cache)
    js, jp = assemble_sources(model, dofmap, rule, cache)
    free, fixed = dofmap.free, dofmap.fixed_ids
    K = K_full.submatrix(free, free)
    K_fc = K_full.submatrix(free, fixed)
    g = np.zeros(dofmap.n_total)
    return AssembledSystem(dofmap, K_full, js, jp, K, K_fc, js[free], jp[free], g, np.zeros(free.size))


def apply_dirichlet_trace(system: AssembledSystem, ids, values) -> AssembledSystem:
    """Prescribe ``values`` on constrained ids ``ids`` and recompute the lift ``-K_fc g``."""
    ids = np.asarray(ids, dtype=np.int64)
    values = np.asarray(values, dtype=float)
    if ids.shape != values.shape:
        raise ValidationError(f"{ids.size} trace ids but {values.size} coefficients")
    if ids.size and not np.all(system.dofmap.fixed[ids]):
        raise ValidationError("trace values may only be prescribed on constrained ids")
    g = system.fixed_values.copy()
    g[ids] = values
    lift = -spmv(system.K_fc, g[system.dofmap.fixed_ids])
    return AssembledSystem(system.dofmap, system.K_full, system.j_src_full, system.j_pm_full, system.K,
                           system.K_fc, system.j_src, system.j_pm, g, lift)
