"""Tensor-product NURBS patches and the multipatch machine model.

Conventions
-----------
* A patch net has shape ``(n1, n2, 3)`` holding ``(x, y, w)``; index ``i``
  runs along ``u``, ``j`` along ``v``.  Local basis functions are numbered
  ``i * n2 + j``.
* Patch sides are ``"u0"``, ``"u1"`` (edges at u = 0, 1) and ``"v0"``,
  ``"v1"``.  Annular patches use ``u`` for the radius and ``v`` for the
  angle (positive orientation), so ``u0`` is the inner arc and ``v0`` the
  radial edge at the start angle.
* Boundary tags: ``"dirichlet"``, ``"left"`` / ``"right"`` (the two pole
  boundaries, ``right`` one pole pitch counter-clockwise of ``left``) and
  ``"airgap"``.
* The machine axis is the origin.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

import numpy as np

from .errors import ValidationError
from .quadrature import element_rule
from .splines import KnotVector, bspline_many, insert_knot, midpoints

NU0 = 1.0 / (4e-7 * math.pi)
"""Vacuum reluctivity in m/H."""

SIDES = ("u0", "u1", "v0", "v1")
TAGS = ("dirichlet", "left", "right", "airgap")
SUBDOMAINS = ("rotor", "stator")
MATCH_TOL = 1e-9


@dataclass(frozen=True)
class Patch:
    kv_u: KnotVector
    kv_v: KnotVector
    net: np.ndarray = field(repr=False)
    region: str = "air"

    def __post_init__(self):
        net = np.array(self.net, dtype=float)
        net.setflags(write=False)
        object.__setattr__(self, "net", net)
        if net.ndim != 3 or net.shape[2] != 3:
            raise ValidationError("control net must have shape (n1, n2, 3)")
        if net.shape[:2] != (self.kv_u.n, self.kv_v.n):
            raise ValidationError(
                f"net {net.shape[:2]} inconsistent with knot vectors ({self.kv_u.n}, {self.kv_v.n})"
            )
        if np.any(net[..., 2] <= 0):
            raise ValidationError("weights must be positive")

    @property
    def shape(self):
        return self.net.shape[:2]

    @property
    def n_functions(self):
        return self.net.shape[0] * self.net.shape[1]

    @property
    def degrees(self):
        return self.kv_u.degree, self.kv_v.degree


@dataclass(frozen=True)
class Material:
    """Per-region material data (SI units).

    ``j_src`` is normally a constant; a callable ``j_src(x, y)`` is accepted
    for manufactured-solution studies.
    """

    nu: float
    h_pm: tuple = (0.0, 0.0)
    j_src: float | Callable = 0.0

    def __post_init__(self):
        if not self.nu > 0:
            raise ValidationError(f"reluctivity must be positive, got {self.nu}")
        object.__setattr__(self, "h_pm", tuple(float(h) for h in self.h_pm))

    @classmethod
    def from_permeability(cls, mu_r, **kw):
        return cls(nu=NU0 / mu_r, **kw)


@dataclass(frozen=True)
class Coil:
    region: str
    phase: str
    turns: float
    polarity: int = 1
    area: float | None = None


@dataclass(frozen=True)
class MultiPatchModel:
    patches: tuple
    materials: Mapping[str, Material]
    edge_tags: Mapping[tuple, str]
    subdomain: tuple
    pole_count: int
    rotor_angle: float = 0.0
    axial_length: float = 1.0
    winding: tuple = ()
    meta: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "patches", tuple(self.patches))
        object.__setattr__(self, "subdomain", tuple(self.subdomain))
        object.__setattr__(self, "winding", tuple(self.winding))
        object.__setattr__(self, "edge_tags", {(int(k[0]), str(k[1])): v for k, v in self.edge_tags.items()})
        if len(self.subdomain) != len(self.patches):
            raise ValidationError("one subdomain label per patch required")
        for s in self.subdomain:
            if s not in SUBDOMAINS:
                raise ValidationError(f"unknown subdomain {s!r}")
        for (k, side), tag in self.edge_tags.items():
            if side not in SIDES or tag not in TAGS or not 0 <= k < len(self.patches):
                raise ValidationError(f"bad edge tag {(k, side)!r} -> {tag!r}")
        if self.pole_count < 2 or self.pole_count % 2:
            raise ValidationError("pole_count must be an even integer >= 2")

    @property
    def pole_pitch(self) -> float:
        return 2.0 * math.pi / self.pole_count

    def patch_ids(self, subdomain=None):
        if subdomain is None:
            return list(range(len(self.patches)))
        return [k for k, s in enumerate(self.subdomain) if s == subdomain]

    def frame_angle(self, subdomain) -> float:
        """Angle of the subdomain's ``left`` boundary."""
        return self.rotor_angle if subdomain == "rotor" else 0.0

    def tagged(self, tag, subdomain=None):
        ids = set(self.patch_ids(subdomain))
        return sorted((k, s) for (k, s), t in self.edge_tags.items() if t == tag and k in ids)


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class PatchEval:
    """Rational basis, map and gradients at a set of parametric points.

    Arrays are indexed ``[point, a, b]`` over the (p1+1)(p2+1) functions
    that do not vanish at the point; ``local`` holds their flat indices.
    """

    x: np.ndarray
    jac: np.ndarray
    det: np.ndarray
    R: np.ndarray
    Ru: np.ndarray
    Rv: np.ndarray
    local: np.ndarray

    def gradients(self):
        J = self.jac
        det = self.det[:, None, None]
        gx = (J[:, 1, 1, None, None] * self.Ru - J[:, 1, 0, None, None] * self.Rv) / det
        gy = (-J[:, 0, 1, None, None] * self.Ru + J[:, 0, 0, None, None] * self.Rv) / det
        return gx, gy


def evaluate(patch: Patch, u, v) -> PatchEval:
    """Evaluate at paired parameter arrays ``u``, ``v`` (same length)."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    p1, p2 = patch.degrees
    n2 = patch.shape[1]
    su, bu, dbu = bspline_many(patch.kv_u, u)
    sv, bv, dbv = bspline_many(patch.kv_v, v)
    iu = su[:, None] - p1 + np.arange(p1 + 1)
    jv = sv[:, None] - p2 + np.arange(p2 + 1)
    net = patch.net[iu[:, :, None], jv[:, None, :]]  # (N, a, b, 3)
    w = net[..., 2]
    B = bu[:, :, None] * bv[:, None, :]
    Bu = dbu[:, :, None] * bv[:, None, :]
    Bv = bu[:, :, None] * dbv[:, None, :]
    W = np.einsum("nab,nab->n", w, B)[:, None, None]
    Wu = np.einsum("nab,nab->n", w, Bu)[:, None, None]
    Wv = np.einsum("nab,nab->n", w, Bv)[:, None, None]
    R = w * B / W
    Ru = w * (Bu * W - B * Wu) / W**2
    Rv = w * (Bv * W - B * Wv) / W**2
    P = net[..., :2]
    x = np.einsum("nab,nabd->nd", R, P)
    xu = np.einsum("nab,nabd->nd", Ru, P)
    xv = np.einsum("nab,nabd->nd", Rv, P)
    jac = np.stack([xu, xv], axis=2)  # jac[n, d, k] = d x_d / d u_k
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    local = iu[:, :, None] * n2 + jv[:, None, :]
    return PatchEval(x, jac, det, R, Ru, Rv, local)


def eval_map(patch: Patch, uv):
    """Physical point and 2x2 Jacobian d(x, y)/d(u, v) at one parameter pair."""
    ev = evaluate(patch, [uv[0]], [uv[1]])
    return ev.x[0], ev.jac[0]


def side_param(side):
    """(direction index, fixed parameter value) of a patch side."""
    return (0 if side[0] == "u" else 1), (0.0 if side[1] == "0" else 1.0)


def edge_local_indices(patch: Patch, side: str) -> np.ndarray:
    """Flat local indices of functions on ``side``, ordered along the edge."""
    n1, n2 = patch.shape
    i = np.arange(n1)
    j = np.arange(n2)
    if side == "u0":
        return 0 * n2 + j
    if side == "u1":
        return (n1 - 1) * n2 + j
    if side == "v0":
        return i * n2
    if side == "v1":
        return i * n2 + n2 - 1
    raise ValidationError(f"unknown side {side!r}")


def edge_curve(patch: Patch, side: str):
    """Knot vector and ``(n, 3)`` net of the boundary curve on ``side``."""
    d, t = side_param(side)
    if d == 0:
        row = patch.net[0 if t == 0 else -1, :, :]
        return patch.kv_v, row
    row = patch.net[:, 0 if t == 0 else -1, :]
    return patch.kv_u, row


def edge_points(patch: Patch, side: str, s):
    """Points on ``side`` at edge parameters ``s`` (with the edge's own direction)."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    d, t = side_param(side)
    full = np.full_like(s, t)
    ev = evaluate(patch, full, s) if d == 0 else evaluate(patch, s, full)
    return ev


# ---------------------------------------------------------------------------
# construction


def make_arc(center, radius, theta0, theta1):
    """Exact circular arc as a rational quadratic B-spline.

    The arc is split into equal segments of at most 90 degrees; each
    segment's middle control point sits at the tangent intersection with
    weight ``cos(half-angle)``.  Returns ``(kv, points (n, 2), weights (n,))``.
    """
    if not radius > 0:
        raise ValidationError(f"radius must be positive, got {radius}")
    sweep = theta1 - theta0
    if not sweep > 0:
        raise ValidationError("theta1 must exceed theta0")
    nseg = max(1, math.ceil(sweep / (0.5 * math.pi) - 1e-12))
    half = 0.5 * sweep / nseg
    cx, cy = center
    pts = []
    wts = []
    for s in range(nseg):
        a0 = theta0 + 2 * half * s
        am = a0 + half
        if s == 0:
            pts.append((cx + radius * math.cos(a0), cy + radius * math.sin(a0)))
            wts.append(1.0)
        rm = radius / math.cos(half)
        pts.append((cx + rm * math.cos(am), cy + rm * math.sin(am)))
        wts.append(math.cos(half))
        a1 = a0 + 2 * half
        pts.append((cx + radius * math.cos(a1), cy + radius * math.sin(a1)))
        wts.append(1.0)
    interior = np.repeat(np.arange(1, nseg) / nseg, 2)
    kv = KnotVector(2, np.concatenate([[0, 0, 0], interior, [1, 1, 1]]))
    return kv, np.array(pts), np.array(wts)


def _refine_direction(kv, net, n_elements, axis):
    """Insert uniformly spaced knots so the direction has ``n_elements`` spans."""
    if n_elements <= kv.n_elements:
        return kv, net
    if kv.n_elements != 1:
        raise ValidationError("uniform subdivision only from a single-span direction")
    net = np.moveaxis(net, axis, 0)
    for u in np.arange(1, n_elements) / n_elements:
        kv, net = insert_knot(kv, net, u)
    return kv, np.moveaxis(net, 0, axis)


def make_annular_patch(r_in, r_out, theta0, theta1, region="air", *, radial_degree=1,
                       n_ang=1, n_rad=1, center=(0.0, 0.0)) -> Patch:
    """Annular sector ``r_in <= r <= r_out``, ``theta0 <= theta <= theta1``.

    ``u`` runs radially outwards with equally spaced collinear control
    points of ``radial_degree`` (a linear radial parametrisation for any
    degree), ``v`` along the exact arc (degree 2).
    """
    if not 0 < r_in < r_out:
        raise ValidationError("need 0 < r_in < r_out")
    if theta1 - theta0 > 0.5 * math.pi + 1e-12:
        raise ValidationError("annular patches span at most 90 degrees")
    kv_v, arc, w = make_arc((0.0, 0.0), 1.0, theta0, theta1)
    q = radial_degree
    kv_u = KnotVector(q, np.r_[np.zeros(q + 1), np.ones(q + 1)])
    radii = np.linspace(r_in, r_out, q + 1)
    net = np.empty((q + 1, kv_v.n, 3))
    net[..., 0] = center[0] + radii[:, None] * arc[None, :, 0]
    net[..., 1] = center[1] + radii[:, None] * arc[None, :, 1]
    net[..., 2] = w[None, :]
    kv_u, net = _refine_direction(kv_u, net, n_rad, 0)
    kv_v, net = _refine_direction(kv_v, net, n_ang, 1)
    return Patch(kv_u, kv_v, net, region)


def make_quad_patch(corners, region="air", degree=1, n_el=1) -> Patch:
    """Bilinear patch through four corners ordered (0,0), (1,0), (0,1), (1,1)."""
    c = np.asarray(corners, dtype=float)
    g = np.linspace(0, 1, degree + 1)
    uu, vv = np.meshgrid(g, g, indexing="ij")
    pts = ((1 - uu) * (1 - vv))[..., None] * c[0] + (uu * (1 - vv))[..., None] * c[1] \
        + ((1 - uu) * vv)[..., None] * c[2] + (uu * vv)[..., None] * c[3]
    net = np.concatenate([pts, np.ones(pts.shape[:2] + (1,))], axis=2)
    kv = KnotVector(degree, np.r_[np.zeros(degree + 1), np.ones(degree + 1)])
    kv_u, net = _refine_direction(kv, net, n_el, 0)
    kv_v, net = _refine_direction(kv, net, n_el, 1)
    return Patch(kv_u, kv_v, net, region)


# ---------------------------------------------------------------------------
# transformations


def _rotate_xy(net, angle):
    c, s = math.cos(angle), math.sin(angle)
    out = np.array(net, dtype=float)
    x, y = net[..., 0], net[..., 1]
    out[..., 0] = c * x - s * y
    out[..., 1] = s * x + c * y
    return out


def rotate_subdomain(model: MultiPatchModel, subdomain: str, angle: float) -> MultiPatchModel:
    """Rigidly rotate one subdomain about the machine axis.

    Magnetisation vectors of regions belonging only to that subdomain turn
    with it.  Only the rotor may be moved (the stator defines the frame).
    """
    if subdomain != "rotor":
        raise ValidationError("only the rotor subdomain can be rotated")
    if not math.isfinite(angle):
        raise ValidationError("rotation angle must be finite")
    if angle == 0.0:
        return model
    patches = list(model.patches)
    for k in model.patch_ids("rotor"):
        p = patches[k]
        patches[k] = replace(p, net=_rotate_xy(p.net, angle))
    rotor_regions = {model.patches[k].region for k in model.patch_ids("rotor")}
    stator_regions = {model.patches[k].region for k in model.patch_ids("stator")}
    materials = dict(model.materials)
    for reg in rotor_regions:
        m = materials[reg]
        if m.h_pm == (0.0, 0.0):
            continue
        if reg in stator_regions:
            raise ValidationError(f"magnetised region {reg!r} is shared by rotor and stator")
        h = _rotate_xy(np.array(m.h_pm), angle)
        materials[reg] = replace(m, h_pm=(float(h[0]), float(h[1])))
    return replace(model, patches=tuple(patches), materials=materials,
                   rotor_angle=model.rotor_angle + angle)


def refine_patch(patch: Patch, u_knots=(), v_knots=()) -> Patch:
    kv_u, kv_v, net = patch.kv_u, patch.kv_v, np.array(patch.net)
    for u in u_knots:
        kv_u, net = insert_knot(kv_u, net, u)
    net = np.moveaxis(net, 1, 0)
    for v in v_knots:
        kv_v, net = insert_knot(kv_v, net, v)
    return Patch(kv_u, kv_v, np.moveaxis(net, 0, 1), patch.region)


def refine_uniform(patch: Patch, passes: int = 1) -> Patch:
    """Insert every span midpoint, both directions, ``passes`` times."""
    for _ in range(passes):
        patch = refine_patch(patch, midpoints(patch.kv_u), midpoints(patch.kv_v))
    return patch


def refine_model(model: MultiPatchModel, passes: int = 1) -> MultiPatchModel:
    if passes <= 0:
        return model
    return replace(model, patches=tuple(refine_uniform(p, passes) for p in model.patches))


# ---------------------------------------------------------------------------
# topology


def _edge_net(patch, side):
    return edge_curve(patch, side)[1]


def edges_coincide(pa, sa, pb, sb, tol=MATCH_TOL):
    """``None`` if the two edges differ, else ``False``/``True`` for same/reversed direction."""
    kva, na = edge_curve(pa, sa)
    kvb, nb = edge_curve(pb, sb)
    if na.shape != nb.shape or kva.degree != kvb.degree:
        return None
    if np.allclose(na[:, :2], nb[:, :2], rtol=0, atol=tol) and np.allclose(na[:, 2], nb[:, 2], rtol=1e-12, atol=0) \
            and np.allclose(kva.knots, kvb.knots, atol=1e-12):
        return False
    nbr = nb[::-1]
    if np.allclose(na[:, :2], nbr[:, :2], rtol=0, atol=tol) and np.allclose(na[:, 2], nbr[:, 2], rtol=1e-12, atol=0) \
            and np.allclose(kva.knots, 1 - kvb.knots[::-1], atol=1e-12):
        return True
    return None


def _edge_touches(pa, sa, pb, sb, tol=MATCH_TOL):
    """Whether two edges share a sub-curve of positive length (sampled test)."""
    s = np.linspace(0.05, 0.95, 7)
    xa = edge_points(pa, sa, s).x
    _, nb = edge_curve(pb, sb)
    xb = edge_points(pb, sb, np.linspace(0, 1, 201)).x
    d = np.min(np.linalg.norm(xa[:, None, :] - xb[None, :, :], axis=2), axis=1)
    scale = np.ptp(nb[:, :2], axis=0).max() / 200
    return np.any(d < max(10 * tol, scale))


def find_interfaces(model: MultiPatchModel, patch_ids):
    """Conforming interior interfaces ``(pa, sa, pb, sb, reversed)`` among ``patch_ids``."""
    out = []
    ids = list(patch_ids)
    bbox = {}
    for k in ids:
        pts = model.patches[k].net[..., :2].reshape(-1, 2)
        bbox[k] = (pts.min(0) - 1e-6, pts.max(0) + 1e-6)
    for a_i, a in enumerate(ids):
        for b in ids[a_i + 1:]:
            if np.any(bbox[a][1] < bbox[b][0]) or np.any(bbox[b][1] < bbox[a][0]):
                continue
            for sa in SIDES:
                for sb in SIDES:
                    rev = edges_coincide(model.patches[a], sa, model.patches[b], sb)
                    if rev is not None:
                        out.append((a, sa, b, sb, rev))
    return out


def _matched_edges(interfaces):
    m = set()
    for a, sa, b, sb, _ in interfaces:
        m.add((a, sa))
        m.add((b, sb))
    return m


def validate_model(model: MultiPatchModel, quadrature_points=None) -> list:
    """Return a list of human-readable violations; empty means valid."""
    bad = []
    n_p = len(model.patches)
    for k, p in enumerate(model.patches):
        if p.region not in model.materials:
            bad.append(f"patch {k}: region {p.region!r} has no material")
        qu, _ = element_rule(p.kv_u, quadrature_points)
        qv, _ = element_rule(p.kv_v, quadrature_points)
        uu, vv = np.meshgrid(qu.ravel(), qv.ravel(), indexing="ij")
        det = evaluate(p, uu.ravel(), vv.ravel()).det
        if np.any(det <= 0):
            bad.append(f"patch {k}: non-positive Jacobian determinant at {int(np.sum(det <= 0))} quadrature points")
    for sub in SUBDOMAINS:
        ids = model.patch_ids(sub)
        if not ids:
            bad.append(f"subdomain {sub}: no patches")
            continue
        inter = find_interfaces(model, ids)
        matched = _matched_edges(inter)
        for k in ids:
            for s in SIDES:
                tag = model.edge_tags.get((k, s))
                if (k, s) in matched:
                    if tag is not None:
                        bad.append(f"patch {k} side {s}: interior interface carries tag {tag!r}")
                    continue
                if tag is None:
                    partial = any(_edge_touches(model.patches[k], s, model.patches[o], so)
                                  for o in ids if o != k for so in SIDES)
                    if partial:
                        bad.append(f"patch {k} side {s}: non-conforming interior interface")
                    else:
                        bad.append(f"patch {k} side {s}: boundary edge without tag")
        for tag in TAGS:
            if not model.tagged(tag, sub):
                bad.append(f"subdomain {sub}: no {tag!r} edges")
        bad.extend(_check_antiperiodic_pairs(model, sub))
    rotor = set(model.patch_ids("rotor"))
    for a in rotor:
        for b in model.patch_ids("stator"):
            for sa in SIDES:
                for sb in SIDES:
                    if edges_coincide(model.patches[a], sa, model.patches[b], sb) is not None \
                            and not (model.edge_tags.get((a, sa)) == "airgap" == model.edge_tags.get((b, sb))):
                        bad.append(f"rotor patch {a} and stator patch {b} share an edge outside the air gap")
    bad.extend(_check_airgap_circle(model))
    for c in model.winding:
        if c.region not in {p.region for p in model.patches}:
            bad.append(f"winding: coil region {c.region!r} does not exist")
    if n_p == 0:
        bad.append("model has no patches")
    return bad


def _check_antiperiodic_pairs(model, sub):
    out = []
    left = model.tagged("left", sub)
    right = model.tagged("right", sub)
    rpts = [_edge_net(model.patches[k], s)[:, :2] for k, s in right]
    for k, s in left:
        pts = _rotate_xy(_edge_net(model.patches[k], s), model.pole_pitch)[:, :2]
        ok = any(r.shape == pts.shape and (np.allclose(r, pts, atol=MATCH_TOL, rtol=0)
                                           or np.allclose(r[::-1], pts, atol=MATCH_TOL, rtol=0))
                 for r in rpts)
        if not ok:
            out.append(f"{sub}: left edge (patch {k}, {s}) has no congruent right edge")
    if len(left) != len(right):
        out.append(f"{sub}: {len(left)} left edges but {len(right)} right edges")
    return out


def _check_airgap_circle(model):
    radii = []
    for k, s in model.tagged("airgap"):
        x = edge_points(model.patches[k], s, np.linspace(0, 1, 50)).x
        radii.append(np.hypot(x[:, 0], x[:, 1]))
    if not radii:
        return []
    r = np.concatenate(radii)
    if np.ptp(r) > 1e-9 * r.mean():
        return [f"air-gap edges do not lie on one circle (radius spread {np.ptp(r):.3e} m)"]
    return []


def patch_area(patch: Patch, n_points=None) -> float:
    qu, wu = element_rule(patch.kv_u, n_points)
    qv, wv = element_rule(patch.kv_v, n_points)
    uu, vv = np.meshgrid(qu.ravel(), qv.ravel(), indexing="ij")
    ww = np.outer(wu.ravel(), wv.ravel()).ravel()
    det = evaluate(patch, uu.ravel(), vv.ravel()).det
    return float(np.sum(ww * np.abs(det)))
