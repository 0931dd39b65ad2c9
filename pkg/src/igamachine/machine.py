"""Bundled example machine and the machine-file format.

The example is one pole of a 6-pole, 18-slot surface-magnet PMSM.  All
regions are annular sectors, arranged as angular strips times radial
layers in each subdomain so that neighbouring patches are conforming::

    stator   yoke        r in [50, 60] mm   (outer circle: A = 0)
             slots/teeth r in [37, 50] mm   (3 open slots, 12 deg each)
             gap, upper  r in [34.2, 37] mm
    ---------------------------------------- air-gap circle r = 34.2 mm
    rotor    gap, lower  r in [34, 34.2] mm
             magnets     r in [32, 34] mm   (75 % pole arc, parallel magnetised)
             rotor iron  r in [10, 32] mm   (shaft circle: A = 0)

The coupling circle sits close to the magnets on purpose: the relaxed
Dirichlet-Neumann iteration contracts only while the rotor side is not much
stiffer than the stator side.  With the layout above the rotor/stator
stiffness ratio seen through the air-gap trace stays below 1.2, so
``alpha = 0.5`` roughly halves the error per sweep
(``scripts/interface_spectrum.py`` prints the spectrum).

Magnet convention: the constitutive law is ``H = nu B + H_pm``, so a magnet
of remanence ``B_r`` along unit vector ``m`` carries ``H_pm = -nu_m B_r m``.
The right-hand side term uses ``H_pm . (-dw/dy, dw/dx)``.  The magnet of this
pole points radially outwards along its centre line (30 deg).

Windings: full-pitch, one slot per pole and phase.  Within the modelled pole
the slots carry phases A+, C-, B+ (centres at 10, 30, 50 deg).

File format
-----------
JSON with keys ``format``, ``pole_count``, ``rotor_angle``, ``axial_length``,
``materials``, ``patches``, ``edge_tags``, ``winding`` and optionally
``builder`` (the parameters the file was generated from; enables rebuilding
at a different degree).  Floats are written with 17 significant digits.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError
from .geometry import (NU0, Coil, Material, MultiPatchModel, Patch, make_annular_patch, refine_model,
                       rotate_subdomain)
from .splines import KnotVector

FORMAT = "igamachine/1"
BUNDLED = Path(__file__).parent / "data" / "pmsm6.json"


@dataclass(frozen=True)
class PmsmParams:
    pole_count: int = 6
    r_shaft: float = 0.010
    r_rotor_iron: float = 0.032
    r_magnet: float = 0.034
    r_airgap: float = 0.0342
    r_bore: float = 0.037
    r_slot: float = 0.050
    r_out: float = 0.060
    magnet_arc: float = 0.75
    slot_arc: float = 0.6
    mu_iron: float = 1000.0
    mu_magnet: float = 1.05
    remanence: float = 1.2
    turns: float = 12.0
    axial_length: float = 0.1
    # elements per angular strip / radial layer on the coarsest mesh
    rotor_ang: tuple = (1, 3, 1)
    rotor_rad: tuple = (2, 1, 1)
    stator_ang: tuple = (1, 1, 1)  # half tooth, slot, tooth
    stator_rad: tuple = (1, 1, 1)


def _strips_rotor(pr: PmsmParams):
    pitch = 2 * math.pi / pr.pole_count
    gap = 0.5 * (1 - pr.magnet_arc) * pitch
    return [0.0, gap, pitch - gap, pitch]


def _strips_stator(pr: PmsmParams):
    pitch = 2 * math.pi / pr.pole_count
    slot_pitch = pitch / 3
    edges = [0.0]
    for s in range(3):
        c = (s + 0.5) * slot_pitch
        edges += [c - 0.5 * pr.slot_arc * slot_pitch, c + 0.5 * pr.slot_arc * slot_pitch]
    edges.append(pitch)
    return edges


def build_pmsm(degree: int = 2, refine: int = 0, params: PmsmParams | None = None,
               magnets: bool = True) -> MultiPatchModel:
    """Build the bundled example machine.

    ``degree`` is the radial degree (1 or 2); arcs are always exact
    rational quadratics.  ``refine`` uniform knot-insertion passes follow.
    """
    pr = params or PmsmParams()
    if degree not in (1, 2):
        raise ValidationError("the example machine is built with degree 1 or 2")
    pitch = 2 * math.pi / pr.pole_count
    nu_m = NU0 / pr.mu_magnet
    axis = 0.5 * pitch
    h = -nu_m * pr.remanence if magnets else 0.0
    materials = {
        "rotor_iron": Material.from_permeability(pr.mu_iron),
        "stator_iron": Material.from_permeability(pr.mu_iron),
        "magnet": Material(nu=nu_m, h_pm=(h * math.cos(axis), h * math.sin(axis))),
        "rotor_air": Material(nu=NU0),
        "gap_rotor": Material(nu=NU0),
        "gap_stator": Material(nu=NU0),
        "coil_a": Material(nu=NU0),
        "coil_b": Material(nu=NU0),
        "coil_c": Material(nu=NU0),
    }
    patches, subdomain, tags = [], [], {}

    def add_block(sub, ang_edges, rad_edges, n_ang, n_rad, region_of, inner_tag, outer_tag):
        nl = len(rad_edges) - 1
        ns = len(ang_edges) - 1
        for layer in range(nl):
            for s in range(ns):
                k = len(patches)
                patches.append(make_annular_patch(
                    rad_edges[layer], rad_edges[layer + 1], ang_edges[s], ang_edges[s + 1],
                    region_of(layer, s), radial_degree=degree, n_ang=n_ang[s], n_rad=n_rad[layer]))
                subdomain.append(sub)
                if layer == 0:
                    tags[(k, "u0")] = inner_tag
                if layer == nl - 1:
                    tags[(k, "u1")] = outer_tag
                if s == 0:
                    tags[(k, "v0")] = "left"
                if s == ns - 1:
                    tags[(k, "v1")] = "right"

    def rotor_region(layer, s):
        if layer == 0:
            return "rotor_iron"
        if layer == 1:
            return "magnet" if s == 1 else "rotor_air"
        return "gap_rotor"

    coils = {1: "coil_a", 3: "coil_c", 5: "coil_b"}

    def stator_region(layer, s):
        if layer == 0:
            return "gap_stator"
        if layer == 1:
            return coils.get(s, "stator_iron")
        return "stator_iron"

    add_block("rotor", _strips_rotor(pr), [pr.r_shaft, pr.r_rotor_iron, pr.r_magnet, pr.r_airgap],
              pr.rotor_ang, pr.rotor_rad, rotor_region, "dirichlet", "airgap")
    st_ang = _strips_stator(pr)
    half, slot, tooth = pr.stator_ang
    n_st_ang = [half, slot, tooth, slot, tooth, slot, half]
    add_block("stator", st_ang, [pr.r_airgap, pr.r_bore, pr.r_slot, pr.r_out],
              n_st_ang, pr.stator_rad, stator_region, "airgap", "dirichlet")

    winding = (
        Coil("coil_a", "A", pr.turns, +1),
        Coil("coil_c", "C", pr.turns, -1),
        Coil("coil_b", "B", pr.turns, +1),
    )
    meta = {"builder": {"name": "pmsm6", "degree": degree, "refine": refine,
                        "magnets": magnets, "params": _params_to_dict(pr)}}
    model = MultiPatchModel(patches, materials, tags, subdomain, pr.pole_count,
                            axial_length=pr.axial_length, winding=winding, meta=meta)
    return refine_model(model, refine)


def build_ring(degree: int = 2, refine: int = 0, radii=(1.0, 1.5, 2.0), pole_count: int = 6,
               n_strips: int = 3, nu=(1.0, 2.0), h_pm=(0.3, 0.1), j_src: float = 1.0,
               stator_strips: int | None = None) -> MultiPatchModel:
    """Two concentric annular sectors meeting on the circle ``r = radii[1]``.

    The rotor carries a constant ``h_pm`` source, the stator a uniform current
    density.  With ``stator_strips`` equal to ``n_strips`` (the default) the
    interface is conforming, so a monolithic solve of the union is available.
    """
    pitch = 2 * math.pi / pole_count
    r0, r1, r2 = radii
    m_st = n_strips if stator_strips is None else stator_strips
    materials = {"inner": Material(nu=nu[0], h_pm=tuple(h_pm)), "outer": Material(nu=nu[1], j_src=j_src)}
    patches, subdomain, tags = [], [], {}
    for sub, (ra, rb), region, n, inner, outer in (
            ("rotor", (r0, r1), "inner", n_strips, "dirichlet", "airgap"),
            ("stator", (r1, r2), "outer", m_st, "airgap", "dirichlet")):
        edges = np.linspace(0.0, pitch, n + 1)
        for s in range(n):
            k = len(patches)
            patches.append(make_annular_patch(ra, rb, edges[s], edges[s + 1], region, radial_degree=degree))
            subdomain.append(sub)
            tags[(k, "u0")] = inner
            tags[(k, "u1")] = outer
            if s == 0:
                tags[(k, "v0")] = "left"
            if s == n - 1:
                tags[(k, "v1")] = "right"
    model = MultiPatchModel(patches, materials, tags, subdomain, pole_count)
    return refine_model(model, refine)


def _params_to_dict(pr):
    d = asdict(pr)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _params_from_dict(d):
    d = dict(d)
    for k in ("rotor_ang", "rotor_rad", "stator_ang", "stator_rad"):
        if k in d:
            d[k] = tuple(d[k])
    return PmsmParams(**d)


def rebuild(model: MultiPatchModel, degree: int | None = None, refine: int | None = None) -> MultiPatchModel:
    """Regenerate a builder-made model with a different degree or refinement.

    Materials, winding and axial length are taken from ``model``.
    """
    b = model.meta.get("builder")
    if not b or b.get("name") != "pmsm6":
        raise ValidationError("degree override needs a machine file with a 'builder' section")
    base = rotate_subdomain(model, "rotor", -model.rotor_angle)
    m = build_pmsm(degree if degree is not None else b["degree"],
                   refine if refine is not None else b["refine"],
                   _params_from_dict(b["params"]), b.get("magnets", True))
    m = replace(m, materials=dict(base.materials), axial_length=model.axial_length, winding=model.winding)
    return rotate_subdomain(m, "rotor", model.rotor_angle)


# ---------------------------------------------------------------------------
# file I/O

_FLOAT_SENTINEL = "\x00f:"


def _encode_floats(obj):
    if isinstance(obj, float):
        return _FLOAT_SENTINEL + format(obj, ".17g")
    if isinstance(obj, dict):
        return {k: _encode_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode_floats(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _encode_floats(obj.tolist())
    if isinstance(obj, np.floating):
        return _encode_floats(float(obj))
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def dumps_17(obj, indent=None) -> str:
    """JSON with every float written as ``%.17g``."""
    text = json.dumps(_encode_floats(obj), indent=indent)
    return re.sub(r'"\\u0000f:([^"]*)"', r"\1", text)


def model_to_dict(model: MultiPatchModel) -> dict:
    mats = {}
    for reg, m in model.materials.items():
        if callable(m.j_src):
            raise ValidationError(f"region {reg!r}: callable sources cannot be serialised")
        mats[reg] = {"nu": float(m.nu), "h_pm": list(m.h_pm), "j_src": float(m.j_src)}
    patches = []
    for k, p in enumerate(model.patches):
        patches.append({
            "degrees": [p.kv_u.degree, p.kv_v.degree],
            "knots_u": p.kv_u.knots.tolist(),
            "knots_v": p.kv_v.knots.tolist(),
            "control_points": p.net.tolist(),
            "region": p.region,
            "subdomain": model.subdomain[k],
        })
    tags = [{"patch": k, "side": s, "tag": t} for (k, s), t in sorted(model.edge_tags.items())]
    winding = [{"region": c.region, "phase": c.phase, "turns": float(c.turns), "polarity": int(c.polarity),
                **({"area": float(c.area)} if c.area is not None else {})} for c in model.winding]
    out = {
        "format": FORMAT,
        "pole_count": model.pole_count,
        "rotor_angle": float(model.rotor_angle),
        "axial_length": float(model.axial_length),
        "materials": mats,
        "patches": patches,
        "edge_tags": tags,
        "winding": winding,
    }
    if "builder" in model.meta:
        out["builder"] = model.meta["builder"]
    return out


def _need(d, key, where):
    if key not in d:
        raise ParseError(f"{where}: missing key {key!r}")
    return d[key]


def model_from_dict(d: dict) -> MultiPatchModel:
    if not isinstance(d, dict) or d.get("format") != FORMAT:
        raise ParseError(f"not a machine file (expected format {FORMAT!r})")
    try:
        mats = {}
        for reg, m in _need(d, "materials", "file").items():
            if "nu" in m:
                nu = float(m["nu"])
            elif "mu_r" in m:
                nu = NU0 / float(m["mu_r"])
            else:
                raise ParseError(f"material {reg!r}: needs 'nu' or 'mu_r'")
            mats[reg] = Material(nu=nu, h_pm=tuple(m.get("h_pm", (0.0, 0.0))), j_src=float(m.get("j_src", 0.0)))
        patches, sub = [], []
        for k, p in enumerate(_need(d, "patches", "file")):
            where = f"patch {k}"
            du, dv = _need(p, "degrees", where)
            patches.append(Patch(KnotVector(int(du), _need(p, "knots_u", where)),
                                 KnotVector(int(dv), _need(p, "knots_v", where)),
                                 np.asarray(_need(p, "control_points", where), dtype=float),
                                 _need(p, "region", where)))
            sub.append(_need(p, "subdomain", where))
        tags = {(int(t["patch"]), t["side"]): t["tag"] for t in _need(d, "edge_tags", "file")}
        winding = tuple(Coil(c["region"], str(c["phase"]), float(c["turns"]), int(c.get("polarity", 1)),
                             c.get("area")) for c in d.get("winding", []))
        meta = {"builder": d["builder"]} if "builder" in d else {}
        return MultiPatchModel(patches, mats, tags, sub, int(_need(d, "pole_count", "file")),
                               rotor_angle=float(d.get("rotor_angle", 0.0)),
                               axial_length=float(d.get("axial_length", 1.0)), winding=winding, meta=meta)
    except (KeyError, TypeError, IndexError) as exc:
        raise ParseError(f"malformed machine file: {exc!r}") from exc
    except ValidationError as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"invalid machine data: {exc}") from exc


def save_model(model: MultiPatchModel, path) -> None:
    Path(path).write_text(dumps_17(model_to_dict(model), indent=1) + "\n")


def load_model(path) -> MultiPatchModel:
    text = Path(path).read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", exc.lineno, exc.colno) from exc
    return model_from_dict(d)


def load_bundled(degree: int | None = None, refine: int | None = None) -> MultiPatchModel:
    model = load_model(BUNDLED)
    if degree is None and refine is None:
        return model
    return rebuild(model, degree, refine)
