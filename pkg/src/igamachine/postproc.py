"""Field evaluation, flux linkage, EMF spectrum and THD, result export."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assembly import DofMap
from .errors import ConvergenceError, DomainError, ValidationError
from .geometry import MultiPatchModel, evaluate, patch_area, rotate_subdomain
from .quadrature import gauss_on_intervals


@dataclass(frozen=True)
class FieldSample:
    x: float
    y: float
    a_z: float
    bx: float
    by: float


def field_on_patch(model: MultiPatchModel, dofmap: DofMap, full, k: int, u, v):
    """``A_z``, ``dA/dx``, ``dA/dy`` and points at paired parameters on patch ``k``."""
    if k not in dofmap.gid:
        raise ValidationError(f"patch {k} is not covered by the DoF map")
    full = np.asarray(full, dtype=float)
    if full.shape != (dofmap.n_total,):
        raise ValidationError(f"solution has {full.size} entries, DoF map has {dofmap.n_total}")
    u = np.atleast_1d(np.asarray(u, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if np.any((u < 0) | (u > 1) | (v < 0) | (v > 1)):
        raise DomainError("parameters must lie in [0, 1]")
    pe = evaluate(model.patches[k], u, v)
    c = dofmap.local_coefficients(k, full)[pe.local]
    gx, gy = pe.gradients()
    a = np.einsum("nab,nab->n", pe.R, c)
    ax = np.einsum("nab,nab->n", gx, c)
    ay = np.einsum("nab,nab->n", gy, c)
    return a, ax, ay, pe.x


def eval_field(model: MultiPatchModel, dofmap: DofMap, full, points) -> list:
    """``FieldSample`` per ``(patch, (u, v))`` with ``B = (dA/dy, -dA/dx)``."""
    out = []
    for k, (u, v) in points:
        a, ax, ay, x = field_on_patch(model, dofmap, full, k, [u], [v])
        out.append(FieldSample(float(x[0, 0]), float(x[0, 1]), float(a[0]), float(ay[0]), float(-ax[0])))
    return out


def _patch_rule(patch, extra=1):
    qu, wu = gauss_on_intervals(patch.kv_u.breakpoints, patch.kv_u.degree + 1 + extra)
    qv, wv = gauss_on_intervals(patch.kv_v.breakpoints, patch.kv_v.degree + 1 + extra)
    uu, vv = np.meshgrid(qu.ravel(), qv.ravel(), indexing="ij")
    return uu.ravel(), vv.ravel(), np.outer(wu.ravel(), wv.ravel()).ravel()


def l2_norm(model, dofmap, full, patch_ids=None) -> float:
    ids = dofmap.patch_ids if patch_ids is None else patch_ids
    total = 0.0
    for k in ids:
        u, v, w = _patch_rule(model.patches[k])
        a, _, _, _ = field_on_patch(model, dofmap, full, k, u, v)
        det = evaluate(model.patches[k], u, v).det
        total += float(np.sum(w * np.abs(det) * a * a))
    return math.sqrt(total)


def l2_error(model, dofmap, full, exact, patch_ids=None) -> float:
    """Absolute L2 distance to an analytic field ``exact(x, y)``."""
    ids = dofmap.patch_ids if patch_ids is None else patch_ids
    total = 0.0
    for k in ids:
        u, v, w = _patch_rule(model.patches[k], extra=2)
        a, _, _, x = field_on_patch(model, dofmap, full, k, u, v)
        det = evaluate(model.patches[k], u, v).det
        total += float(np.sum(w * np.abs(det) * (a - exact(x[:, 0], x[:, 1])) ** 2))
    return math.sqrt(total)


def l2_difference(model_a, dofmap_a, full_a, model_b, dofmap_b, full_b, patch_ids=None,
                  relative=True) -> float:
    """L2 distance of two fields on patches that share their parametrisation.

    Integrates on the quadrature of ``model_a`` (take the finer one), so
    patches ``k`` of both models must be the same map up to knot insertion.
    """
    ids = dofmap_a.patch_ids if patch_ids is None else patch_ids
    num = den = 0.0
    for k in ids:
        u, v, w = _patch_rule(model_a.patches[k])
        fa, _, _, _ = field_on_patch(model_a, dofmap_a, full_a, k, u, v)
        fb, _, _, _ = field_on_patch(model_b, dofmap_b, full_b, k, u, v)
        wd = w * np.abs(evaluate(model_a.patches[k], u, v).det)
        num += float(np.sum(wd * (fa - fb) ** 2))
        den += float(np.sum(wd * fa * fa))
    if not relative:
        return math.sqrt(num)
    return math.sqrt(num / den) if den > 0 else math.sqrt(num)


# ---------------------------------------------------------------------------
# flux linkage


def coil_area(model: MultiPatchModel, region: str) -> float:
    return sum(patch_area(p) for p in model.patches if p.region == region)


def flux_linkage(model: MultiPatchModel, dofmap: DofMap, full, winding=None) -> dict:
    """Flux linkage per phase.

    Each coil contributes ``L * N * polarity * mean(A_z over the coil)``.
    The anti-periodic images of the modelled pole carry negated fields and
    return conductors, so a phase links ``pole_count`` times its coils here.
    """
    winding = model.winding if winding is None else winding
    psi = {}
    for coil in winding:
        ids = [k for k in dofmap.patch_ids if model.patches[k].region == coil.region]
        if not ids:
            raise ValidationError(f"unknown coil region {coil.region!r}")
        integral = area = 0.0
        for k in ids:
            u, v, w = _patch_rule(model.patches[k])
            a, _, _, _ = field_on_patch(model, dofmap, full, k, u, v)
            wd = w * np.abs(evaluate(model.patches[k], u, v).det)
            integral += float(np.sum(wd * a))
            area += float(np.sum(wd))
        if coil.area is not None:
            area = coil.area
        value = model.axial_length * coil.turns * coil.polarity * integral / area
        psi[coil.phase] = psi.get(coil.phase, 0.0) + model.pole_count * value
    return psi


# ---------------------------------------------------------------------------
# spectrum


@dataclass
class EmfSpectrum:
    """EMF magnitudes ``E_h`` for orders ``h = 1..H``."""

    orders: np.ndarray
    magnitudes: np.ndarray
    frequency: float
    axial_length: float = 1.0
    psi: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.orders = np.asarray(self.orders, dtype=np.int64)
        self.magnitudes = np.asarray(self.magnitudes, dtype=float)
        if self.orders.shape != self.magnitudes.shape:
            raise ValidationError("orders and magnitudes differ in length")
        if np.any(self.magnitudes < 0):
            raise ValidationError("magnitudes must be non-negative")

    @property
    def e1(self) -> float:
        hit = np.flatnonzero(self.orders == 1)
        return float(self.magnitudes[hit[0]]) if hit.size else 0.0

    def scaled(self, c) -> "EmfSpectrum":
        return EmfSpectrum(self.orders, c * self.magnitudes, self.frequency, self.axial_length)


def default_harmonics(n_positions: int) -> int:
    """Largest ``H`` with ``n_positions >= 2H + 2``."""
    return (n_positions - 2) // 2


def spectrum_from_linkage(psi, omega_el: float, harmonics: int | None = None,
                          axial_length: float = 1.0) -> EmfSpectrum:
    """``E_h = h * omega_el * |psi_h|`` from samples over one electrical period."""
    psi = np.asarray(psi, dtype=float)
    n = psi.size
    if harmonics is None:
        harmonics = default_harmonics(n)
    if harmonics < 1 or n < 2 * harmonics + 2:
        raise ValidationError(f"{n} samples cannot resolve {harmonics} harmonics (need 2H+2)")
    amp = 2.0 / n * np.abs(np.fft.rfft(psi))
    h = np.arange(1, harmonics + 1)
    return EmfSpectrum(h, h * abs(omega_el) * amp[h], abs(omega_el) / (2 * math.pi), axial_length, psi)


def parseval_gap(psi) -> float:
    """Relative gap between sample energy and DFT energy."""
    psi = np.asarray(psi, dtype=float)
    e_time = float(np.sum(psi ** 2))
    e_freq = float(np.sum(np.abs(np.fft.fft(psi)) ** 2)) / psi.size
    if e_time == 0.0:
        return e_freq
    return abs(e_time - e_freq) / e_time


def thd(spectrum: EmfSpectrum) -> float:
    """``sqrt(sum_{h>=2} E_h^2) / E_1`` (a ratio, multiply by 100 for %)."""
    e1 = spectrum.e1
    if not e1 > 0:
        raise DomainError("THD is undefined for a zero fundamental")
    higher = spectrum.magnitudes[spectrum.orders >= 2]
    return math.sqrt(float(np.sum(higher ** 2))) / e1


def electrical_speed(model: MultiPatchModel, speed: float) -> float:
    return 0.5 * model.pole_count * speed


@dataclass
class LinkageSweep:
    angles: np.ndarray
    psi: np.ndarray
    iterations: list
    solved: np.ndarray


def _linkage_at(args):
    from .coupling import dtn_iterate

    model, angle, phase, alpha, tol, max_iter, i = args
    m = rotate_subdomain(model, "rotor", angle - model.rotor_angle)
    res = dtn_iterate(m, alpha, tol, max_iter)
    if not res.converged:
        raise ConvergenceError(f"DtN iteration did not converge at position {i}", position=i,
                               history=res.state.history)
    values = flux_linkage(m, res.stator.dofmap, res.stator_full)
    if phase not in values:
        raise ValidationError(f"no coils for phase {phase!r}")
    return values[phase], res.state.k


def linkage_sweep(model: MultiPatchModel, n_positions: int = 64, phase: str = "A", alpha: float = 0.5,
                  tol: float = 1e-7, max_iter: int = 200, antiperiodic: bool | None = None,
                  workers: int = 1) -> LinkageSweep:
    """Phase flux linkage at ``n_positions`` rotor angles over one electrical period.

    With ``antiperiodic`` (default when no stator current flows) only the
    first half is solved and ``psi(theta + pitch) = -psi(theta)`` fills the
    rest.  ``workers > 1`` solves positions in separate processes; results
    are ordered by position either way.
    """
    if n_positions < 4:
        raise ValidationError("need at least 4 rotor positions")
    if antiperiodic is None:
        antiperiodic = not _has_current(model)
    if antiperiodic and n_positions % 2:
        raise ValidationError("anti-periodic extension needs an even number of positions")
    pitch = model.pole_pitch
    angles = model.rotor_angle + 2 * pitch * np.arange(n_positions) / n_positions
    n_solve = n_positions // 2 if antiperiodic else n_positions
    jobs = [(model, angles[i], phase, alpha, tol, max_iter, i) for i in range(n_solve)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_linkage_at, jobs))
    else:
        results = [_linkage_at(j) for j in jobs]
    psi = np.zeros(n_positions)
    psi[:n_solve] = [r[0] for r in results]
    solved = np.zeros(n_positions, dtype=bool)
    solved[:n_solve] = True
    if antiperiodic:
        psi[n_solve:] = -psi[:n_solve]
    return LinkageSweep(angles, psi, [r[1] for r in results], solved)


def _has_current(model):
    for k in model.patch_ids("stator"):
        js = model.materials[model.patches[k].region].j_src
        if callable(js) or js != 0.0:
            return True
    return False


def emf_spectrum(model: MultiPatchModel, n_positions: int = 64, speed: float = 2 * math.pi * 1000 / 60,
                 harmonics: int | None = None, **kw) -> EmfSpectrum:
    """No-load EMF spectrum from a rotor-position sweep of the phase linkage."""
    sweep = linkage_sweep(model, n_positions, **kw)
    return spectrum_from_linkage(sweep.psi, electrical_speed(model, speed), harmonics, model.axial_length)


# ---------------------------------------------------------------------------
# export


def _open(path, mode="w"):
    try:
        return open(path, mode, newline="")
    except OSError as exc:
        raise OSError(f"cannot open {path}: {exc.strerror}") from exc


def write_csv(path, header, rows) -> None:
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in row])


def read_csv(path):
    with _open(path, "r") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValidationError(f"{path}: empty file")
    return rows[0], [[float(x) for x in r] for r in rows[1:]]


def write_spectrum(spectrum: EmfSpectrum, path) -> None:
    write_csv(path, ["order", "magnitude"],
              [(int(h), float(e)) for h, e in zip(spectrum.orders, spectrum.magnitudes)])


def write_grid_dump(model, dofmap, full, directory, m: int = 11, patch_ids=None) -> list:
    """One CSV per patch: ``x,y,A_z,Bx,By`` on an ``m x m`` parametric grid (u slowest)."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {directory}: {exc.strerror}") from exc
    t = np.linspace(0.0, 1.0, m)
    uu, vv = np.meshgrid(t, t, indexing="ij")
    paths = []
    for k in (dofmap.patch_ids if patch_ids is None else patch_ids):
        a, ax, ay, x = field_on_patch(model, dofmap, full, k, uu.ravel(), vv.ravel())
        p = directory / f"patch_{k:03d}.csv"
        write_csv(p, ["x", "y", "A_z", "Bx", "By"],
                  zip(x[:, 0].tolist(), x[:, 1].tolist(), a.tolist(), ay.tolist(), (-ax).tolist()))
        paths.append(p)
    return paths
