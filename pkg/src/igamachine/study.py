"""Self-convergence study on the rotor-only magnet problem.

The rotor is solved with homogeneous Dirichlet data on the shaft and the
air-gap circle, anti-periodic pole boundaries, and the magnets as the only
source.  Every (degree, level) solution is compared with one common
reference, the finest level of the highest degree, which is possible because
all levels and degrees share the same exact parametrisation.
"""
from __future__ import annotations

from dataclasses import dataclass

from .assembly import assemble_system, build_dof_map
from .errors import SolverError, ValidationError
from .geometry import MultiPatchModel, refine_model
from .linalg import solve_spd
from .machine import rebuild
from .postproc import l2_difference, write_csv


@dataclass(frozen=True)
class StudyRow:
    degree: int
    level: int
    n_dof: int
    l2_diff: float


@dataclass
class RotorSolution:
    model: MultiPatchModel
    dofmap: object
    full: object


def solve_rotor_only(model: MultiPatchModel, rtol: float = 1e-12) -> RotorSolution:
    dm = build_dof_map(model, "rotor", ("dirichlet", "airgap"))
    sysm = assemble_system(model, dm)
    res = solve_spd(sysm.K, sysm.rhs(), rtol)
    if not res.converged:
        raise SolverError(f"rotor solve stalled at residual {res.residual:.3e}")
    return RotorSolution(model, dm, dm.expand(res.x))


def model_at(model: MultiPatchModel, degree: int | None, level: int) -> MultiPatchModel:
    """``model`` at refinement ``level``; degree changes need a builder-made model."""
    if "builder" in model.meta:
        return rebuild(model, degree, level)
    if degree is not None and degree != max(model.patches[0].degrees):
        raise ValidationError("degree override needs a machine file with a 'builder' section")
    return refine_model(model, level)


def refinement_study(model: MultiPatchModel, levels: int, degrees=(1, 2)) -> list:
    """Rows ``(degree, level, n_dof, relative L2 difference to the reference)``."""
    if levels < 1:
        raise ValidationError("the study needs at least one refinement level")
    degrees = sorted(set(int(d) for d in degrees))
    sols = {(p, r): solve_rotor_only(model_at(model, p, r)) for p in degrees for r in range(levels + 1)}
    ref = sols[(degrees[-1], levels)]
    rows = []
    ids = ref.model.patch_ids("rotor")
    for (p, r), s in sols.items():
        if s is ref:
            diff = 0.0
        else:
            diff = l2_difference(ref.model, ref.dofmap, ref.full, s.model, s.dofmap, s.full, ids)
        rows.append(StudyRow(p, r, s.dofmap.free_count, diff))
    return rows


def write_study(rows, path) -> None:
    write_csv(path, ["degree", "level", "n_dof", "l2_diff"],
              [(r.degree, r.level, r.n_dof, float(r.l2_diff)) for r in rows])
