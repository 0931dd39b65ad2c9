"""Command-line front end: ``igamachine {validate,solve,emf,study}``.

Every command ends with one ``key=value`` summary line.  Exit codes: 0
success, 1 validation or parse failure, 2 non-convergence, 3 I/O failure.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ConvergenceError, IgaError, ParseError, ValidationError
from .geometry import refine_model, rotate_subdomain, validate_model
from .machine import BUNDLED, load_model, rebuild

EXIT_OK, EXIT_INVALID, EXIT_NOCONV, EXIT_IO = 0, 1, 2, 3


@dataclass(frozen=True)
class RunConfig:
    machine: str = str(BUNDLED)
    degree: int | None = None
    refine: int = 0
    alpha: float = 0.5
    tol: float = 1e-7
    max_iter: int = 200
    positions: int = 64
    speed: float = 2 * math.pi * 1000 / 60
    rotor_angle: float | None = None
    axial_length: float | None = None
    output: str = "out"
    threads: int = 1
    levels: int = 4
    degrees: tuple = (1, 2)
    grid: int = 11

    def __post_init__(self):
        if not self.tol > 0:
            raise ValidationError("tol must be positive")
        if self.refine < 0:
            raise ValidationError("refine must be non-negative")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValidationError("alpha must lie in [0, 1]")
        if self.max_iter < 1 or self.threads < 1 or self.positions < 4:
            raise ValidationError("max-iter and threads must be >= 1, positions >= 4")


def load_config(path) -> dict:
    """Config file values as ``RunConfig`` keyword arguments (kebab or snake keys)."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", exc.lineno, exc.colno) from exc
    if not isinstance(raw, dict):
        raise ParseError(f"{path}: config must be a JSON object")
    known = {f.name for f in fields(RunConfig)}
    out = {}
    for k, v in raw.items():
        name = k.replace("-", "_")
        if name not in known:
            raise ParseError(f"{path}: unknown config key {k!r}")
        out[name] = tuple(v) if isinstance(v, list) else v
    return out


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with default values; flags override it")
    common.add_argument("--machine", help="machine file (default: bundled example)")
    common.add_argument("--degree", type=int, help="rebuild with this degree (builder-made files only)")
    common.add_argument("--refine", type=int, help="extra uniform refinement passes")
    common.add_argument("--alpha", type=float, help="relaxation parameter in [0, 1]")
    common.add_argument("--tol", type=float, help="DtN stopping tolerance")
    common.add_argument("--max-iter", type=int, help="DtN iteration limit")
    common.add_argument("--rotor-angle", type=float, help="rotor angle in radians")
    common.add_argument("--axial-length", type=float, help="override the machine depth (m)")
    common.add_argument("--output", help="output directory")
    common.add_argument("--threads", type=int, help="worker count (results are identical for any value)")

    p = argparse.ArgumentParser(prog="igamachine", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    v = sub.add_parser("validate", help="check a machine file")
    v.add_argument("file", nargs="?", help="machine file (default: bundled example)")
    sub.add_parser("solve", parents=[common], help="one DtN solve at the current rotor angle")
    e = sub.add_parser("emf", parents=[common], help="no-load EMF spectrum and THD")
    e.add_argument("--positions", type=int, help="rotor positions per electrical period")
    e.add_argument("--speed", type=float, help="mechanical speed in rad/s")
    s = sub.add_parser("study", parents=[common], help="rotor-only refinement study")
    s.add_argument("--levels", type=int, help="finest refinement level r_max")
    s.add_argument("--degrees", type=int, nargs="+", help="degrees to compare")
    return p


def make_config(args) -> RunConfig:
    values = load_config(args.config) if getattr(args, "config", None) else {}
    for f in fields(RunConfig):
        flag = getattr(args, f.name, None)
        if flag is not None:
            values[f.name] = tuple(flag) if isinstance(flag, list) else flag
    return RunConfig(**values)


def prepare_model(cfg: RunConfig):
    model = load_model(cfg.machine)
    if cfg.degree is not None:
        model = rebuild(model, cfg.degree)
    if cfg.refine:
        model = refine_model(model, cfg.refine)
    if cfg.axial_length is not None:
        model = replace(model, axial_length=cfg.axial_length)
    if cfg.rotor_angle is not None:
        model = rotate_subdomain(model, "rotor", cfg.rotor_angle - model.rotor_angle)
    problems = validate_model(model)
    if problems:
        raise ValidationError("invalid model: " + "; ".join(problems))
    return model


def summary(**kv) -> str:
    parts = []
    for k, v in kv.items():
        parts.append(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}")
    return " ".join(parts)


def _outdir(cfg) -> Path:
    out = Path(cfg.output)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {out}: {exc.strerror}") from exc
    return out


def cmd_validate(path) -> int:
    model = load_model(path or BUNDLED)
    problems = validate_model(model)
    for line in problems:
        print(line)
    print(summary(command="validate", violations=len(problems), status="ok" if not problems else "invalid"))
    return EXIT_OK if not problems else EXIT_INVALID


def cmd_solve(cfg: RunConfig) -> int:
    from .coupling import dtn_iterate, write_history
    from .postproc import write_grid_dump

    model = prepare_model(cfg)
    out = _outdir(cfg)
    res = dtn_iterate(model, cfg.alpha, cfg.tol, cfg.max_iter)
    write_history(res.state, out / "history.csv")
    write_grid_dump(model, res.rotor.dofmap, res.rotor_full, out / "grid", cfg.grid)
    write_grid_dump(model, res.stator.dofmap, res.stator_full, out / "grid", cfg.grid)
    e_rt, e_st = res.state.history[-1]
    print(summary(command="solve", converged=int(res.converged), iterations=res.state.k,
                  ndof_rotor=res.rotor.dofmap.free_count, ndof_stator=res.stator.dofmap.free_count,
                  eps_rotor=e_rt, eps_stator=e_st))
    return EXIT_OK if res.converged else EXIT_NOCONV


def cmd_emf(cfg: RunConfig) -> int:
    from .postproc import electrical_speed, linkage_sweep, spectrum_from_linkage, thd, write_csv, write_spectrum

    model = prepare_model(cfg)
    out = _outdir(cfg)
    sweep = linkage_sweep(model, cfg.positions, alpha=cfg.alpha, tol=cfg.tol, max_iter=cfg.max_iter,
                          workers=cfg.threads)
    spec = spectrum_from_linkage(sweep.psi, electrical_speed(model, cfg.speed), axial_length=model.axial_length)
    write_spectrum(spec, out / "spectrum.csv")
    write_csv(out / "linkage.csv", ["angle", "psi", "solved"],
              [(float(a), float(p), int(s)) for a, p, s in zip(sweep.angles, sweep.psi, sweep.solved)])
    ratio = thd(spec) if spec.e1 > 0 else float("nan")
    print(f"E1 = {spec.e1:.6g} V")
    print(f"THD = {100 * ratio:.6g} %")
    print(summary(command="emf", positions=cfg.positions, harmonics=int(spec.orders[-1]), e1=spec.e1,
                  thd=ratio, frequency=spec.frequency))
    return EXIT_OK


def cmd_study(cfg: RunConfig) -> int:
    from .study import refinement_study, write_study

    model = load_model(cfg.machine)
    out = _outdir(cfg)
    rows = refinement_study(model, cfg.levels, cfg.degrees)
    write_study(rows, out / "study.csv")
    for r in rows:
        print(f"degree={r.degree} level={r.level} n_dof={r.n_dof} l2_diff={r.l2_diff:.6e}")
    print(summary(command="study", levels=cfg.levels, degrees=",".join(map(str, sorted(set(cfg.degrees)))),
                  rows=len(rows)))
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "validate":
            return cmd_validate(args.file)
        cfg = make_config(args)
        return {"solve": cmd_solve, "emf": cmd_emf, "study": cmd_study}[args.command](cfg)
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(summary(command=args.command, status="not-converged", position=exc.position))
        return EXIT_NOCONV
    except (ParseError, ValidationError, IgaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(summary(command=args.command, status="invalid"))
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(summary(command=args.command, status="io-error"))
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
