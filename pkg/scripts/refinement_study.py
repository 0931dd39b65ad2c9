"""Rotor-only self-convergence table for degrees 1 and 2.

Prints the table and the comparison of degree 2 at level r against degree 1
at level r + 2 (four times the DoF).
"""
import argparse
import math
from dataclasses import dataclass
from pathlib import Path

from igamachine.machine import build_pmsm
from igamachine.study import refinement_study, write_study


@dataclass(frozen=True)
class Config:
    levels: int = 4
    output: Path = Path("out/study")


def run(cfg: Config):
    cfg.output.mkdir(parents=True, exist_ok=True)
    rows = refinement_study(build_pmsm(2, 0), cfg.levels, (1, 2))
    write_study(rows, cfg.output / "study.csv")
    err = {(r.degree, r.level): r for r in rows}
    for p in (1, 2):
        prev = None
        for lev in range(cfg.levels + 1):
            r = err[(p, lev)]
            rate = "" if prev is None or r.l2_diff == 0 else f" rate={math.log2(prev / r.l2_diff):.2f}"
            print(f"degree={p} level={lev} n_dof={r.n_dof} l2_diff={r.l2_diff:.4e}{rate}")
            prev = r.l2_diff
    for lev in range(cfg.levels - 1):
        a, b = err[(2, lev)], err[(1, lev + 2)]
        print(f"p2 r={lev} ({a.n_dof} dof) {a.l2_diff:.3e}  vs  p1 r={lev + 2} ({b.n_dof} dof) {b.l2_diff:.3e}")
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--levels", type=int, default=Config.levels)
    ap.add_argument("--output", type=Path, default=Config.output)
    a = ap.parse_args()
    run(Config(a.levels, a.output))


if __name__ == "__main__":
    main()
