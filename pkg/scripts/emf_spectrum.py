"""No-load EMF spectrum of the bundled machine over one electrical period."""
import argparse
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from igamachine.machine import load_bundled
from igamachine.postproc import electrical_speed, linkage_sweep, spectrum_from_linkage, thd, write_csv, write_spectrum


@dataclass(frozen=True)
class Config:
    positions: int = 64
    speed: float = 2 * math.pi * 1000 / 60
    tol: float = 1e-7
    workers: int = 1
    output: Path = Path("out/emf")


def run(cfg: Config):
    cfg.output.mkdir(parents=True, exist_ok=True)
    model = load_bundled()
    sweep = linkage_sweep(model, cfg.positions, tol=cfg.tol, workers=cfg.workers)
    spec = spectrum_from_linkage(sweep.psi, electrical_speed(model, cfg.speed), axial_length=model.axial_length)
    write_spectrum(spec, cfg.output / "spectrum.csv")
    write_csv(cfg.output / "linkage.csv", ["angle", "psi"], zip(sweep.angles.tolist(), sweep.psi.tolist()))
    top = np.argsort(spec.magnitudes)[::-1][:6]
    print(f"E1={spec.e1:.4f} V THD={100 * thd(spec):.3f} % f={spec.frequency:g} Hz")
    for i in top:
        print(f"  order {spec.orders[i]:2d}: {spec.magnitudes[i]:.4e} V")
    return spec


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--positions", type=int, default=Config.positions)
    ap.add_argument("--speed", type=float, default=Config.speed, help="mechanical speed in rad/s")
    ap.add_argument("--tol", type=float, default=Config.tol)
    ap.add_argument("--workers", type=int, default=Config.workers)
    ap.add_argument("--output", type=Path, default=Config.output)
    a = ap.parse_args()
    run(Config(a.positions, a.speed, a.tol, a.workers, a.output))


if __name__ == "__main__":
    main()
