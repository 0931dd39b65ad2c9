"""Spectrum of the unrelaxed rotor-Dirichlet / stator-Neumann sweep.

With all sources off one sweep is a linear map ``G`` on the rotor trace
coefficients.  The relaxed iteration ``(1 - alpha) I + alpha G`` contracts
when its spectral radius is below one; the eigenvalues of ``G`` are ``-mu``
with ``mu`` the stiffness ratio of the two sides seen through the interface.
"""
import argparse
from dataclasses import dataclass, replace

import numpy as np

from igamachine.coupling import DtnSolver
from igamachine.machine import build_pmsm, load_bundled


@dataclass(frozen=True)
class Config:
    degree: int | None = None
    refine: int | None = None
    alphas: tuple = (0.3, 0.5, 0.7)


def sweep_operator(model) -> np.ndarray:
    quiet = {k: replace(m, h_pm=(0.0, 0.0), j_src=0.0) for k, m in model.materials.items()}
    solver = DtnSolver(replace(model, materials=quiet))
    n = solver.rotor.trace.dim
    G = np.zeros((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        G[:, j] = solver.sweep(e)[2]
    return G


def run(cfg: Config):
    if cfg.degree is None and cfg.refine is None:
        model = load_bundled()
    else:
        model = build_pmsm(cfg.degree or 2, cfg.refine or 0)
    ev = np.linalg.eigvals(sweep_operator(model))
    mu = -ev.real
    print(f"trace dim={ev.size} mu_min={mu.min():.4f} mu_max={mu.max():.4f} "
          f"max|imag|={np.abs(ev.imag).max():.1e}")
    for alpha in cfg.alphas:
        rho = np.max(np.abs(1 - alpha + alpha * ev))
        print(f"alpha={alpha:g} spectral_radius={rho:.4f}")
    best = 2.0 / (2.0 + mu.min() + mu.max())
    print(f"alpha_opt={best:.4f} spectral_radius={np.max(np.abs(1 - best + best * ev)):.4f}")
    return mu


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--degree", type=int)
    ap.add_argument("--refine", type=int)
    ap.add_argument("--alphas", type=float, nargs="+", default=Config.alphas)
    a = ap.parse_args()
    run(Config(a.degree, a.refine, tuple(a.alphas)))


if __name__ == "__main__":
    main()
