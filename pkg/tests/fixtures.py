"""Small model fixtures shared by the assembly and acceptance tests."""
import numpy as np

from igamachine.geometry import Material, MultiPatchModel, Patch, make_quad_patch
from igamachine.splines import KnotVector

ALL_SIDES = ("u0", "u1", "v0", "v1")


def single(patch, material=None, tags="dirichlet", pole_count=2):
    mats = {patch.region: material or Material(1.0)}
    return MultiPatchModel([patch], mats, {(0, s): tags for s in ALL_SIDES}, ["rotor"], pole_count)


def unit_square(degree=1, n_el=1, **mat):
    return single(make_quad_patch([(0, 0), (1, 0), (0, 1), (1, 1)], degree=degree, n_el=n_el),
                  Material(**{"nu": 1.0, **mat}))


def random_fixture(seed, pu, pv, curved):
    rng = np.random.default_rng(seed)
    kv_u = KnotVector(pu, np.r_[np.zeros(pu + 1), np.sort(rng.uniform(0.2, 0.8, 2)), np.ones(pu + 1)])
    kv_v = KnotVector(pv, np.r_[np.zeros(pv + 1), rng.uniform(0.3, 0.7, 1), np.ones(pv + 1)])
    A = np.array([[1.3, 0.2], [-0.1, 0.9]]) + 0.1 * rng.standard_normal((2, 2))
    gu, gv = kv_u.greville(), kv_v.greville()
    uu, vv = np.meshgrid(gu, gv, indexing="ij")
    xy = np.stack([uu, vv], axis=-1) @ A.T + rng.standard_normal(2)
    w = np.ones(uu.shape)
    if curved:
        xy[1:-1, 1:-1] += 0.02 * rng.standard_normal(xy[1:-1, 1:-1].shape)
        w = rng.uniform(0.7, 1.3, uu.shape)
    return Patch(kv_u, kv_v, np.concatenate([xy, w[..., None]], axis=2))


FIXTURES = [(11, 1, 1, False), (12, 2, 2, True), (13, 2, 1, True)]
