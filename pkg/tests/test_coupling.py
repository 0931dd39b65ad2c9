import math

import numpy as np
import pytest

from igamachine.assembly import build_dof_map
from igamachine.coupling import (
    DtnSolver,
    TraceFunction,
    dtn_iterate,
    make_subproblem,
    merged_rule,
    neumann_load,
    project_trace,
    relax_update,
    rotor_normal_flux,
    solve_monolithic,
    trace_space,
    transfer_matrix,
    write_history,
)
from igamachine.errors import StructuralError, ValidationError
from igamachine.geometry import rotate_subdomain
from igamachine.machine import build_ring
from igamachine.postproc import l2_difference


def rotor_space(model):
    return trace_space(model, build_dof_map(model, "rotor", ("dirichlet", "airgap")), "rotor")


@pytest.fixture(scope="module")
def ring():
    return build_ring(2, 1)


@pytest.fixture(scope="module")
def ring_result(ring):
    return dtn_iterate(ring, 0.5, 1e-10, 200)


class TestTraceSpace:
    def test_mass_spd(self, ring):
        M = rotor_space(ring).mass()
        np.testing.assert_allclose(M, M.T, atol=1e-15)
        assert np.linalg.eigvalsh(M).min() > 0

    def test_partition_of_unity_up_to_sign(self, ring):
        sp = rotor_space(ring)
        phi = np.linspace(0, sp.pitch, 50)
        np.testing.assert_allclose(np.abs(sp.basis(phi)).sum(axis=1), 1.0, rtol=1e-12)

    def test_antiperiodic_extension(self, ring):
        sp = rotor_space(ring)
        f = TraceFunction(sp, np.random.default_rng(0).standard_normal(sp.dim))
        phi = np.linspace(0.01, sp.pitch - 0.01, 23)
        np.testing.assert_allclose(f(phi + sp.pitch), -f(phi), atol=1e-13)
        np.testing.assert_allclose(f(phi + 2 * sp.pitch), f(phi), atol=1e-13)

    def test_wrong_length(self, ring):
        with pytest.raises(ValidationError):
            TraceFunction(rotor_space(ring), np.zeros(3))

    def test_missing_airgap(self, ring):
        dm = build_dof_map(ring, "rotor", ("dirichlet", "airgap"))
        bare = type(ring)(ring.patches, ring.materials,
                          {k: ("dirichlet" if t == "airgap" else t) for k, t in ring.edge_tags.items()},
                          ring.subdomain, ring.pole_count)
        with pytest.raises(StructuralError):
            trace_space(bare, dm, "rotor")


class TestProjection:
    def test_identity(self, ring):
        sp = rotor_space(ring)
        c = np.random.default_rng(1).standard_normal(sp.dim)
        out = project_trace(TraceFunction(sp, c), sp)
        assert np.max(np.abs(out.coeffs - c)) <= 1e-11 * np.max(np.abs(c))

    def test_zero(self, ring):
        sp = rotor_space(ring)
        assert not project_trace(TraceFunction(sp, np.zeros(sp.dim)), sp).coeffs.any()

    def test_nested_round_trip(self):
        coarse, fine = rotor_space(build_ring(2, 0)), rotor_space(build_ring(2, 1))
        c = np.random.default_rng(2).standard_normal(coarse.dim)
        back = project_trace(project_trace(TraceFunction(coarse, c), fine), coarse)
        assert np.max(np.abs(back.coeffs - c)) <= 1e-11 * np.max(np.abs(c))

    def test_shift_by_pitch_negates(self, ring):
        sp = rotor_space(ring)
        c = np.random.default_rng(3).standard_normal(sp.dim)
        out = project_trace(TraceFunction(sp, c), sp, sp.pitch)
        np.testing.assert_allclose(out.coeffs, -c, atol=1e-11)

    def test_rotation_preserves_norm_of_shifted_function(self):
        """Shifting a function by a mesh-aligned angle is exact."""
        ring = build_ring(1, 0, n_strips=4)
        sp = rotor_space(ring)
        step = sp.pitch / 4
        c = np.random.default_rng(4).standard_normal(sp.dim)
        f = TraceFunction(sp, c)
        g = project_trace(f, sp, step)
        phi = np.linspace(0.0, 2 * sp.pitch, 41)
        np.testing.assert_allclose(g(phi + step), f(phi), atol=1e-10)

    def test_transfer_conforming_equals_mass(self, ring):
        sp = rotor_space(ring)
        np.testing.assert_allclose(transfer_matrix(sp, sp), sp.mass(), atol=1e-14)

    def test_merged_rule_covers_pitch(self, ring):
        sp = rotor_space(ring)
        q, w = merged_rule(sp, sp, 0.37)
        assert w.sum() == pytest.approx(sp.radius * sp.pitch, rel=1e-13)
        assert q.min() > 0 and q.max() < sp.pitch


class TestRelax:
    def test_examples(self, ring):
        sp = rotor_space(ring)
        a = TraceFunction(sp, np.ones(sp.dim))
        b = TraceFunction(sp, 3 * np.ones(sp.dim))
        np.testing.assert_array_equal(relax_update(a, b, 0.0).coeffs, a.coeffs)
        np.testing.assert_array_equal(relax_update(a, b, 1.0).coeffs, b.coeffs)
        np.testing.assert_array_equal(relax_update(a, b, 0.5).coeffs, 2 * np.ones(sp.dim))

    def test_rejects(self, ring):
        sp = rotor_space(ring)
        a = TraceFunction(sp, np.ones(sp.dim))
        with pytest.raises(ValidationError):
            relax_update(a, a, 1.5)
        other = rotor_space(build_ring(2, 0))
        with pytest.raises(ValidationError):
            relax_update(a, TraceFunction(other, np.ones(other.dim)), 0.5)


def half_ring(refine):
    # pole pitch pi: A = x = r cos(phi) is anti-periodic, so it lies in the discrete space
    return build_ring(2, refine, pole_count=2, n_strips=2, h_pm=(0.0, 0.0), j_src=0.0, nu=(1.5, 1.0))


def linear_field(model):
    """Rotor and stator subproblems plus rotor coefficients of ``A = x`` and the exact flux load."""
    rot = make_subproblem(model, "rotor", True)
    st = make_subproblem(model, "stator", False)
    full = np.zeros(rot.dofmap.n_total)
    for k in rot.dofmap.patch_ids:
        full[rot.dofmap.gid[k].ravel()] = rot.dofmap.sign[k].ravel() * model.patches[k].net[..., 0].ravel()
    q, w = merged_rule(st.trace, rot.trace, 0.0)
    exact = (st.trace.basis(q) * (w * 1.5 * np.cos(q))[:, None]).sum(axis=0)
    return rot, st, full, exact


class TestNeumannLoad:
    def test_zero_field_zero_load(self):
        model = half_ring(1)
        rot, st, full, _ = linear_field(model)
        for method in ("variational", "pointwise"):
            g = neumann_load(rot, np.zeros_like(full), st.trace, 0.0, method, model)
            assert not np.any(g)

    def test_pointwise_flux_of_linear_field(self):
        model = half_ring(2)
        rot, st, full, exact = linear_field(model)
        phi = np.linspace(0.0, 2 * math.pi, 97)
        np.testing.assert_allclose(rotor_normal_flux(model, rot, full, phi), 1.5 * np.cos(phi), atol=1e-8)
        g = neumann_load(rot, full, st.trace, 0.0, "pointwise", model)
        assert np.max(np.abs(g - exact)) < 1e-8

    def test_variational_flux_converges(self):
        """The discrete flux functional differs only by domain quadrature error."""
        errs = []
        for level in (1, 2, 3):
            rot, st, full, exact = linear_field(half_ring(level))
            g = neumann_load(rot, full, st.trace, 0.0, "variational")
            errs.append(np.max(np.abs(g - exact)))
        assert errs[0] / errs[1] > 16 and errs[1] / errs[2] > 16

    def test_orientation_flip(self):
        model = half_ring(1)
        rot, st, full, _ = linear_field(model)
        for method in ("variational", "pointwise"):
            g = neumann_load(rot, full, st.trace, 0.0, method, model)
            flip = neumann_load(rot, full, st.trace, 0.0, method, model, orientation=-1.0)
            np.testing.assert_array_equal(flip, -g)

    def test_bad_method(self):
        rot, st, full, _ = linear_field(half_ring(0))
        with pytest.raises(ValidationError):
            neumann_load(rot, full, st.trace, 0.0, "pointwise")
        with pytest.raises(ValidationError):
            neumann_load(rot, full, st.trace, 0.0, "spectral")


class TestIteration:
    def test_zero_sources_immediate(self):
        res = dtn_iterate(build_ring(2, 0, h_pm=(0, 0), j_src=0.0))
        assert res.converged and res.state.k == 1
        assert not res.rotor_full.any() and not res.stator_full.any()

    def test_matches_monolithic(self, ring, ring_result):
        assert ring_result.converged
        dm, full, _ = solve_monolithic(ring)
        for sub, sfull in (("rotor", ring_result.rotor_full), ("stator", ring_result.stator_full)):
            sdm = ring_result.rotor.dofmap if sub == "rotor" else ring_result.stator.dofmap
            diff = l2_difference(ring, dm, full, ring, sdm, sfull, ring.patch_ids(sub))
            assert diff < 1e-6

    def test_history(self, ring_result, tmp_path):
        st = ring_result.state
        assert len(st.history) == st.k
        e_rt, e_st = st.history[-1]
        assert e_rt < st.tol and e_st < st.tol
        write_history(st, tmp_path / "h.csv")
        lines = (tmp_path / "h.csv").read_text().splitlines()
        assert lines[0] == "k,eps_rotor,eps_stator" and len(lines) == st.k + 1

    def test_fixed_point(self, ring, ring_result):
        """One more sweep from the final interface data barely moves the rotor field."""
        solver = DtnSolver(ring)
        full_rt, _, _, _, _ = solver.sweep(ring_result.state.lam.coeffs)
        rot = ring_result.rotor
        change = rot.l2(full_rt - ring_result.rotor_full) / rot.l2(ring_result.rotor_full)
        assert change < 10 * ring_result.state.tol

    def test_interface_continuity(self, ring_result):
        rot, st = ring_result.rotor, ring_result.stator
        tol = ring_result.state.tol
        q, w = merged_rule(st.trace, rot.trace, 0.0)
        a_rt = TraceFunction(rot.trace, ring_result.rotor_full[rot.trace.ids])(q)
        a_st = TraceFunction(st.trace, ring_result.stator_full[st.trace.ids])(q)
        jump = np.sum(w * (a_rt - a_st) ** 2) / np.sum(w * a_rt ** 2)
        assert jump < (10 * tol) ** 2

    def test_non_conforming_rotated(self):
        ring = rotate_subdomain(build_ring(2, 1, stator_strips=2), "rotor", 0.13)
        res = dtn_iterate(ring, 0.5, 1e-8, 200)
        assert res.converged
        assert np.all(np.isfinite(res.stator_full))

    def test_pointwise_option(self):
        """Pointwise flux is consistent but not discretely conservative: the gap shrinks with h."""
        gaps = []
        for level in (1, 2):
            ring = build_ring(2, level)
            res = dtn_iterate(ring, 0.5, 1e-8, 200, flux="pointwise")
            assert res.converged
            dm, full, _ = solve_monolithic(ring)
            gaps.append(l2_difference(ring, dm, full, ring, res.stator.dofmap, res.stator_full,
                                      ring.patch_ids("stator")))
        assert gaps[1] < gaps[0] / 2

    def test_budget_exhausted(self, ring):
        res = dtn_iterate(ring, 0.5, 1e-12, 1)
        assert not res.converged and res.state.k == 1 and len(res.state.history) == 1

    def test_bad_parameters(self, ring):
        with pytest.raises(ValidationError):
            dtn_iterate(ring, alpha=1.2)
        with pytest.raises(ValidationError):
            dtn_iterate(ring, tol=0.0)
        with pytest.raises(ValidationError):
            DtnSolver(ring, flux="spectral")

    def test_warm_start_from_solution(self, ring, ring_result):
        res = dtn_iterate(ring, 0.5, 1e-8, 200, lam0=ring_result.state.lam.coeffs)
        assert res.converged and res.state.k <= 2

    def test_alpha_zero_never_moves(self, ring):
        res = dtn_iterate(ring, 0.0, 1e-8, 5)
        assert not res.state.lam.coeffs.any()
        assert math.isfinite(res.state.history[-1][0])
