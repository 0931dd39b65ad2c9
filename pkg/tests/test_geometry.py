import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from igamachine.errors import ParseError, ValidationError
from igamachine.geometry import (
    MultiPatchModel,
    Material,
    Patch,
    edge_points,
    eval_map,
    make_annular_patch,
    make_arc,
    make_quad_patch,
    patch_area,
    refine_model,
    rotate_subdomain,
    validate_model,
)
from igamachine.machine import (
    PmsmParams,
    build_pmsm,
    build_ring,
    load_bundled,
    load_model,
    model_from_dict,
    model_to_dict,
    save_model,
)
from igamachine.splines import nurbs_many


def _rational_curve(kv, pts, wts, u):
    span, R, _ = nurbs_many(kv, wts, u)
    idx = span[:, None] - kv.degree + np.arange(kv.degree + 1)
    return np.einsum("kr,krd->kd", R, pts[idx])


class TestArc:
    def test_quarter_circle_on_circle(self):
        kv, pts, wts = make_arc((0, 0), 1.0, 0.0, math.pi / 2)
        x = _rational_curve(kv, pts, wts, np.linspace(0, 1, 1000))
        assert np.max(np.abs(np.hypot(x[:, 0], x[:, 1]) - 1)) < 1e-13

    def test_quarter_circle_midpoint_and_weight(self):
        kv, pts, wts = make_arc((0, 0), 1.0, 0.0, math.pi / 2)
        assert wts[1] == pytest.approx(math.sqrt(2) / 2, abs=1e-15)
        np.testing.assert_allclose(pts[1], [1.0, 1.0], atol=1e-15)
        x = _rational_curve(kv, pts, wts, np.array([0.5]))[0]
        assert math.atan2(x[1], x[0]) == pytest.approx(math.pi / 4, abs=1e-14)

    def test_half_circle_tangent_continuity(self):
        kv, pts, wts = make_arc((0, 0), 2.0, 0.0, math.pi)
        assert len(pts) == 5
        x = _rational_curve(kv, pts, wts, np.linspace(0, 1, 1000))
        assert np.max(np.abs(np.hypot(x[:, 0], x[:, 1]) - 2)) < 1e-13 * 2
        # junction control point lies between its neighbours on one line
        d1 = pts[2] - pts[1]
        d2 = pts[3] - pts[2]
        assert abs(d1[0] * d2[1] - d1[1] * d2[0]) < 1e-14

    def test_offset_center(self):
        kv, pts, wts = make_arc((3.0, -1.0), 0.5, 1.0, 2.2)
        x = _rational_curve(kv, pts, wts, np.linspace(0, 1, 200))
        assert np.max(np.abs(np.hypot(x[:, 0] - 3, x[:, 1] + 1) - 0.5)) < 1e-13

    @pytest.mark.parametrize("radius", [0.0, -1.0])
    def test_bad_radius(self, radius):
        with pytest.raises(ValidationError):
            make_arc((0, 0), radius, 0, 1)


class TestAnnularPatch:
    def test_corners(self):
        p = make_annular_patch(1.0, 2.0, 0.0, math.pi / 2)
        for (u, v), (r, t) in {(0, 0): (1, 0), (1, 0): (2, 0), (0, 1): (1, math.pi / 2),
                               (1, 1): (2, math.pi / 2)}.items():
            x, _ = eval_map(p, (u, v))
            np.testing.assert_allclose(x, [r * math.cos(t), r * math.sin(t)], atol=1e-15)

    @pytest.mark.parametrize("degree", [1, 2])
    def test_area(self, degree):
        p = make_annular_patch(1.0, 2.0, 0.2, 1.3, radial_degree=degree)
        assert patch_area(p, 6) == pytest.approx(0.5 * 1.1 * (4 - 1), rel=1e-10)

    def test_inner_edge_exact(self):
        p = make_annular_patch(1.0, 2.0, 0.0, math.pi / 2)
        x = edge_points(p, "u0", np.linspace(0, 1, 1000)).x
        assert np.max(np.abs(np.hypot(x[:, 0], x[:, 1]) - 1)) < 1e-13

    def test_polar_midpoint(self):
        x, J = eval_map(make_annular_patch(1.0, 2.0, 0.0, math.pi / 2), (0.5, 0.5))
        assert math.hypot(*x) == pytest.approx(1.5, abs=1e-13)
        assert math.atan2(x[1], x[0]) == pytest.approx(math.pi / 4, abs=1e-13)
        assert np.linalg.det(J) > 0

    def test_too_wide(self):
        with pytest.raises(ValidationError):
            make_annular_patch(1, 2, 0, 2.0)


class TestEvalMap:
    def test_identity_square(self):
        p = make_quad_patch([(0, 0), (1, 0), (0, 1), (1, 1)])
        x, J = eval_map(p, (0.3, 0.7))
        np.testing.assert_allclose(x, [0.3, 0.7], atol=1e-15)
        np.testing.assert_allclose(J, np.eye(2), atol=1e-15)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.1, 1.0), st.floats(1.1, 3.0), st.floats(-1.0, 1.0), st.floats(0.1, 1.5))
    def test_corner_interpolates_first_control_point(self, r0, r1, t0, dt):
        p = refine_model(MultiPatchModel([make_annular_patch(r0, r0 * r1, t0, t0 + dt, radial_degree=2)],
                                         {"air": Material(1.0)}, {}, ["rotor"], 2), 1).patches[0]
        x, _ = eval_map(p, (0.0, 0.0))
        np.testing.assert_array_equal(x, p.net[0, 0, :2])

    def test_jacobian_matches_finite_difference(self):
        p = make_annular_patch(0.7, 1.9, 0.3, 1.4, radial_degree=2)
        uv = np.array([0.37, 0.61])
        _, J = eval_map(p, uv)
        h = 1e-6
        for k in range(2):
            e = np.zeros(2)
            e[k] = h
            fd = (eval_map(p, uv + e)[0] - eval_map(p, uv - e)[0]) / (2 * h)
            np.testing.assert_allclose(J[:, k], fd, rtol=1e-8)


class TestRotate:
    def test_zero_is_identity(self):
        m = build_pmsm(2, 0)
        assert rotate_subdomain(m, "rotor", 0.0) is m

    def test_full_turn(self):
        m0 = build_pmsm(2, 0)
        m = m0
        for _ in range(m0.pole_count):
            m = rotate_subdomain(m, "rotor", m0.pole_pitch)
        for a, b in zip(m0.patches, m.patches):
            np.testing.assert_allclose(a.net, b.net, atol=1e-12)

    def test_rigid(self):
        m0 = build_pmsm(2, 0)
        m = rotate_subdomain(m0, "rotor", 0.1)
        assert m.rotor_angle == pytest.approx(0.1)
        for k in m0.patch_ids("rotor"):
            a, b = m0.patches[k].net, m.patches[k].net
            np.testing.assert_allclose(np.hypot(b[..., 0], b[..., 1]), np.hypot(a[..., 0], a[..., 1]), rtol=1e-13)
            pa, pb = a[..., :2].reshape(-1, 2), b[..., :2].reshape(-1, 2)
            da = np.linalg.norm(pa[:, None] - pa[None], axis=2)
            db = np.linalg.norm(pb[:, None] - pb[None], axis=2)
            assert np.max(np.abs(da - db)) < 1e-12
        for k in m0.patch_ids("stator"):
            assert m.patches[k] is m0.patches[k]

    def test_magnetisation_turns(self):
        m0 = build_pmsm(2, 0)
        m = rotate_subdomain(m0, "rotor", 0.3)
        h0 = np.array(m0.materials["magnet"].h_pm)
        h1 = np.array(m.materials["magnet"].h_pm)
        assert np.linalg.norm(h1) == pytest.approx(np.linalg.norm(h0))
        assert math.atan2(h1[1], h1[0]) - math.atan2(h0[1], h0[0]) == pytest.approx(0.3)

    def test_rotated_model_still_valid(self):
        assert validate_model(rotate_subdomain(build_pmsm(2, 1), "rotor", 0.123)) == []

    def test_stator_cannot_move(self):
        with pytest.raises(ValidationError):
            rotate_subdomain(build_pmsm(2, 0), "stator", 0.1)


class TestValidate:
    def test_bundled_valid(self):
        assert validate_model(load_bundled()) == []

    @pytest.mark.parametrize("degree", [1, 2])
    def test_builder_valid(self, degree):
        assert validate_model(build_pmsm(degree, 1)) == []

    def test_ring_valid(self):
        assert validate_model(build_ring(2, 1)) == []

    def test_negative_jacobian(self):
        m = build_pmsm(2, 0)
        p = m.patches[0]
        flipped = Patch(p.kv_u, p.kv_v, p.net[::-1], p.region)
        bad = MultiPatchModel([flipped] + list(m.patches[1:]), m.materials, m.edge_tags, m.subdomain,
                              m.pole_count)
        report = validate_model(bad)
        assert any("patch 0" in s and "Jacobian" in s for s in report)

    def test_missing_dirichlet(self):
        m = build_pmsm(2, 0)
        tags = {k: t for k, t in m.edge_tags.items() if not (t == "dirichlet" and k[0] in m.patch_ids("stator"))}
        report = validate_model(MultiPatchModel(m.patches, m.materials, tags, m.subdomain, m.pole_count))
        assert any("no 'dirichlet' edges" in s for s in report)
        assert any("without tag" in s for s in report)

    def test_missing_material(self):
        m = build_pmsm(2, 0)
        mats = {k: v for k, v in m.materials.items() if k != "magnet"}
        report = validate_model(MultiPatchModel(m.patches, mats, m.edge_tags, m.subdomain, m.pole_count))
        assert any("no material" in s for s in report)

    def test_nonconforming_interior(self):
        m = build_pmsm(2, 0)
        patches = list(m.patches)
        patches[0] = refine_model(MultiPatchModel([patches[0]], m.materials, {}, ["rotor"], 6), 1).patches[0]
        report = validate_model(MultiPatchModel(patches, m.materials, m.edge_tags, m.subdomain, m.pole_count))
        assert any("non-conforming" in s for s in report)


class TestExactGeometry:
    def test_bundled_circles(self):
        m = load_bundled()
        pr = PmsmParams()
        nominal = np.array([pr.r_shaft, pr.r_rotor_iron, pr.r_magnet, pr.r_airgap, pr.r_bore, pr.r_slot, pr.r_out])
        s = np.linspace(0, 1, 1000)
        for k, p in enumerate(m.patches):
            for side in ("u0", "u1"):
                x = edge_points(p, side, s).x
                r = np.hypot(x[:, 0], x[:, 1])
                r0 = nominal[np.argmin(np.abs(nominal - r[0]))]
                assert np.max(np.abs(r - r0)) / r0 < 1e-12, (k, side)


class TestFileFormat:
    def test_round_trip_bitwise(self, tmp_path):
        m = rotate_subdomain(build_pmsm(2, 1), "rotor", 0.1)
        path = tmp_path / "m.json"
        save_model(m, path)
        back = load_model(path)
        assert back.rotor_angle == m.rotor_angle
        for a, b in zip(m.patches, back.patches):
            np.testing.assert_array_equal(a.net, b.net)
            np.testing.assert_array_equal(a.kv_v.knots, b.kv_v.knots)
        assert back.materials == m.materials
        assert back.edge_tags == m.edge_tags
        assert back.winding == m.winding

    def test_truncated(self, tmp_path):
        path = tmp_path / "bad.json"
        save_model(build_pmsm(2, 0), path)
        text = path.read_text()
        path.write_text(text[: len(text) // 2])
        with pytest.raises(ParseError) as err:
            load_model(path)
        assert err.value.line is not None

    def test_wrong_format(self):
        with pytest.raises(ParseError):
            model_from_dict({"format": "other"})

    def test_missing_key(self):
        d = model_to_dict(build_pmsm(2, 0))
        del d["patches"][0]["region"]
        with pytest.raises(ParseError):
            model_from_dict(json.loads(json.dumps(d)))

    def test_mu_r_accepted(self):
        d = model_to_dict(build_pmsm(2, 0))
        d["materials"]["stator_iron"] = {"mu_r": 500.0}
        m = model_from_dict(d)
        assert m.materials["stator_iron"].nu == pytest.approx(1 / (4e-7 * math.pi * 500))
