"""Geometry: pose algebra, projections, closest-point and penetration queries."""

import math

import numpy as np
import pytest

from pushgraph.errors import DegenerateProjection
from pushgraph.geometry import (
    PlanarPose,
    Plane3,
    Pose3,
    Shape2D,
    closest_pair,
    closest_surface_point,
    deepest_penetration,
    embed_in_plane,
    project_to_plane,
    se2_compose,
    se2_inverse,
    shapes_intersect,
    signed_distance,
    wrap_angle,
)

RNG = np.random.default_rng(17)


def random_pose(rng, scale=1.0):
    return PlanarPose(rng.uniform(-scale, scale), rng.uniform(-scale, scale), rng.uniform(-4.0, 4.0))


def boundary_cloud(shape, pose, n):
    """Dense world-frame boundary sampling, used as closest-point oracle."""
    if shape.kind == "disc":
        ang = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
        body = shape.radius * np.column_stack([np.cos(ang), np.sin(ang)])
    else:
        v = shape.vertices
        per_edge = max(2, n // len(v))
        body = []
        for i in range(len(v)):
            a, b = v[i], v[(i + 1) % len(v)]
            for k in range(per_edge):
                body.append(a + (b - a) * k / per_edge)
        body = np.array(body)
    return body @ pose.rotation().T + pose.translation


class TestWrap:
    def test_range(self):
        for th in [-math.pi, math.pi, 3 * math.pi, -3 * math.pi, 0.0, 6.2, -6.2, 100.0]:
            w = wrap_angle(th)
            assert -math.pi < w <= math.pi
            assert abs(math.sin(w) - math.sin(th)) < 1e-12
            assert abs(math.cos(w) - math.cos(th)) < 1e-12

    def test_pi_maps_to_pi(self):
        assert wrap_angle(math.pi) == pytest.approx(math.pi)
        assert wrap_angle(-math.pi) == pytest.approx(math.pi)


class TestSE2:
    def test_identity(self):
        p = PlanarPose(1.0, 2.0, 0.3)
        out = se2_compose(PlanarPose.identity(), p)
        np.testing.assert_allclose(out.as_array(), p.as_array(), atol=1e-15)

    def test_quarter_turn(self):
        out = se2_compose(PlanarPose(1.0, 0.0, math.pi / 2), PlanarPose(1.0, 0.0, 0.0))
        np.testing.assert_allclose(out.as_array(), [1.0, 1.0, math.pi / 2], atol=1e-15)

    def test_inverse_axiom(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            a = random_pose(rng)
            ident = se2_compose(a, se2_inverse(a))
            np.testing.assert_allclose(ident.as_array(), [0, 0, 0], atol=1e-12)

    def test_point_roundtrip(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            a = random_pose(rng)
            q = rng.normal(size=2)
            np.testing.assert_allclose(a.inverse_transform_point(a.transform_point(q)), q, atol=1e-12)


class TestProjection:
    def test_axis_aligned(self):
        p = Pose3(
            np.array([1.0, 2.0, 5.0]),
            np.array([math.cos(0.2), 0.0, 0.0, math.sin(0.2)]),  # yaw 0.4 about z
        )
        pp = project_to_plane(p, Plane3.xy())
        np.testing.assert_allclose(pp.as_array(), [1.0, 2.0, 0.4], atol=1e-12)

    def test_plane_origin_identity(self):
        pp = project_to_plane(Pose3.identity(), Plane3.xy())
        np.testing.assert_allclose(pp.as_array(), [0.0, 0.0, 0.0], atol=1e-15)

    def test_tilted_body_matches_numeric_projection(self):
        # oracle: project the rotated x-axis onto the plane directly
        rng = np.random.default_rng(5)
        plane = Plane3.xy()
        for _ in range(50):
            q = rng.normal(size=4)
            p = Pose3(rng.normal(size=3), q)
            axis = p.rotation_matrix()[:, 0]
            in_plane = axis - (axis @ plane.normal) * plane.normal
            if np.linalg.norm(in_plane) < 1e-3:
                continue
            expected = math.atan2(in_plane @ plane.y_axis, in_plane @ plane.x_axis)
            assert project_to_plane(p, plane).theta == pytest.approx(expected, abs=1e-12)

    def test_degenerate_axis_raises(self):
        # rotate body x-axis onto +z: -90 deg about y
        q = np.array([math.cos(-math.pi / 4), 0.0, math.sin(-math.pi / 4), 0.0])
        p = Pose3(np.zeros(3), q)
        with pytest.raises(DegenerateProjection):
            project_to_plane(p, Plane3.xy())

    def test_embed_then_project_is_identity(self):
        rng = np.random.default_rng(6)
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        x = np.cross(n, rng.normal(size=3))
        x /= np.linalg.norm(x)
        plane = Plane3(rng.normal(size=3), n, x)
        for _ in range(30):
            pp = random_pose(rng, scale=2.0)
            back = project_to_plane(embed_in_plane(pp, plane), plane)
            np.testing.assert_allclose(back.as_array(), pp.as_array(), atol=1e-12)


class TestShapes:
    def test_polygon_recentered(self):
        sq = Shape2D.polygon([[0, 0], [2, 0], [2, 2], [0, 2]])
        np.testing.assert_allclose(sq.vertices.mean(axis=0), [0, 0], atol=1e-12)
        assert sq.area() == pytest.approx(4.0)

    def test_polygon_validation(self):
        with pytest.raises(ValueError):
            Shape2D.polygon([[0, 0], [0, 2], [2, 2], [2, 0]])  # clockwise
        with pytest.raises(ValueError):
            Shape2D.polygon([[0, 0], [1, 0], [2, 0], [1, 1]])  # collinear
        with pytest.raises(ValueError):
            Shape2D.disc(0.0)

    def test_ellipse_area(self):
        e = Shape2D.ellipse(0.08, 0.05)
        assert e.area() == pytest.approx(math.pi * 0.08 * 0.05, rel=5e-3)


class TestClosestPoint:
    def test_disc_radial(self):
        g = closest_surface_point(Shape2D.disc(1.0), PlanarPose.identity(), [2.0, 0.0])
        np.testing.assert_allclose(g, [1.0, 0.0], atol=1e-15)

    def test_square_corner(self):
        sq = Shape2D.box(2.0, 2.0)
        g = closest_surface_point(sq, PlanarPose.identity(), [2.0, 2.0])
        np.testing.assert_allclose(g, [1.0, 1.0], atol=1e-15)

    def test_square_interior_nearest_edge(self):
        # oracle: dense boundary sampling
        sq = Shape2D.box(2.0, 2.0)
        pose = PlanarPose.identity()
        q = np.array([0.2, 0.1])
        cloud = boundary_cloud(sq, pose, 100_000)
        oracle = cloud[np.argmin(np.linalg.norm(cloud - q, axis=1))]
        g = closest_surface_point(sq, pose, q)
        np.testing.assert_allclose(g, [1.0, 0.1], atol=1e-12)
        np.testing.assert_allclose(g, oracle, atol=1e-4)

    def test_random_queries_match_sampling_oracle(self):
        shapes = [Shape2D.disc(0.7), Shape2D.box(1.2, 0.6), Shape2D.polygon([[0.5, 0], [0, 0.8], [-0.6, 0.1], [-0.2, -0.7]])]
        rng = np.random.default_rng(7)
        for shape in shapes:
            pose = random_pose(rng)
            cloud = boundary_cloud(shape, pose, 100_000)
            for _ in range(15):
                q = rng.uniform(-2, 2, size=2)
                g = closest_surface_point(shape, pose, q)
                d_oracle = np.min(np.linalg.norm(cloud - q, axis=1))
                assert np.linalg.norm(q - g) == pytest.approx(d_oracle, abs=1e-4)

    def test_result_on_boundary(self):
        rng = np.random.default_rng(8)
        for shape in [Shape2D.disc(0.5), Shape2D.box(0.8, 0.5)]:
            pose = random_pose(rng)
            for _ in range(50):
                q = rng.uniform(-2, 2, size=2)
                g = closest_surface_point(shape, pose, q)
                assert abs(signed_distance(shape, pose, g)) < 1e-9


class TestSignedDistance:
    def test_disc(self):
        d = Shape2D.disc(1.0)
        assert signed_distance(d, PlanarPose.identity(), [2.0, 0.0]) == pytest.approx(1.0)
        assert signed_distance(d, PlanarPose.identity(), [0.0, 0.0]) == pytest.approx(-1.0)

    def test_polygon_interior_matches_oracle(self):
        shape = Shape2D.polygon([[0.5, 0], [0.3, 0.6], [-0.5, 0.4], [-0.4, -0.5]])
        pose = PlanarPose(0.2, -0.1, 0.7)
        cloud = boundary_cloud(shape, pose, 200_000)
        rng = np.random.default_rng(9)
        for _ in range(20):
            q = pose.transform_point(rng.uniform(-0.25, 0.25, size=2))
            sd = signed_distance(shape, pose, q)
            d_oracle = np.min(np.linalg.norm(cloud - q, axis=1))
            assert abs(sd) == pytest.approx(d_oracle, abs=1e-6 + 1e-4 * d_oracle + 3e-5)

    def test_magnitude_equals_distance_to_closest_point(self):
        rng = np.random.default_rng(10)
        shape = Shape2D.box(1.0, 0.7)
        pose = random_pose(rng)
        for _ in range(100):
            q = rng.uniform(-2, 2, size=2)
            sd = signed_distance(shape, pose, q)
            g = closest_surface_point(shape, pose, q)
            assert abs(sd) == pytest.approx(float(np.linalg.norm(q - g)), abs=1e-12)

    def test_lipschitz_along_rays(self):
        shape = Shape2D.box(1.0, 1.0)
        pose = PlanarPose(0.3, 0.2, 0.5)
        rng = np.random.default_rng(11)
        for _ in range(20):
            origin = rng.uniform(-2, 2, size=2)
            direction = rng.normal(size=2)
            direction /= np.linalg.norm(direction)
            ts = np.linspace(0.0, 3.0, 200)
            vals = [signed_distance(shape, pose, origin + t * direction) for t in ts]
            steps = np.abs(np.diff(vals)) / np.diff(ts)
            assert np.all(steps <= 1.0 + 1e-9)


class TestPenetration:
    def test_separated(self):
        sq = Shape2D.box(2.0, 2.0)
        disc = Shape2D.disc(0.5)
        assert deepest_penetration(sq, PlanarPose.identity(), disc, PlanarPose(2.0, 0.0, 0.0)) is None

    def test_tangency_is_none(self):
        sq = Shape2D.box(2.0, 2.0)
        disc = Shape2D.disc(0.5)
        assert deepest_penetration(sq, PlanarPose.identity(), disc, PlanarPose(1.5, 0.0, 0.0)) is None
        d2 = Shape2D.disc(0.25)
        assert deepest_penetration(disc, PlanarPose.identity(), d2, PlanarPose(0.75, 0.0, 0.0)) is None

    def test_disc_into_square(self):
        sq = Shape2D.box(2.0, 2.0)
        disc = Shape2D.disc(0.5)
        out = deepest_penetration(sq, PlanarPose.identity(), disc, PlanarPose(1.25, 0.0, 0.0))
        assert out is not None
        delta, g_delta = out
        np.testing.assert_allclose(delta, [0.75, 0.0], atol=1e-12)
        np.testing.assert_allclose(g_delta, [1.0, 0.0], atol=1e-12)

    def test_disc_into_square_sampling_oracle(self):
        sq = Shape2D.box(2.0, 2.0)
        disc = Shape2D.disc(0.5)
        ee_pose = PlanarPose(1.25, 0.3, 0.0)
        out = deepest_penetration(sq, PlanarPose.identity(), disc, ee_pose)
        delta, g_delta = out
        ang = np.linspace(0, 2 * math.pi, 100_000, endpoint=False)
        pts = ee_pose.translation + 0.5 * np.column_stack([np.cos(ang), np.sin(ang)])
        sds = np.array([signed_distance(sq, PlanarPose.identity(), p) for p in pts])
        oracle_delta = pts[np.argmin(sds)]
        np.testing.assert_allclose(delta, oracle_delta, atol=1e-4)
        np.testing.assert_allclose(g_delta, closest_surface_point(sq, PlanarPose.identity(), delta), atol=1e-12)

    def test_polygon_ee(self):
        sq = Shape2D.box(2.0, 2.0)
        small = Shape2D.box(0.5, 0.5)
        out = deepest_penetration(sq, PlanarPose.identity(), small, PlanarPose(1.2, 0.0, 0.0))
        assert out is not None
        delta, g_delta = out
        assert delta[0] == pytest.approx(0.95, abs=1e-9)
        assert g_delta[0] == pytest.approx(1.0, abs=1e-9)

    def test_overlap_reporting_symmetric(self):
        rng = np.random.default_rng(12)
        a = Shape2D.box(1.0, 0.6)
        b = Shape2D.disc(0.3)
        c = Shape2D.box(0.5, 0.5)
        pairs = [(a, b), (a, c), (b, c)]
        for sa, sb in pairs:
            for _ in range(200):
                pa = random_pose(rng, 0.8)
                pb = random_pose(rng, 0.8)
                assert shapes_intersect(sa, pa, sb, pb) == shapes_intersect(sb, pb, sa, pa)
                fwd = deepest_penetration(sa, pa, sb, pb)
                rev = deepest_penetration(sb, pb, sa, pa)
                assert (fwd is None) == (rev is None)


class TestClosestPair:
    def test_disc_disc(self):
        a, b = closest_pair(Shape2D.disc(1.0), PlanarPose.identity(), Shape2D.disc(0.5), PlanarPose(3.0, 0.0, 0.0))
        np.testing.assert_allclose(a, [1.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(b, [2.5, 0.0], atol=1e-12)

    def test_square_disc(self):
        a, b = closest_pair(Shape2D.box(2.0, 2.0), PlanarPose.identity(), Shape2D.disc(0.5), PlanarPose(2.0, 0.3, 0.0))
        np.testing.assert_allclose(a, [1.0, 0.3], atol=1e-10)
        np.testing.assert_allclose(b, [1.5, 0.3], atol=1e-10)

    def test_gap_matches_sampled_minimum(self):
        sa, pa = Shape2D.box(1.0, 0.8), PlanarPose(0.0, 0.0, 0.3)
        sb, pb = Shape2D.polygon([[0.3, 0], [0, 0.4], [-0.3, -0.1]]), PlanarPose(1.4, 0.5, -0.5)
        a, b = closest_pair(sa, pa, sb, pb)
        ca = boundary_cloud(sa, pa, 2000)
        cb = boundary_cloud(sb, pb, 2000)
        d_oracle = np.min(np.linalg.norm(ca[:, None, :] - cb[None, :, :], axis=2))
        assert np.linalg.norm(a - b) == pytest.approx(d_oracle, abs=1e-3)
