"""Random smooth-configuration generator for factor Jacobian checks."""

import numpy as np

from pushgraph.factors import (
    ConstantVelocityFactor,
    ContactForceMeasurementFactor,
    ContactSurfaceFactor,
    IntersectionFactor,
    NoiseModel,
    PoseMeasurementFactor,
    PriorFactor,
    QuasiStaticFactor,
    SurfaceGapFactor,
)
from pushgraph.geometry import PlanarPose, Shape2D, shapes_intersect, signed_distance

BOX = Shape2D.box(0.1, 0.1)
PROBE = Shape2D.disc(0.01)
DISC = Shape2D.disc(0.05)
PENTAGON = Shape2D.polygon(
    [[0.06, 0.0], [0.02, 0.055], [-0.05, 0.03], [-0.05, -0.03], [0.02, -0.055]]
)

ISO2 = NoiseModel.isotropic(2, 1.0)
ISO3 = NoiseModel.isotropic(3, 1.0)
ISO4 = NoiseModel.isotropic(4, 1.0)

ALL_KINDS = ["prior", "m_pose", "m_contactforce", "c_object", "c_ee", "c_objee",
             "s", "s_poly_ee", "v", "d"]


def random_smooth_pose(rng, scale=0.5):
    # keep theta away from the wrap seam so finite differences stay smooth
    return np.array([rng.uniform(-scale, scale), rng.uniform(-scale, scale), rng.uniform(-1.2, 1.2)])


def make_factor_sample(kind, rng):
    """One (factor, values) pair at a smooth configuration of the given kind."""
    if kind == "prior":
        return PriorFactor("k", random_smooth_pose(rng), ISO3, wrap_index=2), [random_smooth_pose(rng)]
    if kind == "m_pose":
        return PoseMeasurementFactor("k", random_smooth_pose(rng), ISO3), [random_smooth_pose(rng)]
    if kind == "m_contactforce":
        return (
            ContactForceMeasurementFactor("k", rng.normal(size=4), ISO4),
            [rng.normal(size=4)],
        )
    if kind in ("c_object", "c_ee"):
        shape = [BOX, DISC, PENTAGON][rng.integers(3)]
        pose = random_smooth_pose(rng, 0.05)
        pf = np.concatenate([rng.uniform(-0.12, 0.12, size=2), rng.normal(size=2)])
        return ContactSurfaceFactor("a", "b", shape, ISO2, kind), [pose, pf]
    if kind == "c_objee":
        shape_x = [BOX, DISC][rng.integers(2)]
        while True:
            qx = random_smooth_pose(rng, 0.05)
            qe = np.array([rng.uniform(-0.25, 0.25), rng.uniform(-0.25, 0.25), rng.uniform(-1.2, 1.2)])
            px, pe = PlanarPose.from_array(qx), PlanarPose.from_array(qe)
            if not shapes_intersect(shape_x, px, PROBE, pe):
                # stay clear of the contact boundary so differentiation is valid
                if signed_distance(shape_x, px, pe.translation) > PROBE.radius + 1e-4:
                    return SurfaceGapFactor("a", "b", shape_x, PROBE, ISO2), [qx, qe]
    if kind == "s":
        shape_x = [BOX, DISC][rng.integers(2)]
        probe = Shape2D.disc(0.02)
        while True:
            qx = random_smooth_pose(rng, 0.02)
            qe = np.array([rng.uniform(-0.08, 0.08), rng.uniform(-0.08, 0.08), rng.uniform(-1.2, 1.2)])
            px, pe = PlanarPose.from_array(qx), PlanarPose.from_array(qe)
            sd = signed_distance(shape_x, px, pe.translation)
            # interior penetration, away from both tangency and full immersion
            if probe.radius * 0.15 < probe.radius - sd < probe.radius * 0.85:
                return IntersectionFactor("a", "b", shape_x, probe, ISO2), [qx, qe]
    if kind == "s_poly_ee":
        tool = Shape2D.box(0.03, 0.02)
        while True:
            qx = random_smooth_pose(rng, 0.02)
            qe = np.array([rng.uniform(-0.08, 0.08), rng.uniform(-0.08, 0.08), rng.uniform(-1.2, 1.2)])
            px, pe = PlanarPose.from_array(qx), PlanarPose.from_array(qe)
            if not shapes_intersect(BOX, px, tool, pe):
                continue
            fac = IntersectionFactor("a", "b", BOX, tool, ISO2)
            if np.linalg.norm(fac.residual(qx, qe)) < 2e-3:
                continue
            # the sampled deepest point must win with margin, otherwise the
            # surrogate is at an argmin tie and not differentiable
            samples = tool.boundary_samples_body()
            world = samples @ pe.rotation().T + pe.translation
            sds = np.sort([signed_distance(BOX, px, w) for w in world])
            if sds[1] - sds[0] > 5e-5:
                return fac, [qx, qe]
    if kind == "v":
        dt1, dt2 = rng.uniform(0.05, 0.5, size=2)
        return (
            ConstantVelocityFactor("a", "b", "c", dt1, dt2, ISO3),
            [random_smooth_pose(rng) for _ in range(3)],
        )
    if kind == "d":
        return (
            QuasiStaticFactor("a", "b", "c", rng.uniform(0.02, 0.1), rng.uniform(0.02, 0.2), ISO2),
            [
                random_smooth_pose(rng, 0.3),
                random_smooth_pose(rng, 0.3),
                np.concatenate([rng.uniform(-0.2, 0.2, 2), rng.uniform(-4, 4, 2)]),
            ],
        )
    raise ValueError(kind)
