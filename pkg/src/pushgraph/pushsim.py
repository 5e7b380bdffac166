"""Quasi-static planar pushing simulator built on the ellipsoidal limit surface.

The pusher sticks to the object at a point contact. Each step solves jointly
for the applied force and the object twist such that (i) the force lies on
the limit-surface ellipsoid, (ii) the twist is parallel to the ellipsoid
normal at that force, and (iii) the object material point at the contact
lands exactly on the advected pusher contact point. The twist is taken from
the normality condition, which makes simulated transitions satisfy the
estimator's quasi-static factor identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.integrate
import scipy.optimize

from .errors import ContactLost, DegenerateShape, NonConvergence, NoSolution
from .geometry import (
    PlanarPose,
    Shape2D,
    angle_diff,
    closest_pair,
    closest_surface_point,
    cross2,
    deepest_penetration,
    outward_normal,
    rot2,
    shapes_intersect,
)


@dataclass(frozen=True)
class PushParams:
    """Limit-surface constants for a uniform-pressure support patch.

    f_max = mu_s * mass * gravity (flat support, normal force = weight) and
    c = tau_max / f_max, both enforced at construction.
    """

    mu_s: float
    mass: float
    gravity: float
    f_max: float
    tau_max: float
    c: float
    pressure_model: str = "uniform"

    def __post_init__(self):
        expected_fmax = self.mu_s * self.mass * self.gravity
        if abs(self.f_max - expected_fmax) > 1e-6 * max(1.0, expected_fmax):
            raise ValueError("f_max must equal mu_s * mass * gravity")
        if self.f_max <= 0.0 or self.tau_max <= 0.0:
            raise ValueError("limit-surface semi-axes must be positive")
        if abs(self.c - self.tau_max / self.f_max) > 1e-6 * max(1.0, self.c):
            raise ValueError("c must equal tau_max / f_max")
        if self.pressure_model != "uniform":
            raise ValueError("only the uniform pressure model is supported")

    def ellipsoid_value(self, f, tau: float) -> float:
        """Left-hand side of the limit-surface equation; 1.0 on the surface."""
        return float((f[0] ** 2 + f[1] ** 2) / self.f_max**2 + tau**2 / self.tau_max**2)


def _polygon_mean_radius(shape: Shape2D) -> float:
    """Mean distance from the centroid over the polygon area.

    Fan decomposition about the (centroid) origin; each triangle contributes
    an exact 1-D angular integral of R(phi)^3 / 3, evaluated adaptively.
    """
    verts = shape.vertices
    total = 0.0
    for i in range(len(verts)):
        a = verts[i]
        b = verts[(i + 1) % len(verts)]
        edge = b - a
        n = np.array([edge[1], -edge[0]])
        n = n / np.linalg.norm(n)
        h = float(n @ a)  # distance from origin to the edge line
        phi_a = math.atan2(a[1], a[0])
        span = math.atan2(cross2(a, b), float(a @ b))  # in (0, pi)

        def integrand(u, phi_a=phi_a, n=n, h=h):
            d = np.array([math.cos(phi_a + u), math.sin(phi_a + u)])
            r_edge = h / float(n @ d)
            return r_edge**3 / 3.0

        val, _ = scipy.integrate.quad(integrand, 0.0, span, epsabs=1e-12, epsrel=1e-12)
        total += val
    return total / shape.area()


def limit_surface_constants(shape: Shape2D, mu_s: float, mass: float, gravity: float = 9.81) -> PushParams:
    """Friction limit-surface constants for a shape under uniform pressure."""
    area = shape.area()
    if area <= 1e-12:
        raise DegenerateShape("shape has zero support area")
    f_max = mu_s * mass * gravity
    if shape.kind == "disc":
        mean_r = 2.0 * shape.radius / 3.0
    else:
        mean_r = _polygon_mean_radius(shape)
    tau_max = f_max * mean_r
    return PushParams(mu_s=mu_s, mass=mass, gravity=gravity, f_max=f_max, tau_max=tau_max, c=tau_max / f_max)


# ---------------------------------------------------------------------------
# single step
# ---------------------------------------------------------------------------


def _continuous_guess(u, r_arm, params: PushParams):
    """Closed-form sticking-push solution at the start configuration.

    Returns (f, kappa): force on the ellipsoid and the positive motion scale
    such that the contact displacement kappa * A f equals u.
    """
    s_arm = np.array([-r_arm[1], r_arm[0]])
    A = np.eye(2) / params.f_max**2 + np.outer(s_arm, s_arm) / params.tau_max**2
    fdir = np.linalg.solve(A, u)
    norm = np.linalg.norm(fdir)
    if norm < 1e-300:
        raise NoSolution("degenerate contact geometry")
    fhat = fdir / norm
    q = params.ellipsoid_value(fhat, float(s_arm @ fhat))
    m = 1.0 / math.sqrt(q)
    f = m * fhat
    kappa = norm / m
    return f, kappa


def _solve_step(x0: PlanarPose, p0, p1, params: PushParams, tol: float = 1e-12):
    """Solve one sticking step: find (f, kappa) and the resulting object pose.

    The twist is parameterized by limit-surface normality, so the motion
    constraint of the quasi-static factor holds identically; the root solve
    only enforces the material-point landing and the ellipsoid equation.
    """
    t0 = x0.translation
    qb = x0.inverse_transform_point(p0)
    u = p1 - t0 - x0.rotation() @ qb  # equals p1 - p0

    f_init, kappa_init = _continuous_guess(u, p0 - t0, params)
    z0 = np.array([f_init[0], f_init[1], kappa_init])

    def unpack(z):
        f = z[:2]
        kappa = z[2]
        dtrans = kappa * f / params.f_max**2
        t1 = t0 + dtrans
        tau = cross2(p1 - t1, f)
        dtheta = kappa * tau / params.tau_max**2
        return f, kappa, t1, tau, dtheta

    def residual(z):
        f, kappa, t1, tau, dtheta = unpack(z)
        landing = t1 + rot2(x0.theta + dtheta) @ qb
        return np.array([landing[0] - p1[0], landing[1] - p1[1], params.ellipsoid_value(f, tau) - 1.0])

    sol = scipy.optimize.root(residual, z0, method="hybr", tol=tol)
    if not sol.success or np.max(np.abs(residual(sol.x))) > 1e-9:
        sol = scipy.optimize.root(residual, z0 * 1.05 + 1e-9, method="hybr", tol=tol)
        if not sol.success or np.max(np.abs(residual(sol.x))) > 1e-9:
            raise NonConvergence("inner step solve failed")
    z = sol.x
    if z[2] < 0.0:
        z = -z  # mirror branch: same motion, opposite force; pick pushing
    f, kappa, t1, tau, dtheta = unpack(z)
    return PlanarPose(t1[0], t1[1], x0.theta + dtheta), f


def _advect_contact(ee_pose: PlanarPose, ee_motion, contact):
    """New ee pose and the contact material point carried along with it."""
    motion = np.asarray(ee_motion, dtype=float)
    ee_new = PlanarPose(ee_pose.x + motion[0], ee_pose.y + motion[1], ee_pose.theta + motion[2])
    p_body = ee_pose.inverse_transform_point(contact)
    return ee_new, ee_new.transform_point(p_body)


def quasi_static_step(obj_pose: PlanarPose, ee_pose: PlanarPose, ee_motion, contact, params: PushParams):
    """Advance the object one step under a prescribed pusher pose increment.

    ee_motion is the world-frame increment (dx, dy, dtheta) applied to the
    end-effector over the step; contact must lie on both surfaces. Sticking
    contact is assumed, so the object material point at the contact follows
    the pusher. Returns (new_obj_pose, force). A stationary pusher leaves
    the object in place with zero force.
    """
    contact = np.asarray(contact, dtype=float)
    _, p_new = _advect_contact(ee_pose, ee_motion, contact)
    if float(np.linalg.norm(p_new - contact)) < 1e-13:
        return obj_pose, np.zeros(2)
    return _solve_step(obj_pose, contact, p_new, params)


@dataclass
class GroundTruthTrajectory:
    """Simulator output: exact states plus the physics they satisfy."""

    timestamps: np.ndarray
    object_poses: np.ndarray  # (T, 3)
    ee_poses: np.ndarray  # (T, 3)
    contact_points: np.ndarray  # (T, 2)
    forces: np.ndarray  # (T, 2)
    object_shape: Shape2D
    ee_shape: Shape2D
    params: PushParams
    contact_lost: bool = False
    reprojection_warnings: int = 0

    def __len__(self) -> int:
        return len(self.timestamps)

    def max_dynamics_residual(self) -> float:
        """Largest quasi-static factor residual over all transitions."""
        from .factors import quasi_static_residual, ContactForceState

        worst = 0.0
        for t in range(1, len(self)):
            dt = self.timestamps[t] - self.timestamps[t - 1]
            r = quasi_static_residual(
                PlanarPose.from_array(self.object_poses[t - 1]),
                PlanarPose.from_array(self.object_poses[t]),
                ContactForceState(self.contact_points[t], self.forces[t]),
                self.params.c,
                dt,
            )
            worst = max(worst, float(np.max(np.abs(r))))
        return worst

    def max_ellipsoid_deviation(self) -> float:
        """Largest |limit-surface equation - 1| over steps with motion."""
        worst = 0.0
        for t in range(len(self)):
            f = self.forces[t]
            if float(np.linalg.norm(f)) < 1e-12:
                continue  # stationary step, no force on the surface
            tau = cross2(self.contact_points[t] - self.object_poses[t, :2], f)
            worst = max(worst, abs(self.params.ellipsoid_value(f, tau) - 1.0))
        return worst

    def max_contact_surface_error(self) -> float:
        """Largest distance of the contact point from either surface."""
        worst = 0.0
        for t in range(len(self)):
            p = self.contact_points[t]
            a = closest_surface_point(self.object_shape, PlanarPose.from_array(self.object_poses[t]), p)
            b = closest_surface_point(self.ee_shape, PlanarPose.from_array(self.ee_poses[t]), p)
            worst = max(worst, float(np.linalg.norm(a - p)), float(np.linalg.norm(b - p)))
        return worst


def _initial_contact(obj_shape, obj_pose, ee_shape, ee_poses):
    """Shift the whole pusher path so its first pose exactly touches."""
    ee0 = PlanarPose.from_array(ee_poses[0])
    if shapes_intersect(obj_shape, obj_pose, ee_shape, ee0):
        delta, g_delta = deepest_penetration(obj_shape, obj_pose, ee_shape, ee0)
        shift = g_delta - delta
        contact = g_delta
    else:
        a, b = closest_pair(obj_shape, obj_pose, ee_shape, ee0)
        shift = a - b
        contact = a
    shifted = ee_poses.copy()
    shifted[:, :2] += shift
    return shifted, contact


def _run_push(obj_init: PlanarPose, obj_shape, ee_shape, params, ee0: PlanarPose, contact,
              next_pose, T: int, dt: float) -> GroundTruthTrajectory:
    """Shared stepping loop; next_pose(t, obj, ee, contact) yields the pose at t."""
    obj_arr = np.zeros((T, 3))
    ee_arr = np.zeros((T, 3))
    p_arr = np.zeros((T, 2))
    f_arr = np.zeros((T, 2))
    obj_arr[0] = obj_init.as_array()
    ee_arr[0] = ee0.as_array()
    p_arr[0] = contact

    contact_lost = False
    reproj_warn = 0
    steps_done = T
    x_cur = obj_init
    e_cur = ee0
    p_cur = np.asarray(contact, dtype=float)
    for t in range(1, T):
        e_next = next_pose(t, x_cur, e_cur, p_cur)
        motion = np.array(
            [e_next.x - e_cur.x, e_next.y - e_cur.y, angle_diff(e_next.theta, e_cur.theta)]
        )
        _, p_next = _advect_contact(e_cur, motion, p_cur)
        u = p_next - p_cur
        unorm = float(np.linalg.norm(u))
        if unorm > 1e-13:
            n_out = outward_normal(obj_shape, x_cur, p_cur)
            if float(u @ n_out) > 1e-10 * unorm:
                contact_lost = True
                steps_done = t
                break
            if t == 1:
                # force at the first sample: continuous-limit incoming solution
                f_arr[0] = _continuous_guess(u, p_cur - x_cur.translation, params)[0]
        x_cur, f = quasi_static_step(x_cur, e_cur, motion, p_cur, params)
        e_cur = e_next
        # keep the tracked contact on both surfaces; sticking keeps drift tiny
        proj_obj = closest_surface_point(obj_shape, x_cur, p_next)
        proj_ee = closest_surface_point(ee_shape, e_cur, p_next)
        if float(np.linalg.norm(proj_obj - proj_ee)) > 1e-6:
            reproj_warn += 1
        p_cur = 0.5 * (proj_obj + proj_ee)
        obj_arr[t] = x_cur.as_array()
        ee_arr[t] = e_cur.as_array()
        p_arr[t] = p_cur
        f_arr[t] = f

    timestamps = np.arange(T, dtype=float) * dt
    return GroundTruthTrajectory(
        timestamps=timestamps[:steps_done],
        object_poses=obj_arr[:steps_done],
        ee_poses=ee_arr[:steps_done],
        contact_points=p_arr[:steps_done],
        forces=f_arr[:steps_done],
        object_shape=obj_shape,
        ee_shape=ee_shape,
        params=params,
        contact_lost=contact_lost,
        reprojection_warnings=reproj_warn,
    )


def simulate_push(ee_poses, obj_init: PlanarPose, obj_shape: Shape2D, ee_shape: Shape2D,
                  params: PushParams, dt: float) -> GroundTruthTrajectory:
    """Run the pusher along a prescribed pose path and track the object.

    The path is translated rigidly so its first pose touches the object
    (approach resolution). The trajectory is truncated with contact_lost set
    if the pusher ever retreats from the object at the contact point.
    """
    ee_poses = np.asarray(ee_poses, dtype=float)
    if ee_poses.ndim != 2 or ee_poses.shape[1] != 3 or len(ee_poses) < 1:
        raise ValueError("ee_poses must be a (T, 3) array")
    ee_poses, contact = _initial_contact(obj_shape, obj_init, ee_shape, ee_poses)

    def next_pose(t, x, e, p):
        return PlanarPose.from_array(ee_poses[t])

    return _run_push(obj_init, obj_shape, ee_shape, params, PlanarPose.from_array(ee_poses[0]),
                     contact, next_pose, len(ee_poses), dt)


def servo_push(obj_init: PlanarPose, obj_shape: Shape2D, ee_shape: Shape2D, params: PushParams,
               speed: float, duration: float, dt: float, steer_angles=None,
               lateral_offset: float = 0.0, direction: float = 0.0) -> GroundTruthTrajectory:
    """Center-seeking push with a steering profile; keeps contact stable.

    A sticking point contact on a flat face is unstable under open-loop
    pushing (any offset torques the face away until the pusher sheds), so
    sustained pushes aim each step's motion at the object center, rotated by
    the per-step steer angle. The recorded pusher path replays identically
    through simulate_push.
    """
    T = max(1, round(duration / dt))
    steer = np.zeros(T) if steer_angles is None else np.asarray(steer_angles, dtype=float)
    if len(steer) < T:
        raise ValueError("steer_angles shorter than the trajectory")
    _, ee0 = make_push_scene(obj_shape, ee_shape, direction, lateral_offset)
    path0 = np.tile(ee0.as_array(), (1, 1))
    shifted, contact = _initial_contact(obj_shape, obj_init, ee_shape, path0)
    ee0 = PlanarPose.from_array(shifted[0])

    def next_pose(t, x, e, p):
        aim = x.translation - p
        norm = float(np.linalg.norm(aim))
        d = np.array([math.cos(e.theta), math.sin(e.theta)]) if norm < 1e-12 else aim / norm
        d = rot2(steer[t]) @ d
        heading = math.atan2(d[1], d[0])
        return PlanarPose(e.x + speed * dt * d[0], e.y + speed * dt * d[1], heading)

    return _run_push(obj_init, obj_shape, ee_shape, params, ee0, contact, next_pose, T, dt)


def benchmark_scenario(seed: int, duration: float = 4.0, dt: float = 0.1,
                       speed: float | None = None) -> GroundTruthTrajectory:
    """Deterministic mixed-shape, mixed-steering push for benchmark trials.

    Shapes, friction, speed (<= 10 cm/s), initial geometry, and the steering
    profile all derive from the seed. Contact is maintained for the full
    duration by the servo path generator.
    """
    rng = np.random.default_rng(seed)
    shapes = [
        Shape2D.box(0.1, 0.1),
        Shape2D.disc(0.06),
        Shape2D.ellipse(0.08, 0.05),
        Shape2D.box(0.12, 0.08),
    ]
    obj_shape = shapes[seed % len(shapes)]
    ee_shape = Shape2D.disc(0.008)
    mu = rng.uniform(0.25, 0.45)
    mass = rng.uniform(0.6, 1.2)
    params = limit_surface_constants(obj_shape, mu, mass)
    if speed is None:
        speed = rng.uniform(0.05, 0.08)
    T = max(1, round(duration / dt))
    steer = steering_profile("random", T, dt, seed=seed + 10_000, amplitude=rng.uniform(0.2, 0.35))
    gt = servo_push(
        PlanarPose.identity(), obj_shape, ee_shape, params, speed, duration, dt, steer,
        lateral_offset=rng.uniform(-0.01, 0.01), direction=rng.uniform(-math.pi, math.pi),
    )
    return gt


def steering_profile(kind: str, T: int, dt: float, seed: int = 0, amplitude: float = 0.25) -> np.ndarray:
    """Per-step steer angles for servo pushes: constant, sine, or random walk."""
    if kind == "none":
        return np.zeros(T)
    if kind == "constant":
        return np.full(T, amplitude)
    if kind == "sine":
        t = np.arange(T) * dt
        period = max(2.0, T * dt / 2.0)
        return amplitude * np.sin(2.0 * math.pi * t / period)
    if kind == "random":
        rng = np.random.default_rng(seed)
        out = np.zeros(T)
        val = rng.uniform(-amplitude, amplitude)
        for i in range(T):
            val = np.clip(val + rng.normal(0.0, amplitude) * math.sqrt(dt), -amplitude, amplitude)
            out[i] = val
        return out
    raise ValueError(f"unknown steering profile {kind!r}")


# ---------------------------------------------------------------------------
# pusher path families and scene setup
# ---------------------------------------------------------------------------


def make_push_scene(obj_shape: Shape2D, ee_shape: Shape2D, direction: float = 0.0,
                    lateral_offset: float = 0.0) -> tuple[PlanarPose, PlanarPose]:
    """Object at the origin and a pusher placed just behind it.

    direction is the intended push heading (rad); lateral_offset shifts the
    contact sideways to induce rotation. The exact touch is resolved by
    simulate_push, this only needs to be close.
    """
    obj_pose = PlanarPose.identity()
    d = np.array([math.cos(direction), math.sin(direction)])
    perp = np.array([-d[1], d[0]])
    far = -3.0 * obj_shape.max_radius() * d + lateral_offset * perp
    p0 = closest_surface_point(obj_shape, obj_pose, far)
    n = outward_normal(obj_shape, obj_pose, p0)
    center = p0 + ee_shape.max_radius() * n
    return obj_pose, PlanarPose(center[0], center[1], direction)


def straight_path(start: PlanarPose, speed: float, duration: float, dt: float) -> np.ndarray:
    """Constant-velocity pusher path along the start heading."""
    n = max(1, round(duration / dt))
    t = np.arange(n) * dt
    d = np.array([math.cos(start.theta), math.sin(start.theta)])
    poses = np.zeros((n, 3))
    poses[:, 0] = start.x + speed * t * d[0]
    poses[:, 1] = start.y + speed * t * d[1]
    poses[:, 2] = start.theta
    return poses


def arc_path(start: PlanarPose, speed: float, curvature: float, duration: float, dt: float) -> np.ndarray:
    """Constant-speed, constant-curvature pusher path."""
    n = max(1, round(duration / dt))
    poses = np.zeros((n, 3))
    x, y, th = start.x, start.y, start.theta
    for i in range(n):
        poses[i] = [x, y, th]
        x += speed * dt * math.cos(th)
        y += speed * dt * math.sin(th)
        th += speed * curvature * dt
    poses[:, 2] = np.array([PlanarPose(0, 0, a).theta for a in poses[:, 2]])
    return poses


def random_curvature_path(start: PlanarPose, speed: float, duration: float, dt: float,
                          seed: int, max_curvature: float = 2.0) -> np.ndarray:
    """Smoothly varying curvature, deterministic per seed."""
    rng = np.random.default_rng(seed)
    n = max(1, round(duration / dt))
    curv = 0.0
    poses = np.zeros((n, 3))
    x, y, th = start.x, start.y, start.theta
    for i in range(n):
        poses[i] = [x, y, th]
        curv = np.clip(curv + rng.normal(0.0, 0.6) * dt / 0.1, -max_curvature, max_curvature)
        x += speed * dt * math.cos(th)
        y += speed * dt * math.sin(th)
        th += speed * curv * dt
    poses[:, 2] = np.array([PlanarPose(0, 0, a).theta for a in poses[:, 2]])
    return poses
