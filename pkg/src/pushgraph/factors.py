"""Residuals, analytic Jacobians, and noise models for the estimation factors.

Factor types: measurement (M) on poses and contact/force states, contact
surface (C) in three flavors, geometry intersection penalty (S), constant
velocity smoothness (V), quasi-static pushing dynamics (D), and unary priors.

Pose variables are (x, y, theta) arrays; contact/force variables are
(px, py, fx, fy) arrays. Angle residuals always use the shortest arc.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NonPositiveTimestep
from .geometry import (
    SKEW,
    PlanarPose,
    Shape2D,
    angle_diff,
    closest_pair,
    closest_point_with_jacobians,
    cross2,
    shapes_intersect,
    _deepest_ee_point,
)


@dataclass(frozen=True, eq=False)
class ContactForceState:
    """Combined contact point (m) and applied force (N) at one timestep."""

    p: np.ndarray
    f: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float).reshape(2)
        f = np.asarray(self.f, dtype=float).reshape(2)
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(f))):
            raise ValueError("contact/force components must be finite")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "f", f)

    @classmethod
    def from_array(cls, arr) -> "ContactForceState":
        arr = np.asarray(arr, dtype=float)
        return cls(arr[:2], arr[2:4])

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.p, self.f])


class NoiseModel:
    """Gaussian factor noise with SPD covariance.

    Whitening uses the lower Cholesky factor L of the covariance, so the
    whitened residual L^-1 r satisfies ||L^-1 r||^2 = r^T Sigma^-1 r.
    """

    def __init__(self, covariance):
        cov = np.atleast_2d(np.asarray(covariance, dtype=float))
        if cov.shape[0] != cov.shape[1]:
            raise ValueError("covariance must be square")
        if np.max(np.abs(cov - cov.T)) > 1e-12 * max(1.0, np.max(np.abs(cov))):
            raise ValueError("covariance must be symmetric")
        self.covariance = 0.5 * (cov + cov.T)
        self._chol = scipy.linalg.cholesky(self.covariance, lower=True)
        # precomputed inverse sqrt: whitening is a plain matmul in hot loops
        self._sqrt_info = scipy.linalg.solve_triangular(
            self._chol, np.eye(self.covariance.shape[0]), lower=True
        )

    @classmethod
    def isotropic(cls, dim: int, sigma: float) -> "NoiseModel":
        return cls(np.eye(dim) * sigma**2)

    @classmethod
    def from_sigmas(cls, sigmas) -> "NoiseModel":
        s = np.asarray(sigmas, dtype=float)
        return cls(np.diag(s**2))

    @property
    def dim(self) -> int:
        return self.covariance.shape[0]

    def whiten(self, r: np.ndarray) -> np.ndarray:
        return self._sqrt_info @ r

    def whiten_jacobian(self, jac: np.ndarray) -> np.ndarray:
        return self._sqrt_info @ jac

    def squared_norm(self, r: np.ndarray) -> float:
        w = self._sqrt_info @ r
        return float(w @ w)


# ---------------------------------------------------------------------------
# residual functions (typed surface)
# ---------------------------------------------------------------------------


def measurement_residual(state, meas) -> np.ndarray:
    """state - measurement; dim 3 for poses (wrapped theta), dim 4 for p-f."""
    if isinstance(state, PlanarPose):
        return np.array(
            [state.x - meas.x, state.y - meas.y, angle_diff(state.theta, meas.theta)]
        )
    if isinstance(state, ContactForceState):
        return state.as_array() - meas.as_array()
    raise TypeError(f"unsupported state type {type(state)!r}")


def prior_residual(state, anchor) -> np.ndarray:
    """Unary anchor residual, state - anchor (same convention as M)."""
    return measurement_residual(state, anchor)


def contact_surface_residual(owner_shape: Shape2D, owner_pose: PlanarPose, p) -> np.ndarray:
    """G(surface, p) - p: zero iff p lies on the owner's boundary."""
    g, _, _ = closest_point_with_jacobians(owner_shape, owner_pose, p)
    return g - np.asarray(p, dtype=float)


def intersection_residual(obj_shape, obj_pose, ee_shape, ee_pose) -> np.ndarray:
    """Penetration penalty: g_delta - delta when overlapping, else zero."""
    if not shapes_intersect(obj_shape, obj_pose, ee_shape, ee_pose):
        return np.zeros(2)
    delta, _ = _deepest_ee_point(obj_shape, obj_pose, ee_shape, ee_pose)
    g, _, _ = closest_point_with_jacobians(obj_shape, obj_pose, delta)
    return g - delta


def const_velocity_residual(a: PlanarPose, b: PlanarPose, c_: PlanarPose, dt1: float, dt2: float) -> np.ndarray:
    """Finite-difference velocity mismatch between consecutive pose pairs."""
    if dt1 <= 0.0 or dt2 <= 0.0:
        raise NonPositiveTimestep(f"dt1={dt1}, dt2={dt2}")
    d1 = np.array([b.x - a.x, b.y - a.y, angle_diff(b.theta, a.theta)]) / dt1
    d2 = np.array([c_.x - b.x, c_.y - b.y, angle_diff(c_.theta, b.theta)]) / dt2
    return d1 - d2


def quasi_static_residual(x_prev: PlanarPose, x_cur: PlanarPose, pf: ContactForceState,
                          c: float, dt: float) -> np.ndarray:
    """Limit-surface motion constraint in cross-multiplied form.

    r = v*tau - c^2*omega*f with v, omega finite-difference object twist and
    tau the moment of f applied at the contact point about the object origin
    (its center of mass). Smooth at omega = 0 and tau = 0, unlike the ratio
    form, and zero exactly on quasi-static transitions.
    """
    v = (x_cur.translation - x_prev.translation) / dt
    omega = angle_diff(x_cur.theta, x_prev.theta) / dt
    r_arm = pf.p - x_cur.translation
    tau = cross2(r_arm, pf.f)
    return v * tau - c**2 * omega * pf.f


# ---------------------------------------------------------------------------
# factor objects (array surface used by the optimizer)
# ---------------------------------------------------------------------------


class Factor:
    """Residual block over an ordered tuple of variables.

    Subclasses implement residual(*vals) and jacobians(*vals) on raw arrays
    (poses dim 3, contact/force dim 4). keys are opaque hashables owned by
    the graph container. constant_jacobian marks factors whose Jacobian does
    not depend on the linearization point (cacheable).
    """

    kind = "base"
    constant_jacobian = False

    def __init__(self, keys, noise: NoiseModel):
        self.keys = tuple(keys)
        self.noise = noise

    @property
    def dim(self) -> int:
        return self.noise.dim

    def residual(self, *vals):
        raise NotImplementedError

    def jacobians(self, *vals):
        raise NotImplementedError

    def residual_and_jacobians(self, *vals):
        """Fused evaluation; overridden where the two share geometry work."""
        return self.residual(*vals), self.jacobians(*vals)


class PriorFactor(Factor):
    """Unary anchor; gauge fixing for the first timestep."""

    kind = "prior"
    constant_jacobian = True

    def __init__(self, key, anchor, noise, wrap_index: int | None = None):
        super().__init__((key,), noise)
        self.anchor = np.asarray(anchor, dtype=float)
        self.wrap_index = wrap_index  # theta component for pose anchors

    def residual(self, v):
        r = v - self.anchor
        if self.wrap_index is not None:
            r[self.wrap_index] = angle_diff(v[self.wrap_index], self.anchor[self.wrap_index])
        return r

    def jacobians(self, v):
        return [np.eye(len(self.anchor))]


class PoseMeasurementFactor(PriorFactor):
    kind = "m_pose"

    def __init__(self, key, meas, noise):
        super().__init__(key, meas, noise, wrap_index=2)


class ContactForceMeasurementFactor(Factor):
    """Measurement on the combined contact/force state.

    indices selects which of the four components are measured, so partially
    observed timesteps (point only, force only) stay well-posed.
    """

    kind = "m_contactforce"
    constant_jacobian = True

    def __init__(self, key, meas, noise, indices=(0, 1, 2, 3)):
        super().__init__((key,), noise)
        self.meas = np.asarray(meas, dtype=float)
        self.indices = np.asarray(indices, dtype=int)
        if len(self.meas) != len(self.indices):
            raise ValueError("measurement length must match selected indices")

    def residual(self, v):
        return v[self.indices] - self.meas

    def jacobians(self, v):
        jac = np.zeros((len(self.indices), 4))
        jac[np.arange(len(self.indices)), self.indices] = 1.0
        return [jac]


class ContactSurfaceFactor(Factor):
    """C factor tying the contact point to one body's surface.

    Variables: (owner pose, contact/force state). kind is "c_object" or
    "c_ee" depending on the owner.
    """

    def __init__(self, pose_key, pf_key, shape: Shape2D, noise, kind: str):
        super().__init__((pose_key, pf_key), noise)
        self.shape = shape
        self.kind = kind

    def residual(self, pose_arr, pf_arr):
        pose = PlanarPose.from_array(pose_arr)
        p = pf_arr[:2]
        g, _, _ = closest_point_with_jacobians(self.shape, pose, p)
        return g - p

    def jacobians(self, pose_arr, pf_arr):
        return self.residual_and_jacobians(pose_arr, pf_arr)[1]

    def residual_and_jacobians(self, pose_arr, pf_arr):
        pose = PlanarPose.from_array(pose_arr)
        p = pf_arr[:2]
        g, dg_dq, dg_dpose = closest_point_with_jacobians(self.shape, pose, p)
        j_pf = np.zeros((2, 4))
        j_pf[:, :2] = dg_dq
        j_pf[0, 0] -= 1.0
        j_pf[1, 1] -= 1.0
        return g - p, [dg_dpose, j_pf]


class SurfaceGapFactor(Factor):
    """C factor between the object and end-effector surfaces.

    Residual is the gap vector between the closest boundary points of the two
    shapes; zero at touching contact and (by the open-set convention shared
    with the intersection factor) identically zero under penetration, where S
    takes over.
    """

    kind = "c_objee"

    def __init__(self, obj_key, ee_key, obj_shape, ee_shape, noise):
        super().__init__((obj_key, ee_key), noise)
        self.obj_shape = obj_shape
        self.ee_shape = ee_shape

    def _pair(self, qx, qe):
        if shapes_intersect(self.obj_shape, qx, self.ee_shape, qe):
            return None
        return closest_pair(self.obj_shape, qx, self.ee_shape, qe)

    def residual(self, x_arr, e_arr):
        pair = self._pair(PlanarPose.from_array(x_arr), PlanarPose.from_array(e_arr))
        if pair is None:
            return np.zeros(2)
        a, b = pair
        return a - b

    def jacobians(self, x_arr, e_arr):
        return self.residual_and_jacobians(x_arr, e_arr)[1]

    def residual_and_jacobians(self, x_arr, e_arr):
        qx = PlanarPose.from_array(x_arr)
        qe = PlanarPose.from_array(e_arr)
        pair = self._pair(qx, qe)
        if pair is None:
            return np.zeros(2), [np.zeros((2, 3)), np.zeros((2, 3))]
        a, b = pair
        # implicit differentiation of the fixed point a = G_x(b), b = G_e(a);
        # at exact tangency the system loses rank along the sliding direction,
        # so use a truncated least-squares solve (subgradient choice)
        _, A, Pa = closest_point_with_jacobians(self.obj_shape, qx, b)
        _, B, Pb = closest_point_with_jacobians(self.ee_shape, qe, a)
        M = np.eye(4)
        M[:2, 2:] = -A
        M[2:, :2] = -B
        rhs = np.zeros((4, 6))
        rhs[:2, :3] = Pa
        rhs[2:, 3:] = Pb
        dab = np.linalg.lstsq(M, rhs, rcond=1e-9)[0]
        dr = dab[:2] - dab[2:]
        return a - b, [dr[:, :3], dr[:, 3:]]


class IntersectionFactor(Factor):
    """S factor penalizing object / end-effector overlap."""

    kind = "s"

    def __init__(self, obj_key, ee_key, obj_shape, ee_shape, noise):
        super().__init__((obj_key, ee_key), noise)
        self.obj_shape = obj_shape
        self.ee_shape = ee_shape

    def residual(self, x_arr, e_arr):
        return intersection_residual(
            self.obj_shape, PlanarPose.from_array(x_arr), self.ee_shape, PlanarPose.from_array(e_arr)
        )

    def _delta_jacobians(self, qx, qe, branch):
        """d(delta)/d(object pose) and d(delta)/d(ee pose), both 2x3."""
        d_dqx = np.zeros((2, 3))
        d_dqe = np.zeros((2, 3))
        r_e = self.ee_shape.radius
        c = qe.translation
        tag = branch[0]
        if tag == "body":
            delta = qe.transform_point(branch[1])
            d_dqe[:, :2] = np.eye(2)
            d_dqe[:, 2] = SKEW @ (delta - c)
            return d_dqx, d_dqe
        if tag == "disc_radial":
            d = c - qx.translation
            rho = float(np.linalg.norm(d))
            n = d / rho
            K = (np.eye(2) - np.outer(n, n)) / rho
            d_dqe[:, :2] = np.eye(2) - r_e * K
            d_dqx[:, :2] = r_e * K
            return d_dqx, d_dqe
        if tag == "poly_edge":
            n_w = qx.rotation() @ branch[1]
            d_dqe[:, :2] = np.eye(2)
            d_dqx[:, 2] = -r_e * (SKEW @ n_w)
            return d_dqx, d_dqe
        # poly_vertex
        v_w = qx.transform_point(branch[1])
        dv = v_w - c
        rho = float(np.linalg.norm(dv))
        u = dv / rho
        Mu = (np.eye(2) - np.outer(u, u)) / rho
        d_dqe[:, :2] = np.eye(2) - r_e * Mu
        d_dqx[:, :2] = r_e * Mu
        d_dqx[:, 2] = r_e * Mu @ (SKEW @ (v_w - qx.translation))
        return d_dqx, d_dqe

    def jacobians(self, x_arr, e_arr):
        return self.residual_and_jacobians(x_arr, e_arr)[1]

    def residual_and_jacobians(self, x_arr, e_arr):
        qx = PlanarPose.from_array(x_arr)
        qe = PlanarPose.from_array(e_arr)
        if not shapes_intersect(self.obj_shape, qx, self.ee_shape, qe):
            return np.zeros(2), [np.zeros((2, 3)), np.zeros((2, 3))]
        delta, branch = _deepest_ee_point(self.obj_shape, qx, self.ee_shape, qe)
        g, dg_dq, dg_dpose = closest_point_with_jacobians(self.obj_shape, qx, delta)
        dd_dqx, dd_dqe = self._delta_jacobians(qx, qe, branch)
        gm = dg_dq - np.eye(2)
        return g - delta, [dg_dpose + gm @ dd_dqx, gm @ dd_dqe]


class ConstantVelocityFactor(Factor):
    """V factor: finite-difference velocity mismatch over a pose triple."""

    kind = "v"
    constant_jacobian = True

    def __init__(self, key_a, key_b, key_c, dt1, dt2, noise):
        if dt1 <= 0.0 or dt2 <= 0.0:
            raise NonPositiveTimestep(f"dt1={dt1}, dt2={dt2}")
        super().__init__((key_a, key_b, key_c), noise)
        self.dt1 = float(dt1)
        self.dt2 = float(dt2)

    def residual(self, a, b, c):
        return const_velocity_residual(
            PlanarPose.from_array(a), PlanarPose.from_array(b), PlanarPose.from_array(c), self.dt1, self.dt2
        )

    def jacobians(self, a, b, c):
        eye = np.eye(3)
        return [-eye / self.dt1, eye * (1.0 / self.dt1 + 1.0 / self.dt2), -eye / self.dt2]


class QuasiStaticFactor(Factor):
    """D factor: cross-multiplied limit-surface motion constraint."""

    kind = "d"

    def __init__(self, key_prev, key_cur, pf_key, c, dt, noise):
        super().__init__((key_prev, key_cur, pf_key), noise)
        self.c = float(c)
        self.dt = float(dt)

    def residual(self, xp, xc, pf):
        return quasi_static_residual(
            PlanarPose.from_array(xp),
            PlanarPose.from_array(xc),
            ContactForceState.from_array(pf),
            self.c,
            self.dt,
        )

    def jacobians(self, xp, xc, pf):
        dt, c2 = self.dt, self.c**2
        v = (xc[:2] - xp[:2]) / dt
        omega = angle_diff(xc[2], xp[2]) / dt
        p, f = pf[:2], pf[2:]
        r_arm = p - xc[:2]
        tau = cross2(r_arm, f)
        g = np.array([f[1], -f[0]])  # d tau / d r_arm
        s_arm = np.array([-r_arm[1], r_arm[0]])  # d tau / d f
        j_prev = np.zeros((2, 3))
        j_prev[:, :2] = -(tau / dt) * np.eye(2)
        j_prev[:, 2] = c2 * f / dt
        j_cur = np.zeros((2, 3))
        j_cur[:, :2] = (tau / dt) * np.eye(2) - np.outer(v, g)
        j_cur[:, 2] = -c2 * f / dt
        j_pf = np.zeros((2, 4))
        j_pf[:, :2] = np.outer(v, g)
        j_pf[:, 2:] = np.outer(v, s_arm) - c2 * omega * np.eye(2)
        return [j_prev, j_cur, j_pf]


def numeric_jacobian(factor: Factor, values, step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of a factor, reference for analytic ones.

    values is a sequence of variable arrays in key order; the result stacks
    per-variable blocks horizontally.
    """
    values = [np.asarray(v, dtype=float).copy() for v in values]
    r0 = factor.residual(*values)
    blocks = []
    for vi, v in enumerate(values):
        jac = np.zeros((len(r0), len(v)))
        for k in range(len(v)):
            bumped_hi = [u.copy() for u in values]
            bumped_lo = [u.copy() for u in values]
            bumped_hi[vi][k] += step
            bumped_lo[vi][k] -= step
            jac[:, k] = (factor.residual(*bumped_hi) - factor.residual(*bumped_lo)) / (2.0 * step)
        blocks.append(jac)
    return np.hstack(blocks)


def analytic_jacobian(factor: Factor, values) -> np.ndarray:
    """Stacked analytic Jacobian in the same layout as numeric_jacobian."""
    return np.hstack(factor.jacobians(*[np.asarray(v, dtype=float) for v in values]))
