"""Pinhole camera, rigid transforms and 2D/3D line primitives.

Conventions used throughout the package:

* Image points are normalized coordinates ``(x, y)`` with homogeneous form
  ``(x, y, 1)``; pixels only appear at I/O boundaries.
* A :class:`Pose` maps coordinates of frame A into frame B as
  ``P_b = R @ P_a + t``.
* Quaternions are stored ``(q1, q2, q3, q4)`` with ``q4`` the scalar part and
  are always normalized so that ``q4 >= 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateLine, NonPositiveDepth

MIN_DEPTH = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_normalized(self, uv) -> np.ndarray:
        uv = np.asarray(uv, dtype=float)
        return np.stack([(uv[..., 0] - self.cx) / self.fx, (uv[..., 1] - self.cy) / self.fy], axis=-1)

    def to_pixels(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        return np.stack([xy[..., 0] * self.fx + self.cx, xy[..., 1] * self.fy + self.cy], axis=-1)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


# ---------------------------------------------------------------------------
# quaternions

def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q)
    if q[3] < 0:
        q = -q
    return q


def quat_multiply(a, b) -> np.ndarray:
    """Hamilton product ``a * b`` for scalar-last quaternions."""
    ax, ay, az, aw = a
    bx, by, bz, bw = b
    return np.array([
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
        aw * bw - ax * bx - ay * by - az * bz,
    ])


def quat_conjugate(q) -> np.ndarray:
    return np.array([-q[0], -q[1], -q[2], q[3]])


def quat_to_matrix(q) -> np.ndarray:
    x, y, z, w = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [(R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s, 0.25 * s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s, (R[2, 1] - R[1, 2]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s, (R[0, 2] - R[2, 0]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s, (R[1, 0] - R[0, 1]) / s]
    return quat_normalize(q)


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return quat_normalize(np.append(np.sin(angle / 2) * axis, np.cos(angle / 2)))


def quat_angle(q) -> float:
    """Rotation angle in radians, in ``[0, pi]``."""
    q = quat_normalize(q)
    return 2.0 * np.arctan2(np.linalg.norm(q[:3]), q[3])


def rotation_matrix_jacobian(qv) -> np.ndarray:
    """Derivatives of ``R`` w.r.t. the three imaginary quaternion parts.

    The scalar part is the dependent ``sqrt(1 - |qv|^2)``. Returns an array of
    shape ``(3, 3, 3)`` where ``[i]`` is ``dR/dq_i``.
    """
    x, y, z = qv
    w = np.sqrt(max(1.0 - x * x - y * y - z * z, 0.0))
    dx = 2 * np.array([[0, y, z], [y, -2 * x, -w], [z, w, -2 * x]])
    dy = 2 * np.array([[-2 * y, x, w], [x, 0, z], [-w, z, -2 * y]])
    dz = 2 * np.array([[-2 * z, -w, x], [w, -2 * z, y], [x, y, 0]])
    dw = 2 * np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]])
    if w < 1e-12:
        raise ValueError("minimal quaternion at the 180 degree singularity")
    return np.stack([dx - (x / w) * dw, dy - (y / w) * dw, dz - (z / w) * dw])


# ---------------------------------------------------------------------------
# poses

@dataclass(frozen=True, eq=False)
class Pose:
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))
    q: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.0, 1.0]))

    def __post_init__(self):
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float).reshape(3).copy())
        object.__setattr__(self, "q", quat_normalize(np.asarray(self.q, dtype=float).reshape(4)))

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_rt(cls, R, t) -> "Pose":
        return cls(t, matrix_to_quat(R))

    @classmethod
    def from_minimal(cls, xi) -> "Pose":
        xi = np.asarray(xi, dtype=float)
        qv = xi[3:6]
        n2 = float(qv @ qv)
        if n2 > 1.0 + 1e-12:
            raise ValueError("quaternion imaginary part has norm > 1")
        return cls(xi[:3], np.append(qv, np.sqrt(max(1.0 - n2, 0.0))))

    @property
    def R(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def minimal(self) -> np.ndarray:
        """The 6-vector ``(tx, ty, tz, q1, q2, q3)``."""
        return np.concatenate([self.t, self.q[:3]])

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def __repr__(self):
        return f"Pose(t={np.round(self.t, 6).tolist()}, q={np.round(self.q, 6).tolist()})"


def transform(pose: Pose, P) -> np.ndarray:
    """Apply ``P' = R P + t``; ``P`` may be a single point or an ``(N, 3)`` array."""
    P = np.asarray(P, dtype=float)
    return P @ pose.R.T + pose.t


def inverse(pose: Pose) -> Pose:
    qi = quat_conjugate(pose.q)
    return Pose(-quat_to_matrix(qi) @ pose.t, qi)


def compose(a: Pose, b: Pose) -> Pose:
    """``a ∘ b``: first apply ``b``, then ``a``."""
    return Pose(a.R @ b.t + a.t, quat_multiply(a.q, b.q))


def pose_distance(a: Pose, b: Pose) -> tuple[float, float]:
    """Translation (m) and rotation (rad) magnitude of ``a^-1 ∘ b``."""
    d = compose(inverse(a), b)
    return float(np.linalg.norm(d.t)), quat_angle(d.q)


def slerp_from_identity(q, fraction: float) -> np.ndarray:
    """Rotation along the geodesic from identity to ``q`` at ``fraction``."""
    q = quat_normalize(q)
    angle = quat_angle(q)
    if angle < 1e-15:
        return np.array([0.0, 0.0, 0.0, 1.0])
    return quat_from_axis_angle(q[:3], fraction * angle)


# ---------------------------------------------------------------------------
# projection

def project_normalized(P) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    Z = P[..., 2]
    if np.any(Z <= MIN_DEPTH):
        raise NonPositiveDepth(f"point depth {np.min(Z)} is not positive")
    return P[..., :2] / Z[..., None]


def project(P, K: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Project to pixels. Returns ``(uv, xy)`` where ``xy`` is normalized."""
    xy = project_normalized(P)
    return K.to_pixels(xy), xy


def back_project(u: float, v: float, Z: float, K: CameraIntrinsics) -> np.ndarray:
    if Z <= MIN_DEPTH:
        raise NonPositiveDepth(f"depth {Z} is not positive")
    return Z * np.array([(u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0])


def back_project_normalized(xy, Z) -> np.ndarray:
    xy = np.asarray(xy, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if np.any(Z <= MIN_DEPTH):
        raise NonPositiveDepth("depth is not positive")
    return np.concatenate([xy, np.ones(xy.shape[:-1] + (1,))], axis=-1) * Z[..., None]


def homogeneous(xy) -> np.ndarray:
    xy = np.asarray(xy, dtype=float)
    return np.concatenate([xy, np.ones(xy.shape[:-1] + (1,))], axis=-1)


# ---------------------------------------------------------------------------
# lines

def hessian_from_endpoints(e1, e2) -> np.ndarray:
    """Hessian normal form ``(lx, ly, d)`` through two image points.

    The sign is fixed so that ``d >= 0``; for lines through the origin
    ``lx > 0``, or ``lx == 0`` and ``ly > 0``.
    """
    e1 = np.asarray(e1, dtype=float)
    e2 = np.asarray(e2, dtype=float)
    direction = e2 - e1
    length = np.hypot(direction[0], direction[1])
    if length < 1e-9:
        raise DegenerateLine("line endpoints coincide")
    n = np.array([-direction[1], direction[0]]) / length
    d = -float(n @ e1)
    if abs(d) < 1e-15:
        d = 0.0
        if n[0] < 0 or (n[0] == 0 and n[1] < 0):
            n = -n
    elif d < 0:
        n, d = -n, -d
    return np.array([n[0], n[1], d])


def point_line_distance(line, xy) -> np.ndarray:
    """Signed distance(s) of normalized point(s) to a Hessian line."""
    xy = np.asarray(xy, dtype=float)
    return xy[..., 0] * line[0] + xy[..., 1] * line[1] + line[2]


@dataclass(frozen=True, eq=False)
class Line2D:
    e1: np.ndarray
    e2: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "e1", np.asarray(self.e1, dtype=float).reshape(2))
        object.__setattr__(self, "e2", np.asarray(self.e2, dtype=float).reshape(2))

    @property
    def hessian(self) -> np.ndarray:
        return hessian_from_endpoints(self.e1, self.e2)

    @property
    def endpoints(self) -> np.ndarray:
        return np.stack([self.e1, self.e2])


@dataclass(frozen=True, eq=False)
class Line3D:
    P1: np.ndarray
    P2: np.ndarray

    def __post_init__(self):
        P1 = np.asarray(self.P1, dtype=float).reshape(3)
        P2 = np.asarray(self.P2, dtype=float).reshape(3)
        if np.linalg.norm(P1 - P2) <= 1e-6:
            raise DegenerateLine("3D line endpoints coincide")
        object.__setattr__(self, "P1", P1)
        object.__setattr__(self, "P2", P2)

    @property
    def endpoints(self) -> np.ndarray:
        return np.stack([self.P1, self.P2])

    @property
    def direction(self) -> np.ndarray:
        d = self.P2 - self.P1
        return d / np.linalg.norm(d)

    def transformed(self, pose: Pose) -> "Line3D":
        E = transform(pose, self.endpoints)
        return Line3D(E[0], E[1])
