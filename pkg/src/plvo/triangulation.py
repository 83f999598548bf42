"""Two-view depth recovery for line endpoints and points (temporal stereo).

A :class:`StereoFrame` holds the pose mapping anchor-frame coordinates into
current-frame coordinates. Depths are always expressed in the anchor frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import IllPosed
from .geometry import Pose, quat_to_matrix, rotation_matrix_jacobian

ILL_POSED_EPS = 1e-9
ARBITRARY_DEPTH = 1.0


@dataclass(frozen=True, eq=False)
class StereoFrame:
    pose: Pose

    @property
    def R(self) -> np.ndarray:
        return self.pose.R

    @property
    def t(self) -> np.ndarray:
        return self.pose.t

    @property
    def baseline(self) -> float:
        return float(np.linalg.norm(self.pose.t))


@dataclass(eq=False)
class TriangulationResult:
    depth: float
    valid: bool
    point: np.ndarray | None = None
    corrected: np.ndarray | None = None          # (2, 2): anchor, current
    depth_current: float | None = None
    extras: dict = field(default_factory=dict)


def _h(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return np.array([p[0], p[1], 1.0]) if p.shape[-1] == 2 else p


# ---------------------------------------------------------------------------
# lines

def plane_normal(e1, e2) -> np.ndarray:
    """Normal of the viewing plane through two image points."""
    return np.cross(_h(e1), _h(e2))


def line_endpoint_depth(p, normal, stereo: StereoFrame) -> float:
    """Depth ``Z`` solving ``N . (R Z p + t) = 0``; raises IllPosed on a parallel ray."""
    ph = _h(p)
    den = float(normal @ (stereo.R @ ph))
    if abs(den) < ILL_POSED_EPS:
        raise IllPosed("anchor ray is parallel to the current viewing plane")
    return -float(normal @ stereo.t) / den


def triangulate_line_endpoint(p, line_endpoints, stereo: StereoFrame) -> TriangulationResult:
    """Intersect the anchor ray through ``p`` with the current segment's viewing plane."""
    e = np.asarray(line_endpoints, dtype=float).reshape(2, 2)
    if np.linalg.norm(e[0] - e[1]) < 1e-12:
        raise IllPosed("current line endpoints coincide")
    z = line_endpoint_depth(p, plane_normal(e[0], e[1]), stereo)
    valid = bool(np.isfinite(z) and z > 0)
    return TriangulationResult(depth=z, valid=valid, point=z * _h(p) if valid else None)


def inverse_depth_line(params) -> float:
    """Inverse anchor depth of a line endpoint as a flat function of its inputs.

    ``params = (x1, y1, x2', y2', x3', y3', tx, ty, tz, q1, q2, q3)``.
    """
    params = np.asarray(params, dtype=float)
    stereo = StereoFrame(Pose.from_minimal(params[6:12]))
    z = line_endpoint_depth(params[0:2], plane_normal(params[2:4], params[4:6]), stereo)
    return 1.0 / z


def inverse_depth_line_jacobian(params) -> tuple[float, np.ndarray]:
    """Closed-form gradient of :func:`inverse_depth_line`."""
    params = np.asarray(params, dtype=float)
    a, b = _h(params[2:4]), _h(params[4:6])
    ph = _h(params[0:2])
    t = params[6:9]
    qv = params[9:12]
    R = quat_to_matrix(np.append(qv, np.sqrt(max(1.0 - qv @ qv, 0.0))))
    dR = rotation_matrix_jacobian(qv)
    N = np.cross(a, b)
    Rp = R @ ph
    num = float(N @ Rp)
    den = float(N @ t)
    if abs(den) < ILL_POSED_EPS or abs(num) < ILL_POSED_EPS:
        raise IllPosed("inverse depth is not differentiable here")
    rho = -num / den
    dN = -Rp / den + num * t / den**2          # d rho / d N
    J = np.zeros(12)
    J[0:2] = (-(R.T @ N) / den)[:2]
    # N = a x b: dN/da = -[b]x, dN/db = [a]x
    J[2:4] = (np.cross(b, dN))[:2]
    J[4:6] = (np.cross(dN, a))[:2]
    J[6:9] = num * N / den**2
    J[9:12] = [-(N @ (dR[i] @ ph)) / den for i in range(3)]
    return rho, J


# ---------------------------------------------------------------------------
# points

def triangulate_point_linear(p, p2, stereo: StereoFrame) -> TriangulationResult:
    """Homogeneous linear (DLT) triangulation; corrected points are reprojections."""
    if stereo.baseline <= 0:
        raise IllPosed("zero baseline")
    P1 = np.hstack([np.eye(3), np.zeros((3, 1))])
    P2 = np.hstack([stereo.R, stereo.t[:, None]])
    x1, y1 = p
    x2, y2 = p2
    A = np.stack([x1 * P1[2] - P1[0], y1 * P1[2] - P1[1],
                  x2 * P2[2] - P2[0], y2 * P2[2] - P2[1]])
    _, _, Vt = np.linalg.svd(A)
    X = Vt[-1]
    if abs(X[3]) < 1e-12 * np.linalg.norm(X[:3]):
        raise IllPosed("triangulated point at infinity")
    X = X[:3] / X[3]
    Xc = stereo.R @ X + stereo.t
    valid = bool(X[2] > 0 and Xc[2] > 0)
    corrected = None
    if valid:
        corrected = np.stack([X[:2] / X[2], Xc[:2] / Xc[2]])
    return TriangulationResult(depth=float(X[2]), valid=valid, point=X, corrected=corrected,
                               depth_current=float(Xc[2]))


def _triangle_angles(ph, qh, stereo: StereoFrame):
    B = stereo.baseline
    if B <= 0:
        raise IllPosed("zero baseline")
    t = stereo.t
    cos_b = -float(t @ (stereo.R @ ph)) / (np.linalg.norm(ph) * B)
    cos_a = float(t @ qh) / (np.linalg.norm(qh) * B)
    return np.clip(cos_a, -1.0, 1.0), np.clip(cos_b, -1.0, 1.0), B


def point_depth_trig(p, p2, stereo: StereoFrame) -> float:
    """Anchor depth from the triangle formed by the two camera centers and the point.

    ``beta`` is the angle at the anchor camera, ``alpha`` the one at the
    current camera, and the anchor ray length follows from the law of sines:
    ``lambda = B / (sin(beta) / tan(alpha) + cos(beta))``; ``Z = lambda / |p|``.
    """
    ph, qh = _h(p), _h(p2)
    cos_a, cos_b, B = _triangle_angles(ph, qh, stereo)
    sin_a = np.sqrt(1.0 - cos_a**2)
    sin_b = np.sqrt(1.0 - cos_b**2)
    s = sin_a * cos_b + cos_a * sin_b   # sin(alpha + beta)
    if s < ILL_POSED_EPS:
        raise IllPosed("rays are parallel")
    lam = B * sin_a / s
    return lam / np.linalg.norm(ph)


def inverse_depth_point_trig_jacobian(params) -> tuple[float, np.ndarray]:
    """Inverse depth of the trigonometric point formula and its closed-form gradient.

    ``params = (x, y, x', y', tx, ty, tz, q1, q2, q3)``; the image points are
    treated as already corrected.
    """
    params = np.asarray(params, dtype=float)
    ph, qh = _h(params[0:2]), _h(params[2:4])
    t = params[4:7]
    qv = params[7:10]
    R = quat_to_matrix(np.append(qv, np.sqrt(max(1.0 - qv @ qv, 0.0))))
    dR = rotation_matrix_jacobian(qv)
    n1, n2 = np.linalg.norm(ph), np.linalg.norm(qh)
    B = np.linalg.norm(t)
    g = float(t @ (R @ ph))
    h = float(t @ qh)
    cb = -g / (n1 * B)
    ca = h / (n2 * B)
    sb = np.sqrt(1 - cb**2)
    sa = np.sqrt(1 - ca**2)
    if sa < ILL_POSED_EPS or sb < ILL_POSED_EPS:
        raise IllPosed("degenerate triangle")
    rho = n1 * (cb + sb * ca / sa) / B
    # partials of rho w.r.t. the intermediate quantities
    d_n1 = (cb + sb * ca / sa) / B
    d_cb = n1 / B * (1 - cb * ca / (sb * sa))
    d_ca = n1 / B * sb / sa**3
    d_B = -rho / B
    J = np.zeros(10)
    Rcols = R[:, :2]
    for k in range(2):
        dn1 = ph[k] / n1
        dcb = -(t @ Rcols[:, k]) / (n1 * B) + g / (n1**2 * B) * dn1
        J[k] = d_n1 * dn1 + d_cb * dcb
        dn2 = qh[k] / n2
        dca = t[k] / (n2 * B) - h / (n2**2 * B) * dn2
        J[2 + k] = d_ca * dca
    dB_dt = t / B
    dcb_dt = -(R @ ph) / (n1 * B) + g / (n1 * B**2) * dB_dt
    dca_dt = qh / (n2 * B) - h / (n2 * B**2) * dB_dt
    J[4:7] = d_cb * dcb_dt + d_ca * dca_dt + d_B * dB_dt
    J[7:10] = [d_cb * (-(t @ (dR[i] @ ph)) / (n1 * B)) for i in range(3)]
    return rho, J


def inverse_depth_point(params) -> float:
    """Inverse anchor depth of a point match: linear triangulation, then trigonometry.

    ``params = (x, y, x', y', tx, ty, tz, q1, q2, q3)``.
    """
    params = np.asarray(params, dtype=float)
    stereo = StereoFrame(Pose.from_minimal(params[4:10]))
    tri = triangulate_point_linear(params[0:2], params[2:4], stereo)
    if not tri.valid:
        raise IllPosed("point triangulates behind a camera")
    return 1.0 / point_depth_trig(tri.corrected[0], tri.corrected[1], stereo)


# ---------------------------------------------------------------------------
# outlier validation

def validate_line_endpoint(p, depth, line_current, stereo: StereoFrame, tol_px: float = 2.0,
                           fx: float = 1.0, arbitrary_depth: float = ARBITRARY_DEPTH) -> bool:
    """Reproject the anchor endpoint and test its distance to the current line.

    Invalid depths (None, non-finite or non-positive) are replaced by an
    arbitrary positive depth before reprojection.
    """
    if depth is None or not np.isfinite(depth) or depth <= 0:
        depth = arbitrary_depth
    X = stereo.R @ (depth * _h(p)) + stereo.t
    if X[2] <= 0:
        return False
    x = X[:2] / X[2]
    dist = abs(line_current[0] * x[0] + line_current[1] * x[1] + line_current[2])
    return bool(dist <= tol_px / fx)


def epipolar_distance(p, p2, stereo: StereoFrame) -> float:
    """Distance of ``p2`` to the epipolar line of ``p`` in the current image."""
    E = np.cross(np.eye(3), stereo.t) @ stereo.R  # [t]x R
    l = E @ _h(p)
    n = np.hypot(l[0], l[1])
    if n < 1e-15:
        return 0.0
    return abs(float(l @ _h(p2))) / n


def validate_point(p, p2, tri: TriangulationResult, tol_px: float = 2.0, fx: float = 1.0,
                   stereo: StereoFrame | None = None) -> bool:
    """Accept a point match whose corrections stay under ``tol_px``.

    For an invalid depth the check falls back to the epipolar distance of the
    raw observations (needs ``stereo``); the depth itself is never used then.
    """
    tol = tol_px / fx
    if not tri.valid or tri.corrected is None:
        if stereo is None:
            return False
        return epipolar_distance(p, p2, stereo) <= tol
    d1 = np.linalg.norm(np.asarray(p, float) - tri.corrected[0])
    d2 = np.linalg.norm(np.asarray(p2, float) - tri.corrected[1])
    return bool(max(d1, d2) <= tol)


# ---------------------------------------------------------------------------
# batched forms of the inverse-depth maps (NaN where ill-posed)

def _rotations(qv) -> np.ndarray:
    qv = np.asarray(qv, dtype=float)
    x, y, z = qv[:, 0], qv[:, 1], qv[:, 2]
    w = np.sqrt(np.clip(1.0 - x * x - y * y - z * z, 0.0, None))
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)], -1),
        np.stack([2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)], -1),
        np.stack([2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)], -1),
    ], axis=1)


def _hom(xy) -> np.ndarray:
    return np.concatenate([xy, np.ones(xy.shape[:-1] + (1,))], axis=-1)


def inverse_depth_line_batch(params) -> np.ndarray:
    """Row-wise :func:`inverse_depth_line` for an (M, 12) array."""
    params = np.atleast_2d(np.asarray(params, dtype=float))
    ph, a, b = _hom(params[:, 0:2]), _hom(params[:, 2:4]), _hom(params[:, 4:6])
    R = _rotations(params[:, 9:12])
    N = np.cross(a, b)
    num = np.einsum("mi,mij,mj->m", N, R, ph)
    den = np.einsum("mi,mi->m", N, params[:, 6:9])
    bad = (np.abs(num) < ILL_POSED_EPS) | (np.abs(den) < ILL_POSED_EPS)
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = -num / den
    rho[bad] = np.nan
    return rho


def triangulate_points_batch(p, p2, R, t):
    """Linear triangulation of many pairs; returns anchor points (M, 3) and validity."""
    m = len(p)
    A = np.zeros((m, 4, 4))
    A[:, 0, 0] = -1.0
    A[:, 0, 2] = p[:, 0]
    A[:, 1, 1] = -1.0
    A[:, 1, 2] = p[:, 1]
    P2 = np.concatenate([R, t[:, :, None]], axis=2)
    A[:, 2] = p2[:, 0:1] * P2[:, 2] - P2[:, 0]
    A[:, 3] = p2[:, 1:2] * P2[:, 2] - P2[:, 1]
    _, _, Vt = np.linalg.svd(A)
    X = Vt[:, -1]
    finite = np.abs(X[:, 3]) >= 1e-12 * np.linalg.norm(X[:, :3], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        X = X[:, :3] / X[:, 3:4]
    Xc = np.einsum("mij,mj->mi", R, X) + t
    valid = finite & (X[:, 2] > 0) & (Xc[:, 2] > 0)
    return X, Xc, valid


def inverse_depth_point_batch(params) -> np.ndarray:
    """Row-wise :func:`inverse_depth_point` for an (M, 10) array."""
    params = np.atleast_2d(np.asarray(params, dtype=float))
    R = _rotations(params[:, 7:10])
    t = params[:, 4:7]
    X, Xc, valid = triangulate_points_batch(params[:, 0:2], params[:, 2:4], R, t)
    rho = np.full(len(params), np.nan)
    if not np.any(valid):
        return rho
    X, Xc, R, t = X[valid], Xc[valid], R[valid], t[valid]
    ph = X / X[:, 2:3]
    qh = Xc / Xc[:, 2:3]
    B = np.linalg.norm(t, axis=1)
    cos_b = np.clip(-np.einsum("mi,mij,mj->m", t, R, ph) / (np.linalg.norm(ph, axis=1) * B), -1, 1)
    cos_a = np.clip(np.einsum("mi,mi->m", t, qh) / (np.linalg.norm(qh, axis=1) * B), -1, 1)
    sin_a = np.sqrt(1 - cos_a**2)
    sin_b = np.sqrt(1 - cos_b**2)
    s = sin_a * cos_b + cos_a * sin_b
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = B * sin_a / s
        out = np.linalg.norm(ph, axis=1) / lam
    out[(s < ILL_POSED_EPS) | (B <= 0)] = np.nan
    rho[valid] = out
    return rho
