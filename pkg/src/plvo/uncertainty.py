"""First-order uncertainty of triangulated inverse depth and of chained poses."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import IllPosed, IllPosedLinearization
from .geometry import Pose, compose
from .robust_pose import PoseWithCovariance, translation_uncertainty
from .triangulation import (
    inverse_depth_line,
    inverse_depth_line_batch,
    inverse_depth_point,
    inverse_depth_point_batch,
)

FD_STEP = 1e-6


@dataclass(frozen=True)
class InverseDepthObservation:
    rho: float
    var: float

    def __post_init__(self):
        if not self.var > 0:
            raise ValueError("observation variance must be positive")
        if not np.isfinite(self.rho):
            raise ValueError("inverse depth must be finite")


def symmetrize_psd(cov) -> np.ndarray:
    cov = 0.5 * (np.asarray(cov, dtype=float) + np.asarray(cov, dtype=float).T)
    evals, evecs = np.linalg.eigh(cov)
    if evals.min() >= 0:
        return cov
    evals = np.clip(evals, 0.0, None)
    return 0.5 * ((evecs * evals) @ evecs.T + ((evecs * evals) @ evecs.T).T)


def compose_pose(step, accumulated) -> np.ndarray:
    """Minimal parameters of ``step ∘ accumulated``.

    Translation becomes ``R_step t_acc + t_step`` and the rotation
    ``q_step ⊗ q_acc``, renormalized with a non-negative scalar part.
    """
    return compose(Pose.from_minimal(step), Pose.from_minimal(accumulated)).minimal()


def composition_jacobians(step, accumulated, h: float = FD_STEP) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference Jacobians ``F = d/d acc`` and ``G = d/d step``."""
    step = np.asarray(step, dtype=float)
    accumulated = np.asarray(accumulated, dtype=float)
    F = np.empty((6, 6))
    G = np.empty((6, 6))
    for k in range(6):
        e = np.zeros(6)
        e[k] = h
        F[:, k] = (compose_pose(step, accumulated + e) - compose_pose(step, accumulated - e)) / (2 * h)
        G[:, k] = (compose_pose(step + e, accumulated) - compose_pose(step - e, accumulated)) / (2 * h)
    return F, G


def propagate_pose_cov(cov_acc, cov_step, step, accumulated) -> np.ndarray:
    """EKF-style covariance of the composed pose, ``F Sa F^T + G Ss G^T``."""
    F, G = composition_jacobians(step, accumulated)
    cov = F @ np.asarray(cov_acc) @ F.T + G @ np.asarray(cov_step) @ G.T
    return symmetrize_psd(cov)


@dataclass(eq=False)
class WindowEntry:
    frame_id: int
    pose: Pose          # frame -> current
    cov: np.ndarray

    @property
    def uncertainty(self) -> float:
        return translation_uncertainty(self.cov)


@dataclass(eq=False)
class PoseChainWindow:
    """Transforms from recent frames to the current frame, newest last.

    The current frame itself is implicit: :meth:`get` returns the identity
    with zero covariance for it.
    """

    capacity: int = 8
    current_frame_id: int = 0
    entries: list = field(default_factory=list)

    def get(self, frame_id: int) -> WindowEntry | None:
        if frame_id == self.current_frame_id:
            return WindowEntry(frame_id, Pose.identity(), np.zeros((6, 6)))
        for e in self.entries:
            if e.frame_id == frame_id:
                return e
        return None

    def __contains__(self, frame_id: int) -> bool:
        return self.get(frame_id) is not None

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def frame_ids(self) -> list:
        return [e.frame_id for e in self.entries]

    @property
    def oldest_frame_id(self) -> int:
        return self.entries[0].frame_id if self.entries else self.current_frame_id


def window_advance(window: PoseChainWindow, step: PoseWithCovariance,
                   new_frame_id: int | None = None, capacity: int | None = None) -> PoseChainWindow:
    """Retarget every stored transform to the new current frame."""
    capacity = window.capacity if capacity is None else capacity
    new_id = window.current_frame_id + 1 if new_frame_id is None else new_frame_id
    step_xi = step.pose.minimal()
    entries = []
    for e in window.entries:
        acc_xi = e.pose.minimal()
        entries.append(WindowEntry(e.frame_id, Pose.from_minimal(compose_pose(step_xi, acc_xi)),
                                   propagate_pose_cov(e.cov, step.cov, step_xi, acc_xi)))
    entries.append(WindowEntry(window.current_frame_id, step.pose, symmetrize_psd(step.cov)))
    if capacity > 0:
        entries = entries[-capacity:]
    else:
        entries = []
    return PoseChainWindow(capacity, new_id, entries)


# ---------------------------------------------------------------------------
# inverse depth variance

_DEPTH_FUNCS = {"point": (inverse_depth_point, 2), "line_endpoint": (inverse_depth_line, 3)}


def numeric_gradient(func, x, h: float = FD_STEP) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    grad = np.empty(len(x))
    for k in range(len(x)):
        e = np.zeros(len(x))
        e[k] = h
        try:
            grad[k] = (func(x + e) - func(x - e)) / (2 * h)
        except IllPosed as exc:
            raise IllPosedLinearization(str(exc)) from exc
    return grad


def inverse_depth_variance(kind: str, image_points, pose_xi, pose_cov, fx: float = 1.0,
                           fy: float | None = None, pixel_sigma: float = 1.0) -> tuple[float, float]:
    """Inverse depth and its first-order variance for a point or a line endpoint.

    ``image_points`` are normalized coordinates: ``(p, p')`` for a point and
    ``(p, e1', e2')`` for a line endpoint. ``pose_xi`` / ``pose_cov`` describe
    the anchor -> current transform. Returns ``(rho, var)``.
    """
    func, n_points = _DEPTH_FUNCS[kind]
    fy = fx if fy is None else fy
    pts = np.asarray(image_points, dtype=float).reshape(n_points, 2)
    params = np.concatenate([pts.ravel(), np.asarray(pose_xi, dtype=float)])
    try:
        rho = func(params)
    except IllPosed as exc:
        raise IllPosedLinearization(str(exc)) from exc
    J = numeric_gradient(func, params)
    pix_var = np.tile([(pixel_sigma / fx) ** 2, (pixel_sigma / fy) ** 2], n_points)
    n = 2 * n_points
    var = float(J[:n] ** 2 @ pix_var + J[n:] @ np.asarray(pose_cov) @ J[n:])
    return float(rho), var


_BATCH_FUNCS = {"point": (inverse_depth_point_batch, 2), "line_endpoint": (inverse_depth_line_batch, 3)}


def inverse_depth_variance_batch(kind: str, image_points, pose_xi, pose_cov, fx: float = 1.0,
                                 fy: float | None = None, pixel_sigma: float = 1.0,
                                 h: float = FD_STEP) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`inverse_depth_variance` over M matches.

    ``image_points`` is (M, n, 2), ``pose_xi`` (M, 6), ``pose_cov`` (M, 6, 6).
    Rows whose map or any difference probe is ill-posed come back as NaN.
    """
    func, n_points = _BATCH_FUNCS[kind]
    fy = fx if fy is None else fy
    pts = np.asarray(image_points, dtype=float).reshape(-1, 2 * n_points)
    m = len(pts)
    params = np.concatenate([pts, np.asarray(pose_xi, dtype=float).reshape(m, 6)], axis=1)
    d = params.shape[1]
    if m == 0:
        return np.zeros(0), np.zeros(0)
    steps = np.eye(d) * h
    probes = np.concatenate([params[:, None, :] + steps, params[:, None, :] - steps], axis=1)
    values = func(np.concatenate([params, probes.reshape(-1, d)]))
    rho = values[:m]
    f = values[m:].reshape(m, 2 * d)
    J = (f[:, :d] - f[:, d:]) / (2 * h)
    n = 2 * n_points
    pix_var = np.tile([(pixel_sigma / fx) ** 2, (pixel_sigma / fy) ** 2], n_points)
    cov = np.asarray(pose_cov, dtype=float).reshape(m, 6, 6)
    var = (J[:, :n] ** 2) @ pix_var + np.einsum("mi,mij,mj->m", J[:, n:], cov, J[:, n:])
    bad = ~np.isfinite(rho) | ~np.all(np.isfinite(J), axis=1)
    rho = np.where(bad, np.nan, rho)
    var = np.where(bad, np.nan, var)
    return rho, var
