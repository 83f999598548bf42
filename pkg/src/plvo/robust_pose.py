"""Frame-to-frame pose estimation from five families of point/line matches.

The pose being estimated maps previous-frame coordinates into current-frame
coordinates. Families:

    S1  3D point (previous)  -> 2D point (current)
    S2  2D point (previous)  -> 3D point (current), via the inverse pose
    S3  3D line  (previous)  -> 2D line  (current)
    S4  2D line  (previous)  -> 3D line  (current), via the inverse pose
    S5  2D point (previous)  -> 2D point (current), epipolar residual

The joint cost is minimized with Levenberg-Marquardt over the minimal
parameters ``(tx, ty, tz, q1, q2, q3)``; Tukey weights are refreshed between
LM runs, separately for every family.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientMatches, ZeroBaseline
from .geometry import (
    MIN_DEPTH,
    Pose,
    inverse,
    project_normalized,
    quat_to_matrix,
    rotation_matrix_jacobian,
    slerp_from_identity,
    transform,
)

logger = logging.getLogger(__name__)

FAMILIES = ("S1", "S2", "S3", "S4", "S5")
MAD_TO_SIGMA = 1.4826
MIN_SCALE = 1e-12
MIN_RESIDUAL_VARIANCE = 1e-12
SINGULAR_COVARIANCE = 1e10


@dataclass
class SolverConfig:
    lambda_2d2d: float = 0.01
    max_iterations: int = 100
    max_outer_iterations: int = 10
    convergence_tol: float = 1e-10
    tukey_constant: float = 4.685
    min_depth_matches: int = 3
    degeneracy_eigenvalue_max: float = 1e-4
    velocity_decay: float = 0.5

    def __post_init__(self):
        if self.lambda_2d2d <= 0:
            raise ValueError("lambda_2d2d must be positive")
        if self.min_depth_matches < 3:
            raise ValueError("min_depth_matches must be at least 3")


@dataclass
class MatchSets:
    """Residual inputs; all image points are normalized coordinates.

    ``*_ids`` are optional caller tags (e.g. track ids) carried through to the
    returned weights.
    """

    s1_P: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    s1_p: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    s2_p: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    s2_P: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    s3_P: np.ndarray = field(default_factory=lambda: np.zeros((0, 2, 3)))
    s3_l: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    s4_l: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    s4_P: np.ndarray = field(default_factory=lambda: np.zeros((0, 2, 3)))
    s5_p: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    s5_q: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    ids: dict = field(default_factory=lambda: {f: [] for f in FAMILIES})

    def __post_init__(self):
        shapes = {"s1_P": (3,), "s1_p": (2,), "s2_p": (2,), "s2_P": (3,), "s3_P": (2, 3),
                  "s3_l": (3,), "s4_l": (3,), "s4_P": (2, 3), "s5_p": (2,), "s5_q": (2,)}
        for name, tail in shapes.items():
            arr = np.asarray(getattr(self, name), dtype=float)
            setattr(self, name, arr.reshape((-1,) + tail))
        for f in FAMILIES:
            self.ids.setdefault(f, [])

    def count(self, family: str) -> int:
        return len({"S1": self.s1_P, "S2": self.s2_P, "S3": self.s3_P,
                    "S4": self.s4_P, "S5": self.s5_p}[family])

    @property
    def counts(self) -> dict:
        return {f: self.count(f) for f in FAMILIES}

    @property
    def depth_match_count(self) -> int:
        return sum(self.count(f) for f in ("S1", "S2", "S3", "S4"))


@dataclass(eq=False)
class PoseWithCovariance:
    pose: Pose
    cov: np.ndarray


@dataclass(eq=False)
class PoseEstimate(PoseWithCovariance):
    weights: dict = field(default_factory=dict)
    converged: bool = True
    iterations: int = 0
    cost: float = 0.0
    cost_history: list = field(default_factory=list)
    residual_variance: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# single-match residuals (reference forms)

def residual_point_3d_to_2d(P, p_obs, pose: Pose) -> np.ndarray:
    return np.asarray(p_obs, dtype=float) - project_normalized(transform(pose, P))


def residual_point_2d_to_3d(p_obs, P, pose: Pose) -> np.ndarray:
    return residual_point_3d_to_2d(P, p_obs, inverse(pose))


def residual_line_3d_to_2d(P1, P2, line, pose: Pose) -> np.ndarray:
    x = project_normalized(transform(pose, np.stack([P1, P2])))
    return x @ np.asarray(line[:2]) + line[2]


def residual_line_2d_to_3d(line, P1, P2, pose: Pose) -> np.ndarray:
    return residual_line_3d_to_2d(P1, P2, line, inverse(pose))


def residual_point_2d_to_2d(p, p_obs, pose: Pose, lam: float = 0.01) -> float:
    """Scaled epipolar residual; the rotation is the forward (previous -> current) one.

    With ``P' = R P + t`` the bracket equals ``t x p'``, so the residual is
    ``-lam * p'^T [t]x R p`` and vanishes on exact correspondences.
    """
    t = pose.t
    if np.linalg.norm(t) < 1e-9:
        raise ZeroBaseline("residual is undefined without translation")
    x2, y2 = p_obs
    bracket = np.array([t[1] - t[2] * y2, t[2] * x2 - t[0], t[0] * y2 - t[1] * x2])
    return float(lam * bracket @ (pose.R @ np.array([p[0], p[1], 1.0])))


# ---------------------------------------------------------------------------
# vectorized residuals and Jacobians w.r.t. the minimal parameters


def _pose_parts(xi):
    t = xi[:3]
    qv = xi[3:6]
    w = np.sqrt(max(1.0 - float(qv @ qv), 0.0))
    R = quat_to_matrix(np.append(qv, w))
    dR = rotation_matrix_jacobian(qv)
    return t, R, dR


def _project_jac(X, dX):
    """Normalized projection of ``X`` (N,3) with Jacobian given ``dX`` (N,3,6)."""
    Z = X[:, 2]
    valid = Z > MIN_DEPTH
    Zs = np.where(valid, Z, 1.0)
    x = X[:, :2] / Zs[:, None]
    dpi = np.zeros((len(X), 2, 3))
    dpi[:, 0, 0] = 1.0 / Zs
    dpi[:, 1, 1] = 1.0 / Zs
    dpi[:, 0, 2] = -X[:, 0] / Zs**2
    dpi[:, 1, 2] = -X[:, 1] / Zs**2
    return x, np.einsum("nij,njk->nik", dpi, dX), valid


def _forward(P, t, R, dR):
    X = P @ R.T + t
    dX = np.empty((len(P), 3, 6))
    dX[:, :, :3] = np.eye(3)
    for i in range(3):
        dX[:, :, 3 + i] = P @ dR[i].T
    return X, dX


def _backward(P, t, R, dR):
    D = P - t
    X = D @ R
    dX = np.empty((len(P), 3, 6))
    dX[:, :, :3] = -R.T
    for i in range(3):
        dX[:, :, 3 + i] = D @ dR[i]
    return X, dX


def family_residuals(matches: MatchSets, xi, lam: float) -> dict:
    """Residuals, Jacobians and validity masks for every populated family.

    Returns ``{family: (r, J, valid)}`` with ``r`` shaped (N, d) and ``J``
    shaped (N, d, 6); ``d`` is 2 for S1-S4 and 1 for S5. Invalid matches (a
    transformed point at non-positive depth) have zero residual and Jacobian.
    """
    xi = np.asarray(xi, dtype=float)
    t, R, dR = _pose_parts(xi)
    out = {}
    if len(matches.s1_P):
        x, J, valid = _project_jac(*_forward(matches.s1_P, t, R, dR))
        out["S1"] = (matches.s1_p - x, -J, valid)
    if len(matches.s2_P):
        x, J, valid = _project_jac(*_backward(matches.s2_P, t, R, dR))
        out["S2"] = (matches.s2_p - x, -J, valid)
    for fam, P, lines, mover in (("S3", matches.s3_P, matches.s3_l, _forward),
                                 ("S4", matches.s4_P, matches.s4_l, _backward)):
        if not len(P):
            continue
        n = len(P)
        x, J, valid = _project_jac(*mover(P.reshape(-1, 3), t, R, dR))
        x = x.reshape(n, 2, 2)
        J = J.reshape(n, 2, 2, 6)
        r = np.einsum("nek,nk->ne", x, lines[:, :2]) + lines[:, 2:3]
        Jl = np.einsum("nekj,nk->nej", J, lines[:, :2])
        out[fam] = (r, Jl, valid.reshape(n, 2).all(axis=1))
    if len(matches.s5_p):
        ph = np.column_stack([matches.s5_p, np.ones(len(matches.s5_p))])
        qh = np.column_stack([matches.s5_q, np.ones(len(matches.s5_q))])
        a = ph @ R.T
        b = np.cross(t, qh)
        r = lam * np.sum(b * a, axis=1)
        J = np.empty((len(ph), 6))
        J[:, :3] = lam * np.cross(qh, a)
        for i in range(3):
            J[:, 3 + i] = lam * np.sum(b * (ph @ dR[i].T), axis=1)
        out["S5"] = (r[:, None], J[:, None, :], np.full(len(ph), np.linalg.norm(t) >= 1e-9))
    for fam, (r, J, valid) in out.items():
        r[~valid] = 0.0
        J[~valid] = 0.0
    return out


def tukey_weight(u, c: float = 4.685) -> np.ndarray:
    """Tukey biweight of normalized residual magnitudes ``u = |r| / scale``."""
    u = np.abs(np.asarray(u, dtype=float))
    w = (1.0 - (u / c) ** 2) ** 2
    return np.where(u <= c, w, 0.0)


def robust_scale(magnitudes) -> float:
    """``1.4826 * MAD`` of residual magnitudes, taken about zero."""
    if len(magnitudes) == 0:
        return MIN_SCALE
    return max(MAD_TO_SIGMA * float(np.median(magnitudes)), MIN_SCALE)


def _weights(res: dict, c: float) -> dict:
    weights = {}
    for fam, (r, _, valid) in res.items():
        mag = np.linalg.norm(r, axis=1)
        scale = robust_scale(mag[valid])
        w = tukey_weight(mag / scale, c)
        w[~valid] = 0.0
        weights[fam] = w
    return weights


def _cost(res: dict, weights: dict) -> float:
    return float(sum(np.sum(weights[f] * np.sum(r**2, axis=1)) for f, (r, _, _) in res.items()))


def _normal_equations(res: dict, weights: dict):
    H = np.zeros((6, 6))
    g = np.zeros(6)
    for fam, (r, J, _) in res.items():
        w = weights[fam]
        H += np.einsum("n,ndi,ndj->ij", w, J, J)
        g += np.einsum("n,ndi,nd->i", w, J, r)
    return H, g


def _covariance(res: dict, weights: dict) -> tuple[np.ndarray, dict]:
    info = np.zeros((6, 6))
    variances = {}
    for fam, (r, J, _) in res.items():
        w = weights[fam]
        wsum = float(np.sum(w))
        if wsum <= 0:
            continue
        dim = r.shape[1]
        var = max(float(np.sum(w * np.sum(r**2, axis=1))) / (dim * wsum), MIN_RESIDUAL_VARIANCE)
        variances[fam] = var
        info += np.einsum("n,ndi,ndj->ij", w, J, J) / var
    try:
        if np.linalg.cond(info) > 1e15:
            raise np.linalg.LinAlgError("singular information matrix")
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        return np.eye(6) * SINGULAR_COVARIANCE, variances
    cov = 0.5 * (cov + cov.T)
    return cov, variances


def estimate_pose(matches: MatchSets, init: Pose | None = None,
                  cfg: SolverConfig | None = None) -> PoseEstimate:
    """Robust IRLS / Levenberg-Marquardt estimate of the previous->current pose."""
    cfg = cfg or SolverConfig()
    init = init or Pose.identity()
    if matches.depth_match_count < cfg.min_depth_matches:
        raise InsufficientMatches(
            f"{matches.depth_match_count} matches with depth, need {cfg.min_depth_matches}")

    lam = cfg.lambda_2d2d
    xi = init.minimal()
    if len(matches.s5_p) and np.linalg.norm(xi[:3]) < 1e-9:
        # the epipolar residual is flat at zero translation
        xi[:3] = 1e-6

    history = []
    iterations = 0
    converged = False
    res = family_residuals(matches, xi, lam)
    for outer in range(cfg.max_outer_iterations):
        weights = _weights(res, cfg.tukey_constant)
        cost = _cost(res, weights)
        history.append((outer, cost))
        H, g = _normal_equations(res, weights)
        mu = 1e-4 * max(float(np.max(np.diag(H))), 1e-30)
        xi_start = xi.copy()
        while iterations < cfg.max_iterations:
            iterations += 1
            try:
                delta = np.linalg.solve(H + mu * np.eye(6), -g)
            except np.linalg.LinAlgError:
                mu *= 10
                continue
            cand = xi + delta
            if float(cand[3:] @ cand[3:]) >= 1.0:
                mu *= 10
                continue
            cand_res = family_residuals(matches, cand, lam)
            cand_cost = _cost(cand_res, weights)
            if cand_cost <= cost:
                xi, res, cost = cand, cand_res, cand_cost
                history.append((outer, cost))
                mu = max(mu / 10, 1e-30)
                if np.linalg.norm(delta) < cfg.convergence_tol:
                    break
                H, g = _normal_equations(res, weights)
            else:
                mu *= 10
                if mu > 1e20:
                    break
        if np.linalg.norm(xi - xi_start) < cfg.convergence_tol:
            converged = True
            break
        if iterations >= cfg.max_iterations:
            break

    if not converged:
        logger.debug("pose solver hit its iteration cap after %d iterations", iterations)
    weights = _weights(res, cfg.tukey_constant)
    cov, variances = _covariance(res, weights)
    return PoseEstimate(
        pose=Pose.from_minimal(xi),
        cov=cov,
        weights=weights,
        converged=converged,
        iterations=iterations,
        cost=_cost(res, weights),
        cost_history=history,
        residual_variance=variances,
    )


def translation_uncertainty(cov) -> float:
    """Largest eigenvalue of the translation block of a 6x6 pose covariance."""
    block = np.asarray(cov)[:3, :3]
    return float(np.max(np.linalg.eigvalsh(0.5 * (block + block.T))))


def check_degeneracy(est: PoseWithCovariance, cfg: SolverConfig | None = None) -> bool:
    """True when the estimate is degenerate."""
    cfg = cfg or SolverConfig()
    return translation_uncertainty(est.cov) > cfg.degeneracy_eigenvalue_max


def velocity_fallback(last_motion: Pose, decay: float = 0.5) -> Pose:
    """Decayed constant-velocity prediction of the next frame-to-frame motion."""
    if not 0 < decay <= 1:
        raise ValueError("decay must be in (0, 1]")
    return Pose(decay * last_motion.t, slerp_from_identity(last_motion.q, decay))
