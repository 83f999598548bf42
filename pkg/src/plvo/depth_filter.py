"""Sequential Gaussian fusion of inverse-depth observations per feature."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateLine
from .geometry import Line3D, homogeneous
from .triangulation import StereoFrame
from .uncertainty import InverseDepthObservation


@dataclass
class FilterConfig:
    init_variance_threshold: float = 1e-3
    rho_min: float = 1e-3
    consistency_tol_px: float = 5.0
    prior_mean: float = 0.0
    prior_variance: float = 1.0

    def __post_init__(self):
        if self.init_variance_threshold <= 0:
            raise ValueError("init_variance_threshold must be positive")
        if self.init_variance_threshold >= self.prior_variance:
            raise ValueError("the untouched prior must never pass the initialization gate")


@dataclass(frozen=True)
class InverseDepthState:
    rho: float
    var: float
    n_obs: int = 0

    @property
    def depth(self) -> float:
        return 1.0 / self.rho if self.rho > 0 else np.inf


def init_state(cfg: FilterConfig | None = None) -> InverseDepthState:
    cfg = cfg or FilterConfig()
    return InverseDepthState(cfg.prior_mean, cfg.prior_variance, 0)


def fuse(prior: InverseDepthState, obs: InverseDepthObservation) -> InverseDepthState:
    """Product of the prior and observation Gaussians."""
    s1, s2 = prior.var, obs.var
    rho = (prior.rho * s2 + obs.rho * s1) / (s1 + s2)
    return InverseDepthState(rho, s1 * s2 / (s1 + s2), prior.n_obs + 1)


def is_converged(state: InverseDepthState, cfg: FilterConfig) -> bool:
    return state.var < cfg.init_variance_threshold and state.rho > cfg.rho_min


def try_initialize(states, kind: str, cfg: FilterConfig, anchor_obs):
    """3D geometry in the anchor frame once every state passes the gate, else None.

    ``kind`` is ``"point"`` (one state, ``anchor_obs`` a normalized point) or
    ``"line"`` (two endpoint states, ``anchor_obs`` a (2, 2) endpoint array).
    """
    if kind == "point":
        state = states[0] if isinstance(states, (list, tuple)) else states
        if not is_converged(state, cfg):
            return None
        return homogeneous(anchor_obs) / state.rho
    if not all(is_converged(s, cfg) for s in states):
        return None
    E = homogeneous(np.asarray(anchor_obs, dtype=float).reshape(2, 2))
    P = E / np.array([s.rho for s in states])[:, None]
    try:
        return Line3D(P[0], P[1])
    except DegenerateLine:
        return None


def reprojection_error(state: InverseDepthState, anchor_pt, stereo: StereoFrame,
                       current_pt=None, current_line=None) -> float:
    """Error of the anchor observation reprojected at the fused depth (normalized units)."""
    if state.rho <= 0:
        return 0.0
    X = stereo.R @ (homogeneous(anchor_pt) / state.rho) + stereo.t
    if X[2] <= 0:
        return np.inf
    x = X[:2] / X[2]
    if current_line is not None:
        return abs(float(current_line[0] * x[0] + current_line[1] * x[1] + current_line[2]))
    return float(np.linalg.norm(x - np.asarray(current_pt, dtype=float)))


def consistency_check(states, anchor_obs, stereo: StereoFrame, tol: float,
                      current_pt=None, current_line=None) -> bool:
    """True (keep) when every fused endpoint/point reprojects within ``tol``.

    Points compare against ``current_pt``; line endpoints use the point-to-line
    distance to ``current_line`` (Hessian form). ``tol`` is in normalized units.
    """
    if isinstance(states, InverseDepthState):
        return reprojection_error(states, anchor_obs, stereo, current_pt, current_line) <= tol
    anchor = np.asarray(anchor_obs, dtype=float).reshape(len(states), 2)
    return all(
        reprojection_error(s, a, stereo, current_pt, current_line) <= tol
        for s, a in zip(states, anchor) if s.n_obs > 0
    )
