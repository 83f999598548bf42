"""Trajectory error metrics: relative pose error per interval and final drift."""

from __future__ import annotations

import numpy as np

from ..errors import NoOverlap
from ..geometry import compose, inverse, pose_distance
from .formats import Trajectory

FALLBACK = "fallback_velocity"


def associate(est: Trajectory, gt: Trajectory, max_dt: float = 0.02) -> list:
    """Index pairs ``(i_est, i_gt)`` matched by nearest timestamp within ``max_dt``."""
    if len(est) == 0 or len(gt) == 0:
        return []
    gts = np.asarray(gt.timestamps, dtype=float)
    order = np.argsort(gts)
    sorted_ts = gts[order]
    pairs = []
    for i, ts in enumerate(np.asarray(est.timestamps, dtype=float)):
        k = int(np.searchsorted(sorted_ts, ts))
        cand = [c for c in (k - 1, k) if 0 <= c < len(sorted_ts)]
        best = min(cand, key=lambda c: abs(sorted_ts[c] - ts))
        if abs(sorted_ts[best] - ts) <= max_dt:
            pairs.append((i, int(order[best])))
    return pairs


def evaluate_rpe(est: Trajectory, gt: Trajectory, interval: float = 1.0,
                 max_dt: float = 0.02) -> dict:
    """RMSE of relative-pose discrepancies between poses ``interval`` seconds apart.

    Translation RMSE is in metres (per ``interval``), rotation RMSE in degrees.
    """
    pairs = associate(est, gt, max_dt)
    if not pairs:
        raise NoOverlap("no timestamps in common")
    ts = np.array([est.timestamps[i] for i, _ in pairs])
    t_err, r_err = [], []
    for a, (ia, ga) in enumerate(pairs):
        b = int(np.searchsorted(ts, ts[a] + interval - max_dt))
        if b >= len(pairs) or abs(ts[b] - (ts[a] + interval)) > max_dt:
            continue
        ib, gb = pairs[b]
        rel_est = compose(inverse(est.poses[ia]), est.poses[ib])
        rel_gt = compose(inverse(gt.poses[ga]), gt.poses[gb])
        dt, dr = pose_distance(rel_gt, rel_est)
        t_err.append(dt)
        r_err.append(dr)
    if not t_err:
        raise NoOverlap(f"no pose pairs {interval} s apart")
    t_err = np.array(t_err)
    r_err = np.degrees(np.array(r_err))
    return {
        "rpe_trans_rmse": float(np.sqrt(np.mean(t_err**2))),
        "rpe_rot_rmse_deg": float(np.sqrt(np.mean(r_err**2))),
        "pairs": len(t_err),
        "interval": float(interval),
    }


def evaluate_final_drift(est: Trajectory, gt: Trajectory, statuses=None,
                         max_dt: float = 0.02) -> dict:
    """Final position error after aligning the first poses, plus the fallback count."""
    statuses = statuses if statuses is not None else (est.status or [])
    losses = sum(1 for s in statuses if s == FALLBACK)
    pairs = associate(est, gt, max_dt)
    if not pairs:
        if len(est) and len(est) == len(gt):
            pairs = list(zip(range(len(est)), range(len(gt))))
        else:
            raise NoOverlap("no timestamps in common")
    (i0, g0), (i1, g1) = pairs[0], pairs[-1]
    align = compose(gt.poses[g0], inverse(est.poses[i0]))
    final = compose(align, est.poses[i1])
    err = float(np.linalg.norm(final.t - gt.poses[g1].t))
    return {"final_error": err, "losses": int(losses), "frames": len(est)}
