"""Per-frame orchestration: tracks, pose estimation, registration, triangulation, fusion.

Mode A estimates depth only for tracks without a measured or propagated
depth; Mode B triangulates every matched track and, once a track's estimate
converges, feeds both its measured and its estimated 3D to the pose solver.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .config import PipelineConfig
from .depth_filter import (
    InverseDepthState,
    consistency_check,
    fuse,
    init_state,
    try_initialize,
)
from .errors import DatasetFormatError, InsufficientMatches, VOError
from .geometry import CameraIntrinsics, Line3D, Pose, compose, hessian_from_endpoints, homogeneous, inverse
from .line_fit import fit_line_ransac_pca, sample_line_depths
from .registration import AugmentedDepthMap, Provenance, RegisteredCloud, integrate_frame, sample_depths
from .robust_pose import (
    FAMILIES,
    MatchSets,
    PoseWithCovariance,
    check_degeneracy,
    estimate_pose,
    velocity_fallback,
)
from .sim.formats import Dataset, FrameData, Trajectory
from .triangulation import StereoFrame, triangulate_points_batch, validate_line_endpoint
from .uncertainty import InverseDepthObservation, PoseChainWindow, inverse_depth_variance_batch, window_advance

logger = logging.getLogger(__name__)

TRACKED = "tracked"
FALLBACK = "fallback_velocity"


@dataclass(eq=False)
class FeatureTrack:
    track_id: int
    kind: str                          # "point" | "line"
    anchor_frame_id: int
    anchor_obs: np.ndarray             # normalized, (2,) or (2, 2)
    obs: np.ndarray                    # current observation, normalized
    obs_px: np.ndarray                 # current observation, pixels
    states: list
    prev_obs: np.ndarray | None = None
    measured_3d: object = None         # current-frame point (3,) or Line3D
    measured_provenance: int = Provenance.INVALID
    estimated_3d: object = None        # current-frame point (3,) or Line3D
    initialized: bool = False
    alive: bool = True

    @property
    def provenance(self) -> str | None:
        if self.measured_3d is not None and self.estimated_3d is not None:
            return "hypothesis_pair"
        if self.measured_3d is not None:
            return "measured" if self.measured_provenance == Provenance.MEASURED else "propagated"
        if self.estimated_3d is not None:
            return "estimated"
        return None


@dataclass(eq=False)
class FrameResult:
    frame_id: int
    timestamp: float
    pose: Pose                          # camera-to-world, world = frame 0
    step: Pose                          # previous -> current
    status: str
    counts: dict
    diagnostics: dict = field(default_factory=dict)


def _line_3d_from_raster(depth, seg_px, K, cfg: PipelineConfig, rng) -> Line3D | None:
    if np.linalg.norm(seg_px[1] - seg_px[0]) < cfg.min_line_length_px:
        return None
    try:
        samples = sample_line_depths(depth, seg_px, K, cfg.line_stride_px)
        return fit_line_ransac_pca(samples, cfg.ransac, rng).line
    except (VOError, ValueError):
        return None


def _ray_depth_on_line(xy, line: Line3D) -> float | None:
    """Depth of the point on the ray through ``xy`` closest to ``line``."""
    r = homogeneous(xy)
    d = line.direction
    w0 = -line.P1
    a, b, c = r @ r, r @ d, d @ d
    den = a * c - b * b
    if den < 1e-12 * a * c:
        return None
    s = (c * (r @ -w0) - b * (d @ -w0)) / den
    return float(s) if s > 0 else None


class Odometry:
    """Stateful frame-by-frame visual odometry."""

    def __init__(self, intrinsics: CameraIntrinsics, config: PipelineConfig | None = None):
        self.K = intrinsics
        self.cfg = config or PipelineConfig()
        self.rng = np.random.default_rng(self.cfg.seed)
        self.tracks: dict = {}
        self.window = PoseChainWindow(self.cfg.window_capacity)
        self.cloud = RegisteredCloud()
        self.augmented: AugmentedDepthMap | None = None
        self.world_to_cam = Pose.identity()
        self.last_motion = Pose.identity()
        self.last_cov = np.eye(6) * self.cfg.initial_step_variance
        self.frame_count = 0
        self.last_frame_id: int | None = None

    # -- helpers ----------------------------------------------------------

    def _new_track(self, ob, frame_id: int) -> FeatureTrack:
        xy = self.K.to_normalized(ob.obs)
        n = 1 if ob.kind == "point" else 2
        return FeatureTrack(ob.track_id, ob.kind, frame_id, xy.copy(), xy, np.asarray(ob.obs, float),
                            [init_state(self.cfg.filter) for _ in range(n)])

    def _reset(self, tr: FeatureTrack, frame_id: int) -> None:
        tr.states = [init_state(self.cfg.filter) for _ in tr.states]
        tr.anchor_frame_id = frame_id
        tr.anchor_obs = tr.obs.copy()
        tr.estimated_3d = None
        tr.initialized = False

    def _reanchor(self, tr: FeatureTrack, frame_id: int) -> None:
        """Move the anchor to the current frame, carrying the state over when possible."""
        entry = self.window.get(tr.anchor_frame_id)
        fcfg = self.cfg.filter
        usable = entry is not None and all(s.n_obs > 0 and s.rho > fcfg.rho_min for s in tr.states)
        if not usable:
            self._reset(tr, frame_id)
            return
        if tr.kind == "point":
            s = tr.states[0]
            P = entry.pose.R @ (homogeneous(tr.anchor_obs) / s.rho) + entry.pose.t
            depths = [P[2]]
        else:
            E = homogeneous(tr.anchor_obs) / np.array([s.rho for s in tr.states])[:, None]
            try:
                line = Line3D(*(E @ entry.pose.R.T + entry.pose.t))
            except VOError:
                self._reset(tr, frame_id)
                return
            depths = [_ray_depth_on_line(e, line) for e in tr.obs]
        if any(z is None or not z > 0 for z in depths):
            self._reset(tr, frame_id)
            return
        states = []
        for s, z in zip(tr.states, depths):
            rho = 1.0 / z
            states.append(InverseDepthState(rho, s.var * (rho / s.rho) ** 2, s.n_obs))
        tr.states = states
        tr.anchor_frame_id = frame_id
        tr.anchor_obs = tr.obs.copy()

    def _estimated_geometry(self, tr: FeatureTrack):
        anchor_geom = try_initialize(tr.states, tr.kind, self.cfg.filter, tr.anchor_obs)
        if anchor_geom is None:
            return None
        entry = self.window.get(tr.anchor_frame_id)
        if entry is None:
            return None
        if tr.kind == "point":
            return entry.pose.R @ anchor_geom + entry.pose.t
        try:
            return anchor_geom.transformed(entry.pose)
        except VOError:
            return None

    # -- stage 2 ----------------------------------------------------------

    def _build_matches(self, matched: list, depth: np.ndarray) -> MatchSets:
        cfg = self.cfg
        buf = {k: [] for k in ("s1_P", "s1_p", "s2_p", "s2_P", "s3_P", "s3_l",
                               "s4_l", "s4_P", "s5_p", "s5_q")}
        ids = {f: [] for f in FAMILIES}
        points = [t for t in matched if t.kind == "point" and cfg.use_points]
        lines = [t for t in matched if t.kind == "line" and cfg.use_lines]

        z_sensor = np.full(len(points), np.nan)
        if points:
            px = np.array([t.obs_px for t in points])
            u = np.rint(px[:, 0]).astype(int)
            v = np.rint(px[:, 1]).astype(int)
            h, w = depth.shape
            inside = (u >= 0) & (u < w) & (v >= 0) & (v < h)
            z_sensor[inside] = depth[v[inside], u[inside]]
            z_sensor[~(np.isfinite(z_sensor) & (z_sensor > 0))] = np.nan

        def prev_geometry(tr):
            out = []
            if tr.measured_3d is not None:
                out.append(("measured", tr.measured_3d))
            if tr.estimated_3d is not None and (cfg.mode == "B" or tr.measured_3d is None):
                out.append(("estimated", tr.estimated_3d))
            return out

        for tr, z in zip(points, z_sensor):
            prev = prev_geometry(tr)
            for tag, P in prev:
                buf["s1_P"].append(P)
                buf["s1_p"].append(tr.obs)
                ids["S1"].append((tr.track_id, tag))
            if np.isfinite(z):
                buf["s2_p"].append(tr.prev_obs)
                buf["s2_P"].append(homogeneous(tr.obs) * z)
                ids["S2"].append((tr.track_id, "sensor"))
            if not prev and not np.isfinite(z):
                buf["s5_p"].append(tr.prev_obs)
                buf["s5_q"].append(tr.obs)
                ids["S5"].append((tr.track_id, "none"))

        for tr in lines:
            for tag, L in prev_geometry(tr):
                buf["s3_P"].append(L.endpoints)
                buf["s3_l"].append(hessian_from_endpoints(*tr.obs))
                ids["S3"].append((tr.track_id, tag))
            cur = _line_3d_from_raster(depth, tr.obs_px, self.K, cfg, self.rng)
            if cur is not None:
                buf["s4_l"].append(hessian_from_endpoints(*tr.prev_obs))
                buf["s4_P"].append(cur.endpoints)
                ids["S4"].append((tr.track_id, "sensor"))

        arrays = {k: np.array(v, dtype=float) if v else None for k, v in buf.items()}
        return MatchSets(**{k: v for k, v in arrays.items() if v is not None}, ids=ids)

    # -- stage 6 ----------------------------------------------------------

    def _triangulate(self, matched: list) -> list:
        """Fuse validated temporal-stereo observations; returns fused track ids."""
        cfg = self.cfg
        fx, fy = self.K.fx, self.K.fy
        tol = cfg.validation_tol_px / fx
        todo = [t for t in matched if cfg.mode == "B" or t.measured_3d is None]
        fused = []
        pts, lns = [], []
        for tr in todo:
            if tr.anchor_frame_id == self.window.current_frame_id:
                continue
            entry = self.window.get(tr.anchor_frame_id)
            if entry is None:
                continue
            (pts if tr.kind == "point" else lns).append((tr, entry))

        if pts:
            p = np.array([tr.anchor_obs for tr, _ in pts])
            q = np.array([tr.obs for tr, _ in pts])
            R = np.array([e.pose.R for _, e in pts])
            t = np.array([e.pose.t for _, e in pts])
            X, Xc, valid = triangulate_points_batch(p, q, R, t)
            with np.errstate(divide="ignore", invalid="ignore"):
                d1 = np.linalg.norm(p - X[:, :2] / X[:, 2:3], axis=1)
                d2 = np.linalg.norm(q - Xc[:, :2] / Xc[:, 2:3], axis=1)
            ok = valid & (np.maximum(d1, d2) <= tol)
            if np.any(ok):
                idx = np.nonzero(ok)[0]
                rho, var = inverse_depth_variance_batch(
                    "point", np.stack([p[idx], q[idx]], axis=1),
                    np.array([pts[i][1].pose.minimal() for i in idx]),
                    np.array([pts[i][1].cov for i in idx]), fx, fy, cfg.pixel_sigma)
                for i, r, s2 in zip(idx, rho, var):
                    if np.isfinite(r) and r > 0 and np.isfinite(s2) and s2 > 0:
                        tr = pts[i][0]
                        tr.states[0] = fuse(tr.states[0], InverseDepthObservation(r, s2))
                        fused.append(tr.track_id)

        if lns:
            rows, owners = [], []
            for tr, entry in lns:
                for k in range(2):
                    rows.append(np.concatenate([tr.anchor_obs[k], tr.obs.ravel()]))
                    owners.append((tr, entry, k))
            rows = np.array(rows)
            rho, var = inverse_depth_variance_batch(
                "line_endpoint", rows, np.array([e.pose.minimal() for _, e, _ in owners]),
                np.array([e.cov for _, e, _ in owners]), fx, fy, cfg.pixel_sigma)
            touched = set()
            for (tr, entry, k), r, s2 in zip(owners, rho, var):
                if not (np.isfinite(r) and r > 0 and np.isfinite(s2) and s2 > 0):
                    continue
                line = hessian_from_endpoints(*tr.obs)
                if not validate_line_endpoint(tr.anchor_obs[k], 1.0 / r, line, StereoFrame(entry.pose),
                                              cfg.validation_tol_px, fx, cfg.arbitrary_depth):
                    continue
                tr.states[k] = fuse(tr.states[k], InverseDepthObservation(r, s2))
                touched.add(tr.track_id)
            fused.extend(sorted(touched))
        return fused

    # -- stage 8 ----------------------------------------------------------

    def _sample_measured(self, tracks: list) -> None:
        aug = self.augmented
        points = [t for t in tracks if t.kind == "point"]
        if points:
            z, prov = sample_depths(aug, np.array([t.obs_px for t in points]))
            for tr, zi, pv in zip(points, z, prov):
                if np.isfinite(zi):
                    tr.measured_3d = homogeneous(tr.obs) * zi
                    tr.measured_provenance = int(pv)
                else:
                    tr.measured_3d = None
                    tr.measured_provenance = Provenance.INVALID
        for tr in tracks:
            if tr.kind != "line":
                continue
            line = _line_3d_from_raster(aug.depth, tr.obs_px, self.K, self.cfg, self.rng)
            tr.measured_3d = line
            if line is None:
                tr.measured_provenance = Provenance.INVALID
            else:
                _, prov = sample_depths(aug, tr.obs_px)
                tr.measured_provenance = int(max(prov.max(), Provenance.MEASURED))

    # -- main entry -------------------------------------------------------

    def process_frame(self, frame: FrameData) -> FrameResult:
        cfg = self.cfg
        fid = int(frame.frame_id)
        if self.last_frame_id is not None and fid <= self.last_frame_id:
            raise DatasetFormatError(f"frame {fid} is not after frame {self.last_frame_id}")
        depth = np.asarray(frame.depth, dtype=float)
        if depth.shape != (self.K.height, self.K.width):
            raise DatasetFormatError(f"frame {fid}: depth raster shape {depth.shape}")
        first = self.last_frame_id is None

        # 1: tracks
        matched, created, seen = [], [], set()
        for ob in frame.observations:
            if ob.track_id in seen:
                raise DatasetFormatError(f"frame {fid}: track {ob.track_id} observed twice")
            seen.add(ob.track_id)
            tr = self.tracks.get(ob.track_id)
            if first or ob.new_track or tr is None or tr.kind != ob.kind:
                created.append(self._new_track(ob, fid))
                continue
            tr.prev_obs = tr.obs
            tr.obs = self.K.to_normalized(ob.obs)
            tr.obs_px = np.asarray(ob.obs, dtype=float)
            matched.append(tr)
        for tid, tr in self.tracks.items():
            if tid not in seen or any(c.track_id == tid for c in created):
                tr.alive = False
        self.tracks = {t.track_id: t for t in matched + created}

        diag = {"n_tracks": len(self.tracks), "n_new": len(created)}
        counts = {f: 0 for f in FAMILIES}
        status = TRACKED
        step = Pose.identity()
        step_cov = np.zeros((6, 6))

        if first:
            self.window = PoseChainWindow(cfg.window_capacity, fid)
        else:
            # 2-3: matches and pose
            matches = self._build_matches(matched, depth)
            counts = matches.counts
            est = None
            try:
                est = estimate_pose(matches, self.last_motion, cfg.solver)
                degenerate = check_degeneracy(est, cfg.solver)
            except InsufficientMatches:
                degenerate = True
            if est is not None:
                diag["weights"] = {f: list(zip(matches.ids[f], np.asarray(w).tolist()))
                                   for f, w in est.weights.items()}
                diag["inlier_ratio"] = {f: float(np.mean(np.asarray(w) > 0.5))
                                        for f, w in est.weights.items() if len(w)}
                diag["solver_converged"] = est.converged
            if degenerate:
                status = FALLBACK
                step = velocity_fallback(self.last_motion, cfg.solver.velocity_decay)
                step_cov = self.last_cov * cfg.fallback_cov_scale
            else:
                step, step_cov = est.pose, est.cov
                self.last_cov = est.cov
            self.last_motion = step
            # 4: window
            self.window = window_advance(self.window, PoseWithCovariance(step, step_cov), fid)

        self.world_to_cam = compose(step, self.world_to_cam)

        # 5: registration
        cloud = self.cloud if cfg.registration else RegisteredCloud()
        self.cloud, self.augmented = integrate_frame(
            cloud, depth, self.window, self.K, cfg.registration_uncertainty_max, cfg.registration_near)
        diag["cloud_size"] = len(self.cloud)

        # 6: triangulation and fusion on the tracks' previous 3D-free state
        self._sample_measured(matched + created)
        fused = self._triangulate(matched) if cfg.depth_estimation and matched else []
        diag["fused"] = fused

        # 9 (consistency) before initialization so bad estimates never surface
        resets = []
        if cfg.depth_estimation:
            tol = cfg.filter.consistency_tol_px / self.K.fx
            for tr in matched:
                if tr.anchor_frame_id == fid or not any(s.n_obs for s in tr.states):
                    continue
                entry = self.window.get(tr.anchor_frame_id)
                if entry is None:
                    continue
                stereo = StereoFrame(entry.pose)
                if tr.kind == "point":
                    keep = consistency_check(tr.states[0], tr.anchor_obs, stereo, tol, current_pt=tr.obs)
                else:
                    keep = consistency_check(tr.states, tr.anchor_obs, stereo, tol,
                                             current_line=hessian_from_endpoints(*tr.obs))
                if not keep:
                    self._reset(tr, fid)
                    resets.append(tr.track_id)
        diag["resets"] = resets

        # 7: initialization from converged filters
        n_est = 0
        for tr in matched:
            geom = self._estimated_geometry(tr) if cfg.depth_estimation else None
            tr.estimated_3d = geom
            if geom is None:
                tr.initialized = False
                continue
            n_est += 1
            if not tr.initialized:
                tr.initialized = True
                self._reanchor(tr, fid)
                tr.estimated_3d = geom
        diag["n_estimated"] = n_est

        # anchors about to leave the window move to the current frame
        if len(self.window) >= self.window.capacity:
            oldest = self.window.oldest_frame_id
            for tr in matched:
                if tr.anchor_frame_id == oldest:
                    self._reanchor(tr, fid)
        for tr in matched:
            if tr.anchor_frame_id != fid and tr.anchor_frame_id not in self.window:
                self._reset(tr, fid)

        self.last_frame_id = fid
        self.frame_count += 1
        return FrameResult(fid, float(frame.timestamp), inverse(self.world_to_cam), step, status,
                           counts, diag)


def run_sequence(dataset: Dataset, config: PipelineConfig | None = None,
                 callback=None) -> tuple[Trajectory, list]:
    """Process every frame; returns the camera-to-world trajectory and per-frame results."""
    if dataset.intrinsics is None:
        raise DatasetFormatError("dataset has no intrinsics")
    odo = Odometry(dataset.intrinsics, config)
    results = []
    for frame in dataset.frames:
        res = odo.process_frame(frame)
        results.append(res)
        if callback is not None:
            callback(res)
    traj = Trajectory(np.array([r.timestamp for r in results], dtype=float),
                      [r.pose for r in results], [r.status for r in results])
    return traj, results
