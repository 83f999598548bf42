"""Deterministic synthetic RGB-D world: landmarks, trajectories and a sensor model."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from ..errors import SpecError
from ..geometry import CameraIntrinsics, Pose, inverse, quat_from_axis_angle, quat_multiply
from .formats import Dataset, FrameData, Observation, Trajectory

SCENE_STYLES = ("room", "corridor", "sparse_outdoor")
TRAJECTORY_STYLES = ("arc", "straight", "orbit")
NEAR_CLIP = 0.1


def default_intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(250.0, 250.0, 160.0, 120.0, 320, 240)


@dataclass
class SceneSpec:
    n_points: int = 1000
    n_lines: int = 60
    extent: float = 8.0
    style: str = "room"
    center: tuple = (0.0, 0.0, 0.0)
    height: float = 3.0                # room / corridor height, m

    def validate(self) -> None:
        if self.style not in SCENE_STYLES:
            raise SpecError(f"scene style must be one of {SCENE_STYLES}")
        if self.n_points < 0 or self.n_lines < 0:
            raise SpecError("landmark counts must be non-negative")
        if not (self.extent > 0 and self.height > 0):
            raise SpecError("extent and height must be positive")


@dataclass
class TrajectorySpec:
    style: str = "arc"
    length: float = 2.0
    frames: int = 100
    angular_rate: float = 0.2          # rad/s (arc)
    fps: float = 30.0
    direction: tuple = (0.0, 0.0, 1.0)
    radius: float = 2.0                # orbit
    wobble: float = 0.02               # rad, small roll/pitch oscillation

    def validate(self) -> None:
        if self.style not in TRAJECTORY_STYLES:
            raise SpecError(f"trajectory style must be one of {TRAJECTORY_STYLES}")
        if self.frames < 2:
            raise SpecError("a trajectory needs at least 2 frames")
        if self.length < 0 or self.fps <= 0 or self.radius <= 0:
            raise SpecError("length, fps and radius must be positive")
        if np.linalg.norm(self.direction) == 0:
            raise SpecError("direction must be non-zero")


@dataclass
class SensorSpec:
    intrinsics: CameraIntrinsics = field(default_factory=default_intrinsics)
    pixel_noise: float = 0.0
    depth_noise_a: float = 0.0
    depth_noise_b: float = 0.0
    dropout: float = 0.0
    corruption_prob: float = 0.0
    corruption_bias: float = 0.5
    depth_min: float = 0.1
    depth_max: float = 100.0
    mismatch_prob: float = 0.0
    min_line_length_px: float = 20.0
    footprint_px: int = 1
    depth_disabled_after: int | None = None

    def validate(self) -> None:
        for name in ("dropout", "corruption_prob", "mismatch_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise SpecError(f"{name} must be in [0, 1], got {v}")
        if not 0 < self.depth_min < self.depth_max:
            raise SpecError("depth range must satisfy 0 < min < max")
        if self.footprint_px < 0:
            raise SpecError("footprint_px must be non-negative")
        if self.pixel_noise < 0 or self.depth_noise_a < 0 or self.depth_noise_b < 0:
            raise SpecError("noise levels must be non-negative")


def spec_to_dict(spec) -> dict:
    d = dataclasses.asdict(spec)
    if isinstance(spec, SensorSpec):
        d["intrinsics"] = spec.intrinsics.to_dict()
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def spec_from_dict(cls, d: dict):
    d = dict(d)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise SpecError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    if cls is SensorSpec and isinstance(d.get("intrinsics"), dict):
        d["intrinsics"] = CameraIntrinsics.from_dict(d["intrinsics"])
    for k in ("center", "direction"):
        if k in d:
            d[k] = tuple(d[k])
    return cls(**d)


# ---------------------------------------------------------------------------
# landmarks

@dataclass(eq=False)
class Scene:
    points: np.ndarray       # (N, 3) world
    lines: np.ndarray        # (M, 2, 3) world


def _box_faces(half):
    """(origin, axis u, axis v) triples spanning the six faces of a centered box."""
    hx, hy, hz = half
    ex, ey, ez = np.eye(3)
    return [
        (np.array([-hx, -hy, hz]), 2 * hx * ex, 2 * hy * ey),
        (np.array([-hx, -hy, -hz]), 2 * hx * ex, 2 * hy * ey),
        (np.array([-hx, -hy, -hz]), 2 * hz * ez, 2 * hy * ey),
        (np.array([hx, -hy, -hz]), 2 * hz * ez, 2 * hy * ey),
        (np.array([-hx, -hy, -hz]), 2 * hx * ex, 2 * hz * ez),
        (np.array([-hx, hy, -hz]), 2 * hx * ex, 2 * hz * ez),
    ]


def _sample_on_faces(faces, n, rng, min_len=None, max_len=None):
    areas = np.array([np.linalg.norm(np.cross(u, v)) for _, u, v in faces])
    which = rng.choice(len(faces), size=n, p=areas / areas.sum())
    if min_len is None:
        ab = rng.uniform(size=(n, 2))
        return np.array([faces[f][0] + a * faces[f][1] + b * faces[f][2]
                         for f, (a, b) in zip(which, ab)]).reshape(-1, 3)
    segs = []
    for f in which:
        o, u, v = faces[f]
        lu, lv = np.linalg.norm(u), np.linalg.norm(v)
        for _ in range(100):
            a, b = rng.uniform(size=2)
            ang = rng.uniform(0, np.pi)
            length = rng.uniform(min_len, max_len)
            da = length * np.cos(ang) / lu
            db = length * np.sin(ang) / lv
            if 0 <= a + da <= 1 and 0 <= b + db <= 1:
                break
        else:
            a, b, da, db = 0.0, 0.5, 1.0, 0.0
        p1 = o + a * u + b * v
        segs.append([p1, p1 + da * u + db * v])
    return np.array(segs, dtype=float).reshape(-1, 2, 3)


def generate_scene(spec: SceneSpec, rng: np.random.Generator) -> Scene:
    spec.validate()
    E = spec.extent
    if spec.style == "room":
        half = np.array([E / 2, spec.height / 2, E / 2])
        faces = _box_faces(half)
        pts = _sample_on_faces(faces, spec.n_points, rng)
        lines = _sample_on_faces(faces, spec.n_lines, rng, 0.4, min(2.0, E / 2))
    elif spec.style == "corridor":
        w, h = 1.5, spec.height / 2
        z0, z1 = -2.0, E
        ex, ey, ez = np.eye(3)
        faces = [
            (np.array([-w, -h, z0]), (z1 - z0) * ez, 2 * h * ey),
            (np.array([w, -h, z0]), (z1 - z0) * ez, 2 * h * ey),
            (np.array([-w, -h, z0]), 2 * w * ex, (z1 - z0) * ez),
            (np.array([-w, h, z0]), 2 * w * ex, (z1 - z0) * ez),
            (np.array([-w, -h, z1]), 2 * w * ex, 2 * h * ey),
        ]
        pts = _sample_on_faces(faces, spec.n_points, rng)
        lines = _sample_on_faces(faces, spec.n_lines, rng, 0.4, 1.5)
    else:
        xz = rng.uniform(-E, E, size=(spec.n_points, 2))
        y = rng.uniform(-2.0, 3.0, size=spec.n_points)
        pts = np.column_stack([xz[:, 0], y, xz[:, 1]])
        base = rng.uniform(-E, E, size=(spec.n_lines, 2))
        tops = rng.uniform(0.5, 3.0, size=spec.n_lines)
        lines = np.stack([np.column_stack([base[:, 0], np.full(spec.n_lines, 1.5), base[:, 1]]),
                          np.column_stack([base[:, 0], 1.5 - tops, base[:, 1]])], axis=1)
    c = np.asarray(spec.center, dtype=float)
    return Scene(pts.reshape(-1, 3) + c, lines.reshape(-1, 2, 3) + c)


# ---------------------------------------------------------------------------
# trajectories

def _rot_y(theta: float) -> np.ndarray:
    return quat_from_axis_angle([0.0, 1.0, 0.0], theta)


def generate_trajectory(spec: TrajectorySpec) -> Trajectory:
    """Ground-truth camera-to-world poses; frame 0 sits at the origin looking down +z."""
    spec.validate()
    n = spec.frames
    ts = np.arange(n) / spec.fps
    T = ts[-1]
    d = np.asarray(spec.direction, dtype=float)
    d = d / np.linalg.norm(d)
    poses = []
    for tau in ts:
        if spec.style == "straight":
            pos = d * spec.length * (tau / T)
            yaw = 0.0
        elif spec.style == "arc":
            v = spec.length / T
            w = spec.angular_rate
            yaw = w * tau
            if abs(w) < 1e-12:
                pos = v * tau * d
            else:
                s, c = np.sin(w * tau) / w, (1 - np.cos(w * tau)) / w
                pos = v * np.array([d[0] * s + d[2] * c, d[1] * tau, -d[0] * c + d[2] * s])
        else:
            r = spec.radius
            phi = (spec.length / r) * (tau / T)
            center = np.array([0.0, 0.0, r])
            pos = center + r * np.array([-np.sin(phi), 0.0, -np.cos(phi)])
            yaw = phi
        q = _rot_y(yaw)
        if spec.wobble:
            q = quat_multiply(q, quat_from_axis_angle([1.0, 0.0, 0.0], spec.wobble * np.sin(2.1 * tau)))
            q = quat_multiply(q, quat_from_axis_angle([0.0, 0.0, 1.0], spec.wobble * np.sin(1.3 * tau)))
        poses.append(Pose(pos, q))
    return Trajectory(ts, poses)


# ---------------------------------------------------------------------------
# sensor

def _clip_segment(a, b, lo, hi):
    """Liang-Barsky clipping of a 2D segment against an axis-aligned box."""
    d = b - a
    t0, t1 = 0.0, 1.0
    for k in range(2):
        for p, q in ((-d[k], a[k] - lo[k]), (d[k], hi[k] - a[k])):
            if p == 0:
                if q < 0:
                    return None
                continue
            r = q / p
            if p < 0:
                t0 = max(t0, r)
            else:
                t1 = min(t1, r)
            if t0 > t1:
                return None
    return a + t0 * d, a + t1 * d, t0, t1


def _visible_line(Pc, K: CameraIntrinsics, min_len: float):
    """Clipped pixel endpoints and the matching camera-frame 3D segment, or None."""
    A, B = Pc
    if A[2] < NEAR_CLIP and B[2] < NEAR_CLIP:
        return None
    if A[2] < NEAR_CLIP or B[2] < NEAR_CLIP:
        s = (NEAR_CLIP - A[2]) / (B[2] - A[2])
        C = A + s * (B - A)
        A, B = (C, B) if A[2] < NEAR_CLIP else (A, C)
    a = np.array([K.fx * A[0] / A[2] + K.cx, K.fy * A[1] / A[2] + K.cy])
    b = np.array([K.fx * B[0] / B[2] + K.cx, K.fy * B[1] / B[2] + K.cy])
    clipped = _clip_segment(a, b, np.array([0.0, 0.0]), np.array([K.width - 1.0, K.height - 1.0]))
    if clipped is None:
        return None
    a2, b2, _, _ = clipped
    if np.linalg.norm(b2 - a2) < min_len:
        return None
    return np.stack([a2, b2]), (A, B)


def _ray_point_on_line(xy, A, D):
    """Point of the 3D line ``A + s D`` that projects onto normalized ``xy``."""
    x, y = xy
    den_x = D[0] - x * D[2]
    den_y = D[1] - y * D[2]
    if abs(den_x) >= abs(den_y):
        s = (x * A[2] - A[0]) / den_x
    else:
        s = (y * A[2] - A[1]) / den_y
    return A + s * D


def _zbuffer(depth, u, v, z) -> None:
    h, w = depth.shape
    if 0 <= u < w and 0 <= v < h and z > NEAR_CLIP and (depth[v, u] == 0 or z < depth[v, u]):
        depth[v, u] = z


def _render_point(core, halo, u, v, z, radius: int) -> None:
    """A point covers its own pixel, plus a (2 r + 1)^2 halo at the same depth."""
    ui, vi = int(np.rint(u)), int(np.rint(v))
    _zbuffer(core, ui, vi, z)
    for dv in range(-radius, radius + 1):
        for du in range(-radius, radius + 1):
            if du or dv:
                _zbuffer(halo, ui + du, vi + dv, z)


def _render_line(core, halo, seg_px, seg3d, K, radius: int = 0) -> None:
    """Rasterize a segment with a halo ``radius`` pixels wide on either side.

    Every pixel stores the depth of the line point seen at the foot of the
    perpendicular from the pixel center onto the image segment.
    """
    from ..line_fit import rasterize_segment
    A, B = seg3d
    D = B - A
    d2 = seg_px[1] - seg_px[0]
    u_hat = d2 / np.linalg.norm(d2)
    minor = np.array([0, 1]) if abs(d2[0]) >= abs(d2[1]) else np.array([1, 0])
    for p in rasterize_segment(seg_px[0], seg_px[1]):
        for k in range(-radius, radius + 1):
            u, v = p + k * minor
            s = (np.array([u, v], float) - seg_px[0]) @ u_hat
            foot = seg_px[0] + s * u_hat
            X = _ray_point_on_line(K.to_normalized(foot), A, D)
            _zbuffer(halo if k else core, int(u), int(v), X[2])


def generate_dataset(scene: SceneSpec, traj: TrajectorySpec, sensor: SensorSpec,
                     seed: int = 0) -> Dataset:
    """Simulate a full sequence; the result is fully determined by the specs and ``seed``."""
    scene.validate()
    traj.validate()
    sensor.validate()
    ss = np.random.SeedSequence(int(seed))
    rng_scene, rng_obs, rng_depth, rng_match = (np.random.default_rng(s) for s in ss.spawn(4))
    K = sensor.intrinsics
    world = generate_scene(scene, rng_scene)
    gt = generate_trajectory(traj)

    track_of: dict = {}
    next_id = 0
    frames = []
    for fid, (ts, c2w) in enumerate(zip(gt.timestamps, gt.poses)):
        w2c = inverse(c2w)
        R, t = w2c.R, w2c.t
        true_depth = np.zeros((K.height, K.width), dtype=float)
        halo = np.zeros_like(true_depth)
        visible: dict = {}

        if len(world.points):
            Pc = world.points @ R.T + t
            Z = Pc[:, 2]
            front = Z > NEAR_CLIP
            Zs = np.where(front, Z, 1.0)
            u = K.fx * Pc[:, 0] / Zs + K.cx
            v = K.fy * Pc[:, 1] / Zs + K.cy
            inside = front & (u >= 0) & (u <= K.width - 1) & (v >= 0) & (v <= K.height - 1)
            for i in np.nonzero(inside)[0]:
                visible[("point", int(i))] = np.array([u[i], v[i]])
                _render_point(true_depth, halo, u[i], v[i], Z[i], sensor.footprint_px)
        for j, seg in enumerate(world.lines):
            vis = _visible_line(seg @ R.T + t, K, sensor.min_line_length_px)
            if vis is None:
                continue
            seg_px, seg3d = vis
            visible[("line", j)] = seg_px
            _render_line(true_depth, halo, seg_px, seg3d, K, sensor.footprint_px)

        # halos only fill pixels no landmark projects onto directly
        true_depth = np.where(true_depth > 0, true_depth, halo)

        # track identities persist while a landmark stays visible
        still = {key: tid for key, tid in track_of.items() if key in visible}
        observations = []
        new_keys = []
        for key in sorted(visible):
            if key not in still:
                still[key] = next_id
                next_id += 1
                new_keys.append(key)
        track_of = still

        # observation noise is drawn for every visible landmark in a fixed order
        noisy = {}
        for key in sorted(visible):
            obs = visible[key]
            noise = rng_obs.normal(0.0, 1.0, size=obs.shape) * sensor.pixel_noise
            noisy[key] = obs + noise
        keys_by_kind = {k: [key for key in sorted(visible) if key[0] == k] for k in ("point", "line")}
        for key in sorted(visible, key=lambda k: track_of[k]):
            is_new = fid == 0 or key in new_keys
            obs = noisy[key]
            if not is_new and sensor.mismatch_prob > 0 and rng_match.uniform() < sensor.mismatch_prob:
                pool = keys_by_kind[key[0]]
                if len(pool) > 1:
                    other = pool[int(rng_match.integers(len(pool)))]
                    if other == key:
                        other = pool[(pool.index(key) + 1) % len(pool)]
                    obs = noisy[other]
            observations.append(Observation(track_of[key], key[0], obs, bool(is_new)))

        frames.append(FrameData(fid, float(ts), observations,
                                _sense_depth(true_depth, sensor, rng_depth, fid)))

    meta = {
        "seed": int(seed),
        "fps": float(traj.fps),
        "scene": spec_to_dict(scene),
        "trajectory": spec_to_dict(traj),
        "sensor": spec_to_dict(sensor),
    }
    return Dataset(K, frames, gt, meta)


def _sense_depth(true_depth, sensor: SensorSpec, rng, fid: int) -> np.ndarray:
    """Apply range gating, noise, corruption and dropout to a true landmark raster."""
    shape = true_depth.shape
    # fixed draw order keeps every fault stream independent of the others' settings
    gauss = rng.normal(size=shape)
    corrupt_u = rng.uniform(size=shape)
    drop_u = rng.uniform(size=shape)
    if sensor.depth_disabled_after is not None and fid > sensor.depth_disabled_after:
        return np.zeros(shape, dtype=np.float32)
    valid = (true_depth >= sensor.depth_min) & (true_depth <= sensor.depth_max)
    sigma = sensor.depth_noise_a + sensor.depth_noise_b * true_depth**2
    z = true_depth + sigma * gauss
    z = np.where(corrupt_u < sensor.corruption_prob, z + sensor.corruption_bias, z)
    valid &= drop_u >= sensor.dropout
    valid &= z > 0
    return np.where(valid, z, 0.0).astype(np.float32)
