"""Dataset containers and their on-disk formats.

A dataset directory holds::

    meta.json             intrinsics, frame timestamps, generator specs
    correspondences.jsonl one observation per line
    depth/NNNNNN.spld     one depth raster per frame
    groundtruth.txt       camera-to-world poses, TUM text format (optional)
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DatasetFormatError
from ..geometry import CameraIntrinsics, Pose

DEPTH_MAGIC = b"SPLD"
_HEADER = struct.Struct("<4sIII")


@dataclass(eq=False)
class Observation:
    track_id: int
    kind: str                 # "point" | "line"
    obs: np.ndarray           # (2,) pixel or (2, 2) endpoints
    new_track: bool = False

    def to_record(self, frame: int) -> dict:
        return {"frame": int(frame), "track_id": int(self.track_id), "kind": self.kind,
                "obs": np.asarray(self.obs, dtype=float).tolist(), "new_track": bool(self.new_track)}


@dataclass(eq=False)
class FrameData:
    frame_id: int
    timestamp: float
    observations: list
    depth: np.ndarray         # (H, W) float32, 0 = invalid


@dataclass(eq=False)
class Trajectory:
    """Camera-to-world poses with timestamps."""

    timestamps: np.ndarray
    poses: list
    status: list | None = None

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.t for p in self.poses]).reshape(-1, 3)


@dataclass(eq=False)
class Dataset:
    intrinsics: CameraIntrinsics
    frames: list
    groundtruth: Trajectory | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.frames)


# ---------------------------------------------------------------------------
# depth rasters

def write_depth(path, depth: np.ndarray) -> None:
    depth = np.asarray(depth)
    if depth.ndim != 2:
        raise ValueError("depth raster must be 2D")
    h, w = depth.shape
    data = np.where(np.isfinite(depth) & (depth > 0), depth, 0.0).astype("<f4")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(DEPTH_MAGIC, w, h, 0))
        f.write(data.tobytes(order="C"))


def read_depth(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DatasetFormatError(f"{path}: truncated depth header")
    magic, w, h, _ = _HEADER.unpack_from(raw)
    if magic != DEPTH_MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {magic!r}")
    if len(raw) != _HEADER.size + 4 * w * h:
        raise DatasetFormatError(f"{path}: expected {w}x{h} floats")
    return np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(h, w).astype(np.float32)


# ---------------------------------------------------------------------------
# correspondences

def write_correspondences(path, frames) -> None:
    with open(path, "w") as f:
        for fr in frames:
            for ob in fr.observations:
                f.write(json.dumps(ob.to_record(fr.frame_id), separators=(",", ":")) + "\n")


def _parse_observation(rec: dict) -> Observation:
    try:
        kind = rec["kind"]
        obs = np.asarray(rec["obs"], dtype=float)
        track_id = int(rec["track_id"])
        new_track = bool(rec.get("new_track", False))
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(f"malformed correspondence {rec!r}") from exc
    expected = {"point": (2,), "line": (2, 2)}.get(kind)
    if expected is None or obs.shape != expected or not np.all(np.isfinite(obs)):
        raise DatasetFormatError(f"malformed correspondence {rec!r}")
    return Observation(track_id, kind, obs, new_track)


def read_correspondences(path) -> dict:
    """Observations grouped by frame id, in file order."""
    out: dict = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                frame = int(rec["frame"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DatasetFormatError(f"{path}:{lineno}: {exc}") from exc
            out.setdefault(frame, []).append(_parse_observation(rec))
    return out


# ---------------------------------------------------------------------------
# trajectories (TUM)

def write_tum(path, traj: Trajectory) -> None:
    lines = ["# timestamp tx ty tz qx qy qz qw"]
    for ts, pose in zip(traj.timestamps, traj.poses):
        vals = [repr(float(v)) for v in (*pose.t, *pose.q)]
        lines.append(f"{float(ts):.6f} " + " ".join(vals))
    Path(path).write_text("\n".join(lines) + "\n")


def read_tum(path) -> Trajectory:
    ts, poses = [], []
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DatasetFormatError(f"cannot read trajectory {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 8:
            raise DatasetFormatError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
        try:
            v = [float(x) for x in parts]
            pose = Pose(np.array(v[1:4]), np.array(v[4:8]))
        except ValueError as exc:
            raise DatasetFormatError(f"{path}:{lineno}: {exc}") from exc
        ts.append(v[0])
        poses.append(pose)
    return Trajectory(np.array(ts, dtype=float), poses)


# ---------------------------------------------------------------------------
# whole datasets

def save_dataset(ds: Dataset, directory) -> Path:
    d = Path(directory)
    (d / "depth").mkdir(parents=True, exist_ok=True)
    meta = dict(ds.meta)
    meta["intrinsics"] = ds.intrinsics.to_dict()
    meta["timestamps"] = [float(f.timestamp) for f in ds.frames]
    meta["frame_ids"] = [int(f.frame_id) for f in ds.frames]
    (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    write_correspondences(d / "correspondences.jsonl", ds.frames)
    for fr in ds.frames:
        write_depth(d / "depth" / f"{fr.frame_id:06d}.spld", fr.depth)
    if ds.groundtruth is not None:
        write_tum(d / "groundtruth.txt", ds.groundtruth)
    return d


def load_dataset(directory) -> Dataset:
    d = Path(directory)
    try:
        meta = json.loads((d / "meta.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetFormatError(f"{d}: cannot read meta.json: {exc}") from exc
    try:
        K = CameraIntrinsics.from_dict(meta["intrinsics"])
        timestamps = [float(t) for t in meta["timestamps"]]
        frame_ids = [int(i) for i in meta.get("frame_ids", range(len(timestamps)))]
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(f"{d}: bad meta.json: {exc}") from exc
    if len(frame_ids) != len(timestamps) or any(b <= a for a, b in zip(frame_ids, frame_ids[1:])):
        raise DatasetFormatError(f"{d}: frame ids must be strictly increasing")
    corr_path = d / "correspondences.jsonl"
    corr = read_correspondences(corr_path) if corr_path.exists() else {}
    frames = []
    for fid, ts in zip(frame_ids, timestamps):
        path = d / "depth" / f"{fid:06d}.spld"
        if not path.exists():
            raise DatasetFormatError(f"{path}: missing depth raster")
        depth = read_depth(path)
        if depth.shape != (K.height, K.width):
            raise DatasetFormatError(f"{path}: raster {depth.shape} does not match intrinsics")
        frames.append(FrameData(fid, ts, corr.get(fid, []), depth))
    gt_path = d / "groundtruth.txt"
    gt = read_tum(gt_path) if gt_path.exists() else None
    return Dataset(K, frames, gt, meta)
