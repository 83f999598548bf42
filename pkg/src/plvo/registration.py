"""Registered point cloud that fills holes of the current depth map with past measurements."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .errors import OutOfBounds
from .geometry import CameraIntrinsics
from .uncertainty import PoseChainWindow

NEAR_PLANE = 0.05


class Provenance(IntEnum):
    INVALID = 0
    MEASURED = 1
    PROPAGATED = 2


@dataclass(eq=False)
class RegisteredCloud:
    """Points kept in their source-frame coordinates, tagged with the source frame.

    ``points`` holds the same points expressed in the frame of the last
    integration.
    """

    src_points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    frame_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __len__(self) -> int:
        return len(self.frame_ids)


@dataclass(eq=False)
class AugmentedDepthMap:
    depth: np.ndarray          # (H, W) metres, 0 where invalid
    provenance: np.ndarray     # (H, W) Provenance codes
    source: np.ndarray         # (H, W) source frame id, -1 where invalid
    frame_id: int = 0

    @property
    def shape(self):
        return self.depth.shape


@dataclass(frozen=True)
class DepthSample:
    depth: float
    provenance: Provenance

    @property
    def valid(self) -> bool:
        return self.provenance != Provenance.INVALID


def _valid_depth(depth: np.ndarray) -> np.ndarray:
    return np.isfinite(depth) & (depth > 0)


def integrate_frame(cloud: RegisteredCloud, sensor_depth: np.ndarray, window: PoseChainWindow,
                    K: CameraIntrinsics, uncertainty_max: float = 4e-4,
                    near: float = NEAR_PLANE) -> tuple[RegisteredCloud, AugmentedDepthMap]:
    """Propagate the cloud into the current frame and merge it with the sensor raster."""
    h, w = sensor_depth.shape
    frame_id = window.current_frame_id
    sensor_ok = _valid_depth(sensor_depth)

    # 1-2: uncertainty gate, transform, frustum
    keep_src, keep_ids, keep_cur = [], [], []
    for fid in np.unique(cloud.frame_ids):
        entry = window.get(int(fid))
        if entry is None or entry.uncertainty > uncertainty_max:
            continue
        sel = cloud.frame_ids == fid
        src = cloud.src_points[sel]
        keep_src.append(src)
        keep_ids.append(cloud.frame_ids[sel])
        keep_cur.append(src @ entry.pose.R.T + entry.pose.t)
    if keep_src:
        src = np.concatenate(keep_src)
        ids = np.concatenate(keep_ids)
        cur = np.concatenate(keep_cur)
    else:
        src, ids, cur = np.zeros((0, 3)), np.zeros(0, dtype=np.int64), np.zeros((0, 3))

    Z = cur[:, 2]
    front = Z > near
    Zs = np.where(front, Z, 1.0)
    u = np.rint(K.fx * cur[:, 0] / Zs + K.cx).astype(np.int64)
    v = np.rint(K.fy * cur[:, 1] / Zs + K.cy).astype(np.int64)
    ok = front & (u >= 0) & (u < w) & (v >= 0) & (v < h)
    src, ids, cur, u, v = src[ok], ids[ok], cur[ok], u[ok], v[ok]

    # 3: one point per pixel, newest source wins, then nearest; sensor beats all
    flat = v * w + u
    order = np.lexsort((-cur[:, 2], ids))
    rev = order[::-1]
    _, first = np.unique(flat[rev], return_index=True)
    winners = rev[first]
    winners = winners[~sensor_ok.ravel()[flat[winners]]]
    winners.sort()

    depth = np.where(sensor_ok, sensor_depth, 0.0).astype(float)
    prov = np.where(sensor_ok, Provenance.MEASURED, Provenance.INVALID).astype(np.int8)
    source = np.where(sensor_ok, frame_id, -1).astype(np.int64)
    depth.ravel()[flat[winners]] = cur[winners, 2]
    prov.ravel()[flat[winners]] = Provenance.PROPAGATED
    source.ravel()[flat[winners]] = ids[winners]

    # 4: current measurements enter the cloud
    vv, uu = np.nonzero(sensor_ok)
    zz = sensor_depth[vv, uu].astype(float)
    meas = np.column_stack([(uu - K.cx) / K.fx * zz, (vv - K.cy) / K.fy * zz, zz])
    new_cloud = RegisteredCloud(
        src_points=np.concatenate([src[winners], meas]),
        frame_ids=np.concatenate([ids[winners], np.full(len(meas), frame_id, dtype=np.int64)]),
        points=np.concatenate([cur[winners], meas]),
    )
    return new_cloud, AugmentedDepthMap(depth, prov, source, frame_id)


def sample_depth(augmented: AugmentedDepthMap, pixel) -> DepthSample:
    """Depth and provenance at the nearest integer pixel."""
    h, w = augmented.shape
    u, v = (int(np.rint(c)) for c in pixel)
    if not (0 <= u < w and 0 <= v < h):
        raise OutOfBounds(f"pixel ({u}, {v}) outside {w}x{h}")
    prov = Provenance(int(augmented.provenance[v, u]))
    if prov == Provenance.INVALID:
        return DepthSample(float("nan"), prov)
    return DepthSample(float(augmented.depth[v, u]), prov)


def sample_depths(augmented: AugmentedDepthMap, pixels) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`sample_depth`; out-of-bounds pixels come back invalid."""
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    h, w = augmented.shape
    u = np.rint(pixels[:, 0]).astype(np.int64)
    v = np.rint(pixels[:, 1]).astype(np.int64)
    inside = (u >= 0) & (u < w) & (v >= 0) & (v < h)
    depth = np.full(len(pixels), np.nan)
    prov = np.zeros(len(pixels), dtype=np.int8)
    depth[inside] = augmented.depth[v[inside], u[inside]]
    prov[inside] = augmented.provenance[v[inside], u[inside]]
    depth[prov == Provenance.INVALID] = np.nan
    return depth, prov
