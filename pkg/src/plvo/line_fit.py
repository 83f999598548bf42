"""3D line segments from the depth samples along a 2D segment (RANSAC + PCA)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NoConsensus, NonLinearStructure, NoValidSamples, TooFewSamples
from .geometry import CameraIntrinsics, Line3D


@dataclass
class RansacConfig:
    inlier_threshold: float = 0.03
    max_iterations: int = 200
    min_inliers: int | None = None
    min_inlier_fraction: float = 0.3
    confidence: float = 0.999
    anisotropy_ratio: float = 2.0

    def __post_init__(self):
        if self.inlier_threshold <= 0:
            raise ValueError("inlier_threshold must be positive")

    def required_inliers(self, n_samples: int) -> int:
        if self.min_inliers is not None:
            return self.min_inliers
        return max(6, int(np.ceil(self.min_inlier_fraction * n_samples)))


@dataclass(eq=False)
class LineDepthSamples:
    samples: np.ndarray      # (N, 3) back-projected points, m
    pixels: np.ndarray       # (N, 2) sub-pixel image positions they came from
    total: int               # pixels visited, valid or not

    @property
    def valid_count(self) -> int:
        return len(self.samples)


@dataclass(eq=False)
class LineFit:
    line: Line3D
    inliers: np.ndarray
    centroid: np.ndarray
    direction: np.ndarray
    sigmas: np.ndarray


def rasterize_segment(a, b) -> np.ndarray:
    """Integer pixels of the segment ``a -> b`` stepping along the major axis."""
    a = np.rint(np.asarray(a, dtype=float)).astype(int)
    b = np.rint(np.asarray(b, dtype=float)).astype(int)
    n = int(max(abs(b[0] - a[0]), abs(b[1] - a[1])))
    if n == 0:
        return a[None, :]
    s = np.arange(n + 1) / n
    return np.rint(a[None, :] + s[:, None] * (b - a)[None, :]).astype(int)


def sample_line_depths(depth_map: np.ndarray, segment, K: CameraIntrinsics,
                       stride_px: int = 1) -> LineDepthSamples:
    """Back-project the valid depth pixels found along a pixel segment.

    Each visited pixel contributes the foot of the perpendicular from its
    center onto the segment, back-projected at that pixel's depth, so every
    sample lies on the viewing plane of the 2D segment.
    """
    seg = np.asarray(segment, dtype=float).reshape(2, 2)
    d = seg[1] - seg[0]
    length = float(np.hypot(*d))
    if length < 2.0:
        raise ValueError("segment must be at least 2 px long")
    pix = rasterize_segment(seg[0], seg[1])[::stride_px]
    h, w = depth_map.shape
    inside = (pix[:, 0] >= 0) & (pix[:, 0] < w) & (pix[:, 1] >= 0) & (pix[:, 1] < h)
    total = len(pix)
    pix = pix[inside]
    z = depth_map[pix[:, 1], pix[:, 0]].astype(float)
    ok = np.isfinite(z) & (z > 0)
    if not np.any(ok):
        raise NoValidSamples("no valid depth along the segment")
    pix, z = pix[ok], z[ok]
    u_hat = d / length
    s = (pix - seg[0]) @ u_hat
    foot = seg[0] + s[:, None] * u_hat
    xy = K.to_normalized(foot)
    pts = np.column_stack([xy * z[:, None], z])
    return LineDepthSamples(pts, foot, total)


def _point_line_distances(X, a, direction):
    return np.linalg.norm(np.cross(X - a, direction), axis=-1)


def _pca(X):
    centroid = X.mean(axis=0)
    C = (X - centroid).T @ (X - centroid) / len(X)
    evals, evecs = np.linalg.eigh(C)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    v1 = evecs[:, order[0]]
    if v1[np.argmax(np.abs(v1))] < 0:
        v1 = -v1
    return centroid, v1, np.sqrt(evals)


def fit_line_ransac_pca(samples: LineDepthSamples | np.ndarray, cfg: RansacConfig | None = None,
                        rng: np.random.Generator | None = None) -> LineFit:
    cfg = cfg or RansacConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    X = samples.samples if isinstance(samples, LineDepthSamples) else np.asarray(samples, float)
    n = len(X)
    need = cfg.required_inliers(n)
    if n < max(need, 3):
        raise TooFewSamples(f"{n} samples, need {max(need, 3)}")

    best_mask, best_count, best_err = None, -1, np.inf
    limit = cfg.max_iterations
    it = 0
    while it < limit:
        it += 1
        i, j = rng.choice(n, 2, replace=False)
        direction = X[j] - X[i]
        norm = np.linalg.norm(direction)
        if norm < 1e-9:
            continue
        dist = _point_line_distances(X, X[i], direction / norm)
        mask = dist < cfg.inlier_threshold
        count = int(mask.sum())
        err = float(dist[mask].sum())
        if count > best_count or (count == best_count and err < best_err):
            best_mask, best_count, best_err = mask, count, err
            ratio = count / n
            if ratio >= 1.0:
                break
            adaptive = np.log(1 - cfg.confidence) / np.log(1 - ratio**2) if ratio > 0 else np.inf
            limit = min(cfg.max_iterations, int(np.ceil(adaptive)))

    if best_mask is None or best_count < need:
        raise NoConsensus(f"best consensus {max(best_count, 0)} < {need}")

    centroid, v1, sig = _pca(X[best_mask])
    # one refinement pass against the PCA line
    refined = _point_line_distances(X, centroid, v1) < cfg.inlier_threshold
    if refined.sum() >= need and not np.array_equal(refined, best_mask):
        best_mask = refined
        centroid, v1, sig = _pca(X[best_mask])
    if sig[0] < cfg.anisotropy_ratio * sig[1] or sig[0] <= 0:
        raise NonLinearStructure("inlier spread is not line-like")
    line = Line3D(centroid - sig[0] * v1, centroid + sig[0] * v1)
    return LineFit(line, best_mask, centroid, v1, sig)
