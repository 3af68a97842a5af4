"""Planar contours: resampling, curve similarity scores, file I/O and a greedy snake."""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

logger = logging.getLogger(__name__)


class ContourError(ValueError):
    pass


class Contour2D:
    """Ordered open polyline of (x, y) points.

    At least two finite points, no two consecutive points equal. The point
    array is read-only.
    """

    __slots__ = ("points",)

    def __init__(self, points):
        pts = np.array(points, dtype=np.float64).reshape(-1, 2)
        if len(pts) < 2:
            raise ContourError("a contour needs at least 2 points")
        if not np.all(np.isfinite(pts)):
            raise ContourError("contour has non-finite coordinates")
        same = np.all(pts[1:] == pts[:-1], axis=1)
        if np.any(same):
            raise ContourError(f"consecutive duplicate point at index {int(np.argmax(same)) + 1}")
        pts.setflags(write=False)
        self.points = pts

    def __len__(self):
        return len(self.points)

    def __eq__(self, other):
        return isinstance(other, Contour2D) and np.array_equal(self.points, other.points)

    def __repr__(self):
        return f"Contour2D({len(self)} points)"

    @property
    def arc_length(self):
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).sum())


@dataclass(frozen=True)
class ScoringConfig:
    n: int = 12
    alpha: float = 0.8
    beta: float = 0.2
    msd_guard: float = 1e-9
    penalty_guard: float = 1e-9

    def __post_init__(self):
        if self.n < 2:
            raise ContourError("resample count n must be >= 2")
        if self.alpha < 0 or self.beta < 0:
            raise ContourError("alpha and beta must be non-negative")
        if not (self.msd_guard > 0 and self.penalty_guard > 0):
            raise ContourError("guards must be positive")


def _as_points(c):
    return c.points if isinstance(c, Contour2D) else np.asarray(c, dtype=np.float64).reshape(-1, 2)


def resample_equidistant(c, n: int) -> Contour2D:
    """Resample to ``n`` points evenly spaced in arc length, endpoints kept exactly."""
    pts = _as_points(c)
    if n < 2:
        raise ContourError("n must be >= 2")
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if not total > 0:
        raise ContourError("contour has zero length")
    s = total * np.arange(n) / (n - 1)
    out = np.empty((n, 2))
    out[:, 0] = np.interp(s, cum, pts[:, 0])
    out[:, 1] = np.interp(s, cum, pts[:, 1])
    out[0] = pts[0]
    out[-1] = pts[-1]
    return Contour2D(out)


def _row_sum(a):
    # sequential left-to-right sum along the last axis, so batch and scalar paths agree bitwise
    total = a[..., 0].copy()
    for k in range(1, a.shape[-1]):
        total += a[..., k]
    return total


def msd_batch(v1, candidates) -> np.ndarray:
    """MSD of one contour against a stack of equal-length contours, shape (N, n, 2)."""
    a = _as_points(v1)
    b = np.asarray(candidates, dtype=np.float64)
    if b.ndim != 3 or b.shape[1] != len(a):
        raise ContourError(f"contours must have equal point counts ({len(a)} vs {b.shape[1:2]})")
    dx = a[None, :, None, 0] - b[:, None, :, 0]
    dy = a[None, :, None, 1] - b[:, None, :, 1]
    d = np.sqrt(dx * dx + dy * dy)
    forward = _row_sum(d.min(axis=2))
    backward = _row_sum(d.min(axis=1))
    return (forward + backward) / (2 * len(a))


def msd(v1, v2) -> float:
    """Mean sum of nearest-point distances, symmetric in its arguments."""
    a, b = _as_points(v1), _as_points(v2)
    if len(a) != len(b):
        raise ContourError(f"contours must have equal point counts ({len(a)} vs {len(b)}); resample first")
    return float(msd_batch(a, b[None])[0])


def penalty(constraint_points, guard: float = 1e-9) -> float:
    """Sum of reciprocal gaps between consecutive constraint points."""
    p = np.asarray(constraint_points, dtype=np.float64).reshape(-1, 2)
    if len(p) < 2:
        raise ContourError("penalty needs at least 2 constraint points")
    gaps = np.sqrt(np.sum(np.diff(p, axis=0) ** 2, axis=1))
    if np.any(gaps < guard):
        logger.warning("coincident constraint points; gaps clamped to %g", guard)
        gaps = np.maximum(gaps, guard)
    return float(sum((1.0 / gaps).tolist()))


def score_from_parts(msd_value, penalty_value, cfg: ScoringConfig):
    """alpha / max(MSD, guard) + beta / P; works elementwise on arrays."""
    return cfg.alpha / np.maximum(msd_value, cfg.msd_guard) + cfg.beta / penalty_value


def objective_score(v1, v2, constraint_points, cfg: ScoringConfig = ScoringConfig()) -> float:
    """Similarity objective; higher means a better match."""
    return float(score_from_parts(msd(v1, v2), penalty(constraint_points, cfg.penalty_guard), cfg))


# -- file formats ---------------------------------------------------------

FRAME_PATTERN = re.compile(r"frame_(\d{6})\.csv$")


@dataclass(frozen=True)
class AffineMap:
    """Pixel -> model coordinates: x' = sx * x + ox, y' = sy * y + oy."""

    scale_x: float = 1.0
    scale_y: float = 1.0
    offset_x: float = 0.0
    offset_y: float = 0.0

    def apply(self, pts):
        pts = _as_points(pts)
        return pts * [self.scale_x, self.scale_y] + [self.offset_x, self.offset_y]

    def invert(self, pts):
        pts = _as_points(pts)
        return (pts - [self.offset_x, self.offset_y]) / [self.scale_x, self.scale_y]


def read_contour_csv(path, affine: AffineMap | None = None) -> Contour2D:
    pts = []
    with open(path) as fh:
        for no, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                x, y = (float(v) for v in line.split(","))
            except ValueError:
                if not pts and not re.match(r"^[-+.\d]", line):
                    continue  # header row
                raise ContourError(f"{path}: line {no}: expected 'x,y'") from None
            pts.append((x, y))
    pts = np.array(pts).reshape(-1, 2)
    if affine is not None:
        pts = affine.apply(pts)
    try:
        return Contour2D(pts)
    except ContourError as exc:
        raise ContourError(f"{path}: {exc}") from None


def write_contour_csv(path, contour):
    pts = _as_points(contour)
    Path(path).write_text("".join(f"{x!r},{y!r}\n" for x, y in pts.tolist()))


def frame_path(directory, index):
    return Path(directory) / f"frame_{index:06d}.csv"


def list_frames(directory):
    """Frame files in a directory, sorted by frame number."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ContourError(f"{directory} is not a directory")
    found = sorted(
        (int(m.group(1)), p) for p in directory.iterdir() if (m := FRAME_PATTERN.search(p.name))
    )
    return [p for _, p in found]


def read_pgm(path) -> np.ndarray:
    """Grayscale P2/P5 image as a float array indexed [row, col]."""
    from PIL import Image

    with Image.open(path) as img:
        if img.format not in ("PPM", "PGM") or img.mode not in ("L", "I", "I;16", "I;16B"):
            raise ContourError(f"{path}: not a grayscale PGM image")
        return np.asarray(img, dtype=np.float64)


# -- greedy snake ---------------------------------------------------------

@dataclass(frozen=True)
class SnakeParams:
    """Weights of continuity, curvature and image terms for the greedy snake."""

    alpha: float = 0.05
    beta: float = 0.05
    gamma: float = 1.0
    sigma: float = 1.0
    max_iter: int = 200
    step: float = 1.0


def edge_strength(image, sigma=1.0):
    """Gradient magnitude of the smoothed image scaled to [0, 1]."""
    img = np.asarray(image, dtype=np.float64)
    g = ndimage.gaussian_gradient_magnitude(img, sigma) if sigma > 0 else np.hypot(*np.gradient(img))
    peak = g.max()
    return g / peak if peak > 0 else g


class _SnakeEnergy:
    """Total energy of an open contour; points are (x, y) = (col, row)."""

    def __init__(self, edge, spacing, params):
        self.edge = edge
        self.spacing = spacing
        self.p = params

    def image_term(self, pts):
        vals = ndimage.map_coordinates(self.edge, [pts[:, 1], pts[:, 0]], order=1, mode="nearest")
        return -self.p.gamma * vals

    def total(self, pts):
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        cont = self.p.alpha * np.sum((seg - self.spacing) ** 2)
        curv = self.p.beta * np.sum(np.sum((pts[:-2] - 2 * pts[1:-1] + pts[2:]) ** 2, axis=1))
        return float(cont + curv + self.image_term(pts).sum())

    def local(self, pts, i):
        """Energy terms that involve point i."""
        lo, hi = max(i - 2, 0), min(i + 3, len(pts))
        sub = pts[lo:hi]
        seg = np.linalg.norm(np.diff(sub, axis=0), axis=1)
        e = self.p.alpha * np.sum((seg - self.spacing) ** 2)
        if len(sub) >= 3:
            e += self.p.beta * np.sum(np.sum((sub[:-2] - 2 * sub[1:-1] + sub[2:]) ** 2, axis=1))
        return e + self.image_term(pts[i : i + 1])[0]


def snake_extract(image, init, params: SnakeParams = SnakeParams(), return_energies=False):
    """Fit an open greedy snake to ``image`` starting from ``init``.

    Points move one at a time to the 8-neighbour position (or stay) that
    lowers total energy, so the energy never increases. Iteration stops at
    ``max_iter`` or once a full sweep moves no point.
    """
    img = np.asarray(image, dtype=np.float64)
    pts = np.array(_as_points(init), dtype=np.float64)
    h, w = img.shape
    if np.any(pts < 0) or np.any(pts[:, 0] > w - 1) or np.any(pts[:, 1] > h - 1):
        raise ContourError("initial contour lies outside the image")
    edge = edge_strength(img, params.sigma)
    spacing = float(np.mean(np.linalg.norm(np.diff(pts, axis=0), axis=1)))
    energy = _SnakeEnergy(edge, spacing, params)
    s = params.step
    moves = np.array([(dx, dy) for dx in (-s, 0, s) for dy in (-s, 0, s) if dx or dy])
    energies = [energy.total(pts)]
    for _ in range(params.max_iter):
        moved = 0
        for i in range(len(pts)):
            best = energy.local(pts, i)
            keep = pts[i].copy()
            choice = None
            for mv in moves:
                cand = keep + mv
                if cand[0] < 0 or cand[1] < 0 or cand[0] > w - 1 or cand[1] > h - 1:
                    continue
                if (i > 0 and np.array_equal(cand, pts[i - 1])) or (
                    i + 1 < len(pts) and np.array_equal(cand, pts[i + 1])
                ):
                    continue
                pts[i] = cand
                e = energy.local(pts, i)
                if e < best - 1e-12:
                    best, choice = e, cand.copy()
                pts[i] = keep
            if choice is not None:
                pts[i] = choice
                moved += 1
        energies.append(energy.total(pts))
        if moved == 0:
            break
    result = Contour2D(pts)
    return (result, energies) if return_energies else result


def segments_intersect(p1, p2, p3, p4) -> bool:
    """Proper or touching intersection of closed segments p1p2 and p3p4."""

    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return 0 if v == 0 else (1 if v > 0 else -1)

    def on_seg(a, b, c):
        return min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])

    o1, o2, o3, o4 = orient(p1, p2, p3), orient(p1, p2, p4), orient(p3, p4, p1), orient(p3, p4, p2)
    if o1 != o2 and o3 != o4:
        return True
    return (
        (o1 == 0 and on_seg(p1, p2, p3))
        or (o2 == 0 and on_seg(p1, p2, p4))
        or (o3 == 0 and on_seg(p3, p4, p1))
        or (o4 == 0 and on_seg(p3, p4, p2))
    )


def self_intersects(contour) -> bool:
    """True when two non-adjacent segments of the polyline meet."""
    pts = _as_points(contour)
    k = len(pts) - 1
    for i in range(k):
        for j in range(i + 2, k):
            if segments_intersect(pts[i], pts[i + 1], pts[j], pts[j + 1]):
                return True
    return False


def polyline_arc_length(pts):
    return math.fsum(np.linalg.norm(np.diff(_as_points(pts), axis=0), axis=1).tolist())
