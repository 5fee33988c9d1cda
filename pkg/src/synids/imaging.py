"""Session imaging: convex hulls, deterministic colors, scanline fill, frames.

All compositing is 8-bit integer "over" with round-half-up, so a fixed
session order gives a bitwise-identical raster on every platform.
"""

from __future__ import annotations

import colorsys
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .capture import Session, featurize_many
from .errors import EmptyInput
from .projection import ProjectionBasis, coordinate_bounds, project_points

log = logging.getLogger(__name__)

LEGITIMATE = "legitimate"
DDOS = "ddos"
UNLABELED = "unlabeled"

DEFAULT_SIZE = 1000
DEFAULT_WINDOW_S = 5.0
BACKGROUND = (0, 0, 0, 255)

# 2**64 / golden ratio, the Fibonacci hashing multiplier
_GOLDEN_64 = 0x9E3779B97F4A7C15
_EPS = 1e-9

Point = Tuple[float, float]


@dataclass
class SessionPolygon:
    session_id: int
    hull: List[Point]
    color: Tuple[int, int, int, int]


@dataclass
class SessionImageFrame:
    pixels: np.ndarray
    window_start: int
    window_end: int
    polygons: List[SessionPolygon] = field(default_factory=list)
    label: str = UNLABELED
    index: int = 0

    @property
    def size(self) -> Tuple[int, int]:
        return self.pixels.shape[1], self.pixels.shape[0]


@dataclass(frozen=True)
class CanvasCalibration:
    u_min: float
    u_max: float
    v_min: float
    v_max: float
    width: int = DEFAULT_SIZE
    height: int = DEFAULT_SIZE

    @classmethod
    def from_basis(cls, basis: ProjectionBasis, width=DEFAULT_SIZE, height=None):
        u0, u1, v0, v1 = coordinate_bounds(basis)
        return cls(u0, u1, v0, v1, int(width), int(height or width))

    @property
    def scale(self) -> Tuple[float, float]:
        return (
            (self.width - 1) / (self.u_max - self.u_min),
            (self.height - 1) / (self.v_max - self.v_min),
        )

    @property
    def offset(self) -> Tuple[float, float]:
        sx, sy = self.scale
        return -self.u_min * sx, -self.v_min * sy

    def to_pixel(self, uv: np.ndarray) -> np.ndarray:
        """Affine world-to-pixel map, clamped to the canvas."""
        uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
        sx, sy = self.scale
        out = np.empty_like(uv)
        out[:, 0] = (uv[:, 0] - self.u_min) * sx
        out[:, 1] = (uv[:, 1] - self.v_min) * sy
        np.clip(out[:, 0], 0, self.width - 1, out=out[:, 0])
        np.clip(out[:, 1], 0, self.height - 1, out=out[:, 1])
        return out


def blank_canvas(width: int, height: int) -> np.ndarray:
    pixels = np.empty((height, width, 4), dtype=np.uint8)
    pixels[...] = BACKGROUND
    return pixels


# --------------------------------------------------------------------------
# hull


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points: Iterable[Sequence[float]]) -> List[Point]:
    """Monotone-chain hull, counter-clockwise, collinear vertices removed.

    One distinct point gives a 1-vertex hull; collinear input gives the two
    extreme points.
    """
    pts = sorted({(float(p[0]), float(p[1])) for p in points})
    if not pts:
        raise EmptyInput("convex hull of no points")
    if len(pts) <= 2:
        return pts

    def chain(seq):
        out: List[Point] = []
        for p in seq:
            while len(out) >= 2 and _cross(out[-2], out[-1], p) <= 0:
                out.pop()
            out.append(p)
        return out

    lower = chain(pts)
    upper = chain(reversed(pts))
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:
        # everything collinear: the chains collapse onto the two extremes
        return [pts[0], pts[-1]]
    return hull


# --------------------------------------------------------------------------
# color


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def session_hue(session_id: int) -> float:
    """Fraction of a full turn; consecutive ids step by the golden angle."""
    return ((int(session_id) * _GOLDEN_64) % 2**64) / 2.0**64


def session_color(session_id: int) -> Tuple[int, int, int, int]:
    r, g, b = colorsys.hsv_to_rgb(session_hue(session_id), 0.8, 0.9)
    return (_round_half_up(r * 255), _round_half_up(g * 255), _round_half_up(b * 255), 128)


# --------------------------------------------------------------------------
# raster


def composite_over(dst: np.ndarray, color: Sequence[int]) -> np.ndarray:
    """Integer "over" of one flat RGBA color onto ``dst`` (uint8, ..., 4)."""
    a = int(color[3])
    src = np.array(color, dtype=np.int32)
    src[3] = 255
    d = dst.astype(np.int32)
    out = (2 * (src * a + d * (255 - a)) + 255) // 510
    return out.astype(np.uint8)


def _scanline_mask(px: np.ndarray, width: int, height: int):
    """Pixel-center coverage of a convex polygon: (y0, x0, mask) or None."""
    y_lo = max(0, math.ceil(px[:, 1].min() - _EPS))
    y_hi = min(height - 1, math.floor(px[:, 1].max() + _EPS))
    x_lo = max(0, math.ceil(px[:, 0].min() - _EPS))
    x_hi = min(width - 1, math.floor(px[:, 0].max() + _EPS))
    if y_hi < y_lo or x_hi < x_lo:
        return None
    rows = np.arange(y_lo, y_hi + 1, dtype=np.float64)
    x0, y0 = px[:, 0], px[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    dy = y1 - y0
    ry = rows[:, None]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        t = (ry - y0) / dy
        xs = x0 + t * (x1 - x0)
    span = (ry >= np.minimum(y0, y1) - _EPS) & (ry <= np.maximum(y0, y1) + _EPS)
    slanted = span & (np.abs(dy) > _EPS)
    flat = span & (np.abs(dy) <= _EPS)
    left = np.where(slanted, xs, np.inf).min(axis=1)
    right = np.where(slanted, xs, -np.inf).max(axis=1)
    left = np.minimum(left, np.where(flat, np.minimum(x0, x1), np.inf).min(axis=1))
    right = np.maximum(right, np.where(flat, np.maximum(x0, x1), -np.inf).max(axis=1))
    cols = np.arange(x_lo, x_hi + 1, dtype=np.float64)
    mask = (cols >= left[:, None] - _EPS) & (cols <= right[:, None] + _EPS)
    if not mask.any():
        return None
    return y_lo, x_lo, mask


def _capsule_mask(px: np.ndarray, width: int, height: int, radius: float = 1.0):
    """Pixels within ``radius`` of the polyline through ``px`` (3 px wide)."""
    y_lo = max(0, math.floor(px[:, 1].min() - radius))
    y_hi = min(height - 1, math.ceil(px[:, 1].max() + radius))
    x_lo = max(0, math.floor(px[:, 0].min() - radius))
    x_hi = min(width - 1, math.ceil(px[:, 0].max() + radius))
    yy, xx = np.mgrid[y_lo : y_hi + 1, x_lo : x_hi + 1].astype(np.float64)
    if len(px) == 1:
        cx, cy = np.floor(px[0] + 0.5)
        mask = (np.abs(xx - cx) <= 1) & (np.abs(yy - cy) <= 1)
        return y_lo, x_lo, mask
    mask = np.zeros(xx.shape, dtype=bool)
    closed = len(px) > 2
    segments = len(px) if closed else len(px) - 1
    for i in range(segments):
        (ax, ay), (bx, by) = px[i], px[(i + 1) % len(px)]
        dx, dy = bx - ax, by - ay
        length2 = dx * dx + dy * dy
        if length2 == 0:
            t = np.zeros_like(xx)
        else:
            t = np.clip(((xx - ax) * dx + (yy - ay) * dy) / length2, 0.0, 1.0)
        dist2 = (xx - ax - t * dx) ** 2 + (yy - ay - t * dy) ** 2
        mask |= dist2 <= radius * radius + _EPS
    return y_lo, x_lo, mask


def rasterize(
    frame: SessionImageFrame, poly: SessionPolygon, cal: CanvasCalibration
) -> SessionImageFrame:
    """Fill ``poly`` into ``frame`` in place and return the frame."""
    height, width = frame.pixels.shape[:2]
    px = cal.to_pixel(np.asarray(poly.hull, dtype=np.float64))
    found = _scanline_mask(px, width, height) if len(px) >= 3 else None
    if found is None:
        # points, segments and slivers that cover no pixel center
        found = _capsule_mask(px, width, height)
    y0, x0, mask = found
    region = frame.pixels[y0 : y0 + mask.shape[0], x0 : x0 + mask.shape[1]]
    region[mask] = composite_over(region[mask], poly.color)
    return frame


# --------------------------------------------------------------------------
# frames


def label_window(start: int, end: int, truth: Optional[Sequence[Tuple[int, int]]]) -> str:
    if truth is None:
        return UNLABELED
    for s, e in truth:
        if s < end and start < e:
            return DDOS
    return LEGITIMATE


def frame_count(t_first: int, t_last: int, window_us: int) -> int:
    return max(1, -(-(t_last - t_first) // window_us))


def frame_stream(
    sessions: Sequence[Session],
    basis: ProjectionBasis,
    cal: CanvasCalibration,
    window_s: float = DEFAULT_WINDOW_S,
    *,
    truth: Optional[Sequence[Tuple[int, int]]] = None,
    start_us: Optional[int] = None,
    count: Optional[int] = None,
) -> Iterator[SessionImageFrame]:
    """Render tumbling windows over ``sessions``.

    Windows run from the earliest timestamp (or ``start_us``) and are
    half-open, except that the last one also takes packets sitting exactly on
    its end so the final packet is never dropped. Each session is drawn in
    every window it has packets in, from those packets alone, in order of the
    session's first packet.
    """
    if window_s <= 0:
        raise ValueError("window must be positive")
    window_us = int(round(window_s * 1_000_000))
    stamps = [p.timestamp for s in sessions for p in s.packets]
    if not stamps and (start_us is None or count is None):
        return
    t0 = min(stamps) if start_us is None else int(start_us)
    if count is None:
        count = frame_count(t0, max(stamps), window_us)

    ordered = sorted(sessions, key=lambda s: (s.first_seen, s.session_id))
    per_window: List[List[Tuple[int, np.ndarray]]] = [[] for _ in range(count)]
    for session in ordered:
        ts = np.array([p.timestamp for p in session.packets], dtype=np.int64)
        idx = (ts - t0) // window_us
        idx[(ts - t0) == count * window_us] = count - 1
        keep = (ts >= t0) & (idx < count)
        if not keep.any():
            continue
        uv = project_points(featurize_many(session.packets), basis)
        for w in np.unique(idx[keep]):
            per_window[int(w)].append((session.session_id, uv[keep & (idx == w)]))

    for w in range(count):
        start = t0 + w * window_us
        end = start + window_us
        frame = SessionImageFrame(
            blank_canvas(cal.width, cal.height), start, end,
            label=label_window(start, end, truth), index=w,
        )
        for sid, uv in per_window[w]:
            poly = SessionPolygon(sid, convex_hull(uv), session_color(sid))
            rasterize(frame, poly, cal)
            frame.polygons.append(poly)
        yield frame


def diff_stream(frames: Iterable[SessionImageFrame]) -> Iterator[SessionImageFrame]:
    """Per-pixel absolute RGB difference of consecutive frames, opaque alpha."""
    prev = None
    for frame in frames:
        base = prev if prev is not None else blank_canvas(*frame.size)
        diff = np.abs(frame.pixels.astype(np.int16) - base.astype(np.int16)).astype(np.uint8)
        diff[..., 3] = 255
        prev = frame.pixels
        yield SessionImageFrame(diff, frame.window_start, frame.window_end,
                                frame.polygons, frame.label, frame.index)


# --------------------------------------------------------------------------
# files


def frame_filename(frame: SessionImageFrame) -> str:
    return f"frame_{frame.index:06d}_{frame.window_start}.png"


def write_frames(frames: Iterable[SessionImageFrame], out_dir: str) -> List[dict]:
    """Write PNGs plus a ``frames.jsonl`` manifest; returns the manifest rows."""
    from PIL import Image

    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for frame in frames:
        name = frame_filename(frame)
        Image.fromarray(np.ascontiguousarray(frame.pixels, dtype=np.uint8)).save(os.path.join(out_dir, name))
        rows.append({
            "index": frame.index,
            "file": name,
            "window_start": frame.window_start,
            "window_end": frame.window_end,
            "label": frame.label,
            "sessions": len(frame.polygons),
        })
    tmp = os.path.join(out_dir, "frames.jsonl.tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    os.replace(tmp, os.path.join(out_dir, "frames.jsonl"))
    return rows


def read_manifest(path: str) -> List[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def load_frame_pixels(path: str) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as img:
        return np.asarray(img.convert("RGBA"), dtype=np.uint8).copy()
