"""Scale-invariant keypoints and 128-bin gradient-histogram descriptors.

A difference-of-Gaussians detector over a 4-octave, 3-scale pyramid, with
sub-pixel refinement, contrast and edge-response rejection, one dominant
orientation per keypoint, and a 4x4x8 oriented histogram descriptor.
Everything is batched over keypoints with numpy; per-keypoint Python loops
would dominate runtime on 1000x1000 frames.

Descriptors are normalized, clamped at 0.2 and renormalized until no
component exceeds the clamp, so the stored vectors satisfy the clamp bound
exactly rather than only before the final renormalization.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Optional

import cv2
import numpy as np
from scipy import ndimage

log = logging.getLogger(__name__)

DESCRIPTOR_DIM = 128
DUMP_MAGIC = b"SYNDSC1\0"


@dataclass(frozen=True)
class SiftParams:
    octaves: int = 4
    scales: int = 3
    sigma0: float = 1.6
    assumed_blur: float = 0.5
    contrast_threshold: float = 0.03
    edge_ratio: float = 10.0
    border: int = 5
    max_descriptors: int = 500
    clamp: float = 0.2
    refine_steps: int = 5


DEFAULT_PARAMS = SiftParams()


@dataclass
class DescriptorSet:
    """Parallel arrays of keypoints and their descriptors for one frame.

    Keypoint columns: x, y (input-pixel coordinates), scale (sigma in input
    pixels), orientation (radians in [0, 2pi)), response (|DoG| at the
    refined extremum).
    """

    x: np.ndarray
    y: np.ndarray
    scale: np.ndarray
    orientation: np.ndarray
    response: np.ndarray
    descriptors: np.ndarray
    frame: Optional[str] = None

    def __len__(self) -> int:
        return len(self.x)

    @classmethod
    def empty(cls, frame=None) -> "DescriptorSet":
        z = np.zeros(0)
        return cls(z, z, z, z, z, np.zeros((0, DESCRIPTOR_DIM), np.float32), frame)


@dataclass
class Keypoints:
    x: np.ndarray
    y: np.ndarray
    scale: np.ndarray
    orientation: np.ndarray
    response: np.ndarray
    # pyramid coordinates, needed again by the descriptor pass
    octave: np.ndarray = field(repr=False)
    layer: np.ndarray = field(repr=False)
    ox: np.ndarray = field(repr=False)
    oy: np.ndarray = field(repr=False)
    osigma: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.x)


# --------------------------------------------------------------------------
# grayscale


def to_grayscale(pixels: np.ndarray) -> np.ndarray:
    """Luma of an RGBA raster with alpha pre-multiplied against black."""
    px = np.asarray(pixels)
    if px.ndim == 2:
        return px.astype(np.uint8)
    rgb = px[..., :3].astype(np.int64)
    if px.shape[-1] == 4:
        a = px[..., 3:4].astype(np.int64)
        rgb = (2 * rgb * a + 255) // 510
    # integer weights x1000 keep round-half-up exact
    luma = 299 * rgb[..., 0] + 587 * rgb[..., 1] + 114 * rgb[..., 2]
    return ((2 * luma + 1000) // 2000).astype(np.uint8)


# --------------------------------------------------------------------------
# pyramid


def _blur(image: np.ndarray, sigma: float) -> np.ndarray:
    # kernel radius 4 sigma, mirrored border: symmetric under 90 degree turns
    radius = max(1, int(np.ceil(4.0 * sigma)))
    return cv2.GaussianBlur(image, (2 * radius + 1, 2 * radius + 1), sigmaX=sigma, sigmaY=sigma,
                            borderType=cv2.BORDER_REFLECT)


def _pyramid(image: np.ndarray, p: SiftParams):
    k = 2.0 ** (1.0 / p.scales)
    sigmas = [p.sigma0 * k**i for i in range(p.scales + 3)]
    increments = [np.sqrt(sigmas[i] ** 2 - sigmas[i - 1] ** 2) for i in range(1, len(sigmas))]
    base = _blur(image, np.sqrt(max(p.sigma0**2 - p.assumed_blur**2, 0.01)))
    gaussians, dogs = [], []
    for _ in range(p.octaves):
        if min(base.shape) < 2 * p.border + 3:
            break
        layers = [base]
        for inc in increments:
            layers.append(_blur(layers[-1], inc))
        stack = np.stack(layers)
        gaussians.append(stack)
        dogs.append(stack[1:] - stack[:-1])
        base = stack[p.scales][::2, ::2]
    return gaussians, dogs


def _gradients(layer: np.ndarray):
    gx = np.zeros_like(layer)
    gy = np.zeros_like(layer)
    gx[:, 1:-1] = (layer[:, 2:] - layer[:, :-2]) * 0.5
    gy[1:-1, :] = (layer[2:, :] - layer[:-2, :]) * 0.5
    return gx, gy


class _LazyGradients:
    """Central-difference gradients of one octave, computed per layer on demand."""

    def __init__(self, stack: np.ndarray):
        self.stack = stack
        self.cache = {}

    def __getitem__(self, layer):
        layer = int(layer)
        if layer not in self.cache:
            self.cache[layer] = _gradients(self.stack[layer])
        return self.cache[layer]


# --------------------------------------------------------------------------
# detection


def _refine(dog: np.ndarray, s, y, x, p: SiftParams):
    """Iterated quadratic fit of the DoG around integer candidates."""
    n_layers, h, w = dog.shape
    s, y, x = s.copy(), y.copy(), x.copy()
    alive = np.ones(len(s), dtype=bool)
    done = np.zeros(len(s), dtype=bool)
    off = np.zeros((len(s), 3))
    grad = np.zeros((len(s), 3))
    for _ in range(p.refine_steps):
        idx = np.nonzero(alive & ~done)[0]
        if len(idx) == 0:
            break
        ss, yy, xx = s[idx], y[idx], x[idx]
        c = dog[ss, yy, xx].astype(np.float64)

        def at(ds, dy, dx):
            return dog[ss + ds, yy + dy, xx + dx].astype(np.float64)

        g = np.stack([
            (at(0, 0, 1) - at(0, 0, -1)) * 0.5,
            (at(0, 1, 0) - at(0, -1, 0)) * 0.5,
            (at(1, 0, 0) - at(-1, 0, 0)) * 0.5,
        ], axis=1)
        dxx = at(0, 0, 1) + at(0, 0, -1) - 2 * c
        dyy = at(0, 1, 0) + at(0, -1, 0) - 2 * c
        dss = at(1, 0, 0) + at(-1, 0, 0) - 2 * c
        dxy = (at(0, 1, 1) - at(0, 1, -1) - at(0, -1, 1) + at(0, -1, -1)) * 0.25
        dxs = (at(1, 0, 1) - at(1, 0, -1) - at(-1, 0, 1) + at(-1, 0, -1)) * 0.25
        dys = (at(1, 1, 0) - at(1, -1, 0) - at(-1, 1, 0) + at(-1, -1, 0)) * 0.25
        hess = np.stack([
            np.stack([dxx, dxy, dxs], axis=1),
            np.stack([dxy, dyy, dys], axis=1),
            np.stack([dxs, dys, dss], axis=1),
        ], axis=1)
        det = np.linalg.det(hess)
        ok = np.abs(det) > 1e-12
        step = np.zeros((len(idx), 3))
        if ok.any():
            step[ok] = -np.linalg.solve(hess[ok], g[ok][..., None])[..., 0]
        alive[idx[~ok]] = False
        off[idx] = step
        grad[idx] = g
        converged = ok & (np.abs(step).max(axis=1) < 0.5)
        done[idx[converged]] = True
        moving = idx[ok & ~converged]
        mv = step[ok & ~converged]
        x[moving] += np.round(mv[:, 0]).astype(x.dtype)
        y[moving] += np.round(mv[:, 1]).astype(y.dtype)
        s[moving] += np.round(mv[:, 2]).astype(s.dtype)
        inside = (
            (s[moving] >= 1) & (s[moving] <= n_layers - 2)
            & (y[moving] >= p.border) & (y[moving] < h - p.border)
            & (x[moving] >= p.border) & (x[moving] < w - p.border)
        )
        alive[moving[~inside]] = False
    keep = alive & done
    return s[keep], y[keep], x[keep], off[keep], grad[keep]


def _detect_octave(dog: np.ndarray, p: SiftParams):
    n_layers, h, w = dog.shape
    pre = 0.5 * p.contrast_threshold / p.scales
    b = p.border
    inner = np.abs(dog[1:-1, b : h - b, b : w - b]) > pre
    s, y, x = np.nonzero(inner)
    if len(s) == 0:
        return None
    s, y, x = s + 1, y + b, x + b
    # 3x3x3 extremum test only where the pre-threshold leaves candidates
    centre = dog[s, y, x]
    is_max = centre > 0
    keep = np.ones(len(s), dtype=bool)
    for ds in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if ds == dy == dx == 0:
                    continue
                nb = dog[s + ds, y + dy, x + dx]
                keep &= np.where(is_max, centre >= nb, centre <= nb)
    s, y, x = s[keep], y[keep], x[keep]
    if len(s) == 0:
        return None
    s, y, x, off, grad = _refine(dog, s, y, x, p)
    if len(s) == 0:
        return None
    value = dog[s, y, x].astype(np.float64) + 0.5 * np.einsum("ij,ij->i", grad, off)
    c = dog[s, y, x].astype(np.float64)
    dxx = dog[s, y, x + 1] + dog[s, y, x - 1] - 2 * c
    dyy = dog[s, y + 1, x] + dog[s, y - 1, x] - 2 * c
    dxy = (dog[s, y + 1, x + 1] - dog[s, y + 1, x - 1] - dog[s, y - 1, x + 1] + dog[s, y - 1, x - 1]) * 0.25
    tr = dxx + dyy
    det = dxx * dyy - dxy * dxy
    r = p.edge_ratio
    keep = (np.abs(value) >= p.contrast_threshold) & (det > 0) & (tr * tr * r < (r + 1) ** 2 * det)
    if not keep.any():
        return None
    s, y, x, off, value = s[keep], y[keep], x[keep], off[keep], value[keep]
    # several candidates can settle on one sample point
    _, first = np.unique(np.stack([s, y, x], axis=1), axis=0, return_index=True)
    first.sort()
    return s[first], y[first], x[first], off[first], np.abs(value[first])


_ORI_GRID = np.linspace(-1.0, 1.0, 25)
_ORI_BINS = 36
PEAK_RATIO = 0.8


def _orientations(gx, gy, oy, ox, osigma):
    """Dominant gradient directions in a Gaussian-weighted disc.

    Returns ``(owner, theta)``: the keypoint index each orientation belongs
    to, in keypoint order, and the angle.
    """
    sw = 1.5 * osigma
    radius = 3.0 * sw
    gy_off, gx_off = np.meshgrid(_ORI_GRID, _ORI_GRID, indexing="ij")
    gy_off = gy_off.ravel()
    gx_off = gx_off.ravel()
    disc = gx_off**2 + gy_off**2 <= 1.0
    gy_off, gx_off = gy_off[disc], gx_off[disc]
    sy = oy[:, None] + gy_off[None, :] * radius[:, None]
    sx = ox[:, None] + gx_off[None, :] * radius[:, None]
    coords = np.stack([sy.ravel(), sx.ravel()])
    vx = ndimage.map_coordinates(gx, coords, order=1, mode="constant").reshape(sy.shape)
    vy = ndimage.map_coordinates(gy, coords, order=1, mode="constant").reshape(sy.shape)
    mag = np.hypot(vx, vy)
    weight = np.exp(-(gx_off**2 + gy_off**2) * 4.5)[None, :]  # 3 sigma to the rim
    ang = np.mod(np.arctan2(vy, vx), 2 * np.pi)
    pos = ang / (2 * np.pi) * _ORI_BINS
    lo = np.floor(pos).astype(np.int64)
    frac = pos - lo
    k = len(ox)
    rows = np.repeat(np.arange(k), sy.shape[1]) * _ORI_BINS
    wm = (mag * weight).ravel()
    hist = np.bincount(rows + lo.ravel() % _ORI_BINS, wm * (1 - frac.ravel()), k * _ORI_BINS)
    hist += np.bincount(rows + (lo.ravel() + 1) % _ORI_BINS, wm * frac.ravel(), k * _ORI_BINS)
    hist = hist.reshape(k, _ORI_BINS)
    hist = (np.roll(hist, 2, 1) + 4 * np.roll(hist, 1, 1) + 6 * hist
            + 4 * np.roll(hist, -1, 1) + np.roll(hist, -2, 1)) / 16.0
    # every local peak within PEAK_RATIO of the highest one gets its own
    # keypoint, so symmetric corners stay rotation-covariant
    left_all = np.roll(hist, 1, 1)
    right_all = np.roll(hist, -1, 1)
    top = hist.max(axis=1, keepdims=True)
    peaks = (hist > left_all) & (hist >= right_all) & (hist >= PEAK_RATIO * top)
    peaks[np.arange(k), np.argmax(hist, axis=1)] = True
    rk, peak = np.nonzero(peaks)
    left = hist[rk, (peak - 1) % _ORI_BINS]
    right = hist[rk, (peak + 1) % _ORI_BINS]
    centre = hist[rk, peak]
    denom = left - 2 * centre + right
    shift = np.where(np.abs(denom) > 1e-12, 0.5 * (left - right) / np.where(denom == 0, 1, denom), 0.0)
    theta = (peak + 0.5 + shift) * (2 * np.pi / _ORI_BINS)
    return rk, np.mod(theta, 2 * np.pi)


def detect_keypoints(gray: np.ndarray, params: SiftParams = DEFAULT_PARAMS) -> Keypoints:
    image = np.asarray(gray, dtype=np.float32)
    if image.max(initial=0) > 1.0:
        image = image / 255.0
    if image.ndim != 2 or min(image.shape) < 32:
        raise ValueError(f"need a 2-D raster of at least 32x32, got {image.shape}")
    kps, _ = _detect(image, params)
    return kps


def _detect(image: np.ndarray, p: SiftParams):
    gaussians, dogs = _pyramid(image, p)
    grads = [_LazyGradients(stack) for stack in gaussians]
    parts = []
    for o, dog in enumerate(dogs):
        found = _detect_octave(dog, p)
        if found is None:
            continue
        s, y, x, off, resp = found
        ox = x + off[:, 0]
        oy = y + off[:, 1]
        osigma = p.sigma0 * 2.0 ** ((s + off[:, 2]) / p.scales)
        owners, thetas = [], []
        for layer in np.unique(s):
            sel = np.nonzero(s == layer)[0]
            gx, gy = grads[o][layer]
            owner, theta = _orientations(gx, gy, oy[sel], ox[sel], osigma[sel])
            owners.append(sel[owner])
            thetas.append(theta)
        idx = np.concatenate(owners)
        theta = np.concatenate(thetas)
        parts.append((np.full(len(idx), o), s[idx], ox[idx], oy[idx], osigma[idx], theta, resp[idx]))
    if not parts:
        z = np.zeros(0)
        zi = np.zeros(0, np.int64)
        return Keypoints(z, z, z, z, z, zi, zi, z, z, z), grads
    o, s, ox, oy, osigma, theta, resp = (np.concatenate(c) for c in zip(*parts))
    factor = 2.0**o
    h, w = image.shape
    kps = Keypoints(
        x=np.clip(ox * factor, 0, w - 1),
        y=np.clip(oy * factor, 0, h - 1),
        scale=osigma * factor,
        orientation=theta,
        response=resp,
        octave=o.astype(np.int64),
        layer=s.astype(np.int64),
        ox=ox,
        oy=oy,
        osigma=osigma,
    )
    return kps, grads


# --------------------------------------------------------------------------
# description

_DESC_N = 16
_DESC_GRID = (np.arange(_DESC_N) + 0.5) / _DESC_N * 4.0 - 2.0


def clamp_normalize(vectors: np.ndarray, clamp: float = 0.2) -> np.ndarray:
    """Unit-normalize rows, then cap components at ``clamp`` keeping unit norm.

    Capped entries are pinned at ``clamp`` and the remainder rescaled to make
    up the norm; repeated until nothing exceeds the cap. Rows that cannot
    satisfy both (fewer than 1/clamp**2 non-zero entries) come back as NaN.
    """
    v = np.asarray(vectors, dtype=np.float64).copy()
    # pre-scale by the row maximum so tiny entries do not underflow when squared
    peak = np.abs(v).max(axis=1, keepdims=True, initial=0.0)
    v = np.divide(v, peak, out=np.zeros_like(v), where=peak > 0)
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    v = np.divide(v, norms, out=np.zeros_like(v), where=norms > 0)
    pinned = np.zeros(v.shape, dtype=bool)
    for _ in range(v.shape[1] + 1):
        over = (v > clamp) & ~pinned
        if not over.any():
            break
        pinned |= over
        rest2 = np.where(pinned, 0.0, v * v).sum(axis=1)
        budget = 1.0 - pinned.sum(axis=1) * clamp * clamp
        with np.errstate(divide="ignore", invalid="ignore"):
            # entries too small to carry any norm are dropped rather than blown up
            factor = np.where(rest2 > 0, np.sqrt(budget / rest2), 0.0)
            v = np.where(pinned, clamp, v * factor[:, None])
    with np.errstate(invalid="ignore"):
        feasible = np.isfinite(v).all(axis=1) & (np.abs(np.linalg.norm(v, axis=1) - 1.0) <= 1e-9)
        feasible |= ~v.any(axis=1) & ~pinned.any(axis=1)
    v[~feasible] = np.nan
    return v


def _describe_raw(gx, gy, oy, ox, osigma, theta):
    k = len(ox)
    bin_width = 3.0 * osigma
    r, c = np.meshgrid(_DESC_GRID, _DESC_GRID, indexing="ij")
    r = r.ravel()
    c = c.ravel()
    cos_t, sin_t = np.cos(theta)[:, None], np.sin(theta)[:, None]
    bw = bin_width[:, None]
    sx = ox[:, None] + (c * cos_t - r * sin_t) * bw
    sy = oy[:, None] + (c * sin_t + r * cos_t) * bw
    coords = np.stack([sy.ravel(), sx.ravel()])
    vx = ndimage.map_coordinates(gx, coords, order=1, mode="constant").reshape(sx.shape)
    vy = ndimage.map_coordinates(gy, coords, order=1, mode="constant").reshape(sx.shape)
    mag = np.hypot(vx, vy) * np.exp(-(r * r + c * c) / 8.0)[None, :]
    rel = np.mod(np.arctan2(vy, vx) - theta[:, None], 2 * np.pi)

    rb = np.broadcast_to(r + 1.5, mag.shape)
    cb = np.broadcast_to(c + 1.5, mag.shape)
    ob = rel / (2 * np.pi) * 8.0
    r0, c0, o0 = np.floor(rb), np.floor(cb), np.floor(ob)
    fr, fc, fo = rb - r0, cb - c0, ob - o0
    r0, c0, o0 = r0.astype(np.int64), c0.astype(np.int64), o0.astype(np.int64)
    base = np.arange(k)[:, None] * DESCRIPTOR_DIM
    hist = np.zeros(k * DESCRIPTOR_DIM)
    for dr in (0, 1):
        wr = fr if dr else 1 - fr
        rr = r0 + dr
        for dc in (0, 1):
            wc = fc if dc else 1 - fc
            cc = c0 + dc
            ok = (rr >= 0) & (rr < 4) & (cc >= 0) & (cc < 4)
            for do in (0, 1):
                wo = fo if do else 1 - fo
                oo = (o0 + do) % 8
                idx = base + (rr * 4 + cc) * 8 + oo
                wgt = mag * wr * wc * wo
                hist += np.bincount(idx[ok], wgt[ok], k * DESCRIPTOR_DIM)
    return hist.reshape(k, DESCRIPTOR_DIM)


def describe(gray: np.ndarray, keypoints: Keypoints, params: SiftParams = DEFAULT_PARAMS,
             _grads=None, frame=None) -> DescriptorSet:
    if len(keypoints) == 0:
        return DescriptorSet.empty(frame)
    if _grads is None:
        image = np.asarray(gray, dtype=np.float32)
        if image.max(initial=0) > 1.0:
            image = image / 255.0
        gaussians, _ = _pyramid(image, params)
        _grads = [_LazyGradients(stack) for stack in gaussians]
    raw = np.zeros((len(keypoints), DESCRIPTOR_DIM))
    for o in np.unique(keypoints.octave):
        for layer in np.unique(keypoints.layer[keypoints.octave == o]):
            sel = (keypoints.octave == o) & (keypoints.layer == layer)
            gx, gy = _grads[o][layer]
            raw[sel] = _describe_raw(gx, gy, keypoints.oy[sel], keypoints.ox[sel],
                                     keypoints.osigma[sel], keypoints.orientation[sel])
    energy = np.linalg.norm(raw, axis=1)
    desc = clamp_normalize(raw, params.clamp)
    valid = (energy > 1e-7) & np.isfinite(desc).all(axis=1)
    idx = np.nonzero(valid)[0]
    # strongest first; ties resolved by position, scale, then orientation
    order = np.lexsort((keypoints.orientation[idx], keypoints.scale[idx], keypoints.x[idx],
                        keypoints.y[idx], -keypoints.response[idx]))
    idx = idx[order][: params.max_descriptors]
    return DescriptorSet(
        x=keypoints.x[idx],
        y=keypoints.y[idx],
        scale=keypoints.scale[idx],
        orientation=keypoints.orientation[idx],
        response=keypoints.response[idx],
        descriptors=desc[idx].astype(np.float32),
        frame=frame,
    )


def extract(gray: np.ndarray, params: SiftParams = DEFAULT_PARAMS, frame=None) -> DescriptorSet:
    """Detect and describe in one pass, sharing the pyramid."""
    image = np.asarray(gray, dtype=np.float32) / 255.0
    if image.ndim != 2 or min(image.shape) < 32:
        raise ValueError(f"need a 2-D raster of at least 32x32, got {image.shape}")
    kps, grads = _detect(image, params)
    return describe(image, kps, params, _grads=grads, frame=frame)


# --------------------------------------------------------------------------
# debug dump


def write_descriptor_dump(dset, fh: BinaryIO) -> None:
    """``SYNDSC1\\0``, u64 count, u32 dim, 12 zero bytes, then float32 LE rows.

    ``dset`` is a DescriptorSet or a bare descriptor matrix.
    """
    rows = np.ascontiguousarray(getattr(dset, "descriptors", dset), dtype="<f4").reshape(-1, DESCRIPTOR_DIM)
    fh.write(DUMP_MAGIC + struct.pack("<QI12x", rows.shape[0], DESCRIPTOR_DIM))
    fh.write(rows.tobytes())


def read_descriptor_dump(fh: BinaryIO) -> np.ndarray:
    header = fh.read(32)
    if len(header) != 32 or header[:8] != DUMP_MAGIC:
        raise ValueError("not a descriptor dump")
    count, dim = struct.unpack_from("<QI", header, 8)
    data = fh.read(count * dim * 4)
    if len(data) != count * dim * 4:
        raise ValueError("descriptor dump truncated")
    return np.frombuffer(data, dtype="<f4").reshape(count, dim).astype(np.float32)
