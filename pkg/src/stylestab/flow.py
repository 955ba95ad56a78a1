"""Optical-flow data model, differentiable warping, temporal loss, and
synthetic ground-truth scene generation.

Flows live on the grid of the earlier frame: warped(x, y) samples the
later frame at (x + u, y + v). Samples outside the image clamp to the
border; gradients flow into the frame being warped, never into the flow.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from . import tensor as T
from .tensor import Tensor


@dataclass
class FlowField:
    u: np.ndarray  # horizontal displacement, H x W
    v: np.ndarray  # vertical displacement, H x W

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.u.shape != self.v.shape or self.u.ndim != 2:
            raise ValueError("FlowField: u and v must be equal-shape 2-d arrays")
        h, w = self.u.shape
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v))):
            raise ValueError("FlowField: non-finite displacement")
        if np.abs(self.u).max(initial=0.0) >= w or np.abs(self.v).max(initial=0.0) >= h:
            raise ValueError("FlowField: displacement exceeds frame size")

    @property
    def shape(self):
        return self.u.shape


def clamp_mask(m):
    return np.clip(np.asarray(m, dtype=np.float64), 0.0, 1.0)


@dataclass
class VideoSequence:
    frames: list                      # T arrays of shape (3, H, W), values in [0,1]
    flows: Optional[list] = None      # T-1 FlowFields (frame t-1 -> t)
    masks: Optional[list] = None      # T-1 occlusion masks, H x W in [0,1]
    backward_flows: Optional[list] = None
    fg_masks: Optional[list] = None   # T foreground masks, H x W in {0,1}

    def __post_init__(self):
        t = len(self.frames)
        shape = self.frames[0].shape
        for f in self.frames:
            if f.shape != shape:
                raise ValueError("VideoSequence: frame shapes differ")
        for name in ("flows", "masks", "backward_flows"):
            seq = getattr(self, name)
            if seq is not None and len(seq) != t - 1:
                raise ValueError(f"VideoSequence: expected {t - 1} {name}, got {len(seq)}")

    def __len__(self):
        return len(self.frames)


def _warp_indices(flow, h, w):
    """Flat gather indices and bilinear weights for a warp, as (4,N) arrays."""
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    sx = np.clip(xs + flow.u, 0.0, w - 1.0).reshape(-1)
    sy = np.clip(ys + flow.v, 0.0, h - 1.0).reshape(-1)
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = sx - x0
    fy = sy - y0
    idx = np.stack([y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1])
    wts = np.stack([(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx])
    return idx, wts


def bilinear_warp(frame, flow):
    """Warp a [C,H,W] frame by a flow field with bilinear sampling."""
    frame = frame if isinstance(frame, Tensor) else Tensor(frame)
    c, h, w = frame.shape
    if flow.shape != (h, w):
        raise ValueError(f"bilinear_warp: flow shape {flow.shape} != frame spatial {(h, w)}")
    idx, wts = _warp_indices(flow, h, w)
    out = T.gather_pixels(frame, idx, wts)
    return T.reshape(out, (c, h, w))


def temporal_loss(p_prev, p_t, flow, mask):
    """Masked squared difference between p_prev and the warped p_t, / (H*W)."""
    p_prev = p_prev if isinstance(p_prev, Tensor) else Tensor(p_prev)
    p_t = p_t if isinstance(p_t, Tensor) else Tensor(p_t)
    c, h, w = p_prev.shape
    if p_t.shape != (c, h, w):
        raise ValueError("temporal_loss: frame shapes differ")
    m = clamp_mask(mask)
    if m.shape != (h, w):
        raise ValueError("temporal_loss: mask shape mismatch")
    warped = bilinear_warp(p_t, flow)
    mt = Tensor(np.broadcast_to(m, (c, h, w)).copy())
    diff = T.sub(T.mul(mt, p_prev), T.mul(mt, warped))
    return T.scale(T.sum_all(T.square(diff)), 1.0 / (h * w))


# ---- synthetic scenes ----------------------------------------------------

def smooth_texture(rng, h, w, channels=3, blur=2.0, lo=0.1, hi=0.9):
    """Band-limited random texture in [lo, hi]."""
    raw = rng.random((channels, h, w))
    sm = np.stack([ndimage.gaussian_filter(raw[c], blur, mode="wrap") for c in range(channels)])
    sm -= sm.min()
    rng_span = sm.max() - sm.min()
    if rng_span > 0:
        sm /= rng_span
    return lo + (hi - lo) * sm


def synthetic_scene(kind, params=None, T_frames=8, h=32, w=32, seed=0):
    """Generate a VideoSequence with ground-truth flows and occlusion masks.

    kinds:
      static-noise     params: sigma (noise amplitude, default 0.01)
      global-translate params: dx, dy (integer pixels per frame, default 1, 0)
      moving-square    params: dx, dy, square (size, default 2, 1, 10)
    """
    params = dict(params or {})
    if T_frames < 2:
        raise ValueError("synthetic_scene: need at least 2 frames")
    rng = np.random.default_rng(seed)
    if kind == "static-noise":
        return _static_noise(rng, params, T_frames, h, w)
    if kind == "global-translate":
        return _global_translate(rng, params, T_frames, h, w)
    if kind == "moving-square":
        return _moving_square(rng, params, T_frames, h, w)
    raise ValueError(f"unknown scene kind {kind!r}")


def _zero_flow(h, w):
    return FlowField(np.zeros((h, w)), np.zeros((h, w)))


def _static_noise(rng, params, t_frames, h, w):
    sigma = float(params.pop("sigma", 0.01))
    _reject_extra(params)
    base = smooth_texture(rng, h, w)
    frames = [np.clip(base + sigma * rng.standard_normal(base.shape), 0.0, 1.0)
              for _ in range(t_frames)]
    flows = [_zero_flow(h, w) for _ in range(t_frames - 1)]
    masks = [np.ones((h, w)) for _ in range(t_frames - 1)]
    fg = [np.zeros((h, w)) for _ in range(t_frames)]
    return VideoSequence(frames, flows, masks, fg_masks=fg)


def _global_translate(rng, params, t_frames, h, w):
    dx = int(params.pop("dx", 1))
    dy = int(params.pop("dy", 0))
    _reject_extra(params)
    if abs(dx) * (t_frames - 1) >= w or abs(dy) * (t_frames - 1) >= h:
        raise ValueError("global-translate: motion larger than frame")
    base = smooth_texture(rng, h, w)
    # content moves by (+dx, +dy) per frame; wrap keeps texture consistent
    frames = [np.roll(base, shift=(t * dy, t * dx), axis=(1, 2)) for t in range(t_frames)]
    u = np.full((h, w), float(dx))
    v = np.full((h, w), float(dy))
    xs = np.arange(w)[None, :] + dx
    ys = np.arange(h)[:, None] + dy
    valid = (xs >= 0) & (xs <= w - 1) & np.broadcast_to((ys >= 0) & (ys <= h - 1), (h, w))
    mask = valid.astype(np.float64)
    flows = [FlowField(u.copy(), v.copy()) for _ in range(t_frames - 1)]
    masks = [mask.copy() for _ in range(t_frames - 1)]
    fg = [np.zeros((h, w)) for _ in range(t_frames)]
    return VideoSequence(frames, flows, masks, fg_masks=fg)


def _square_region(h, w, x, y, size):
    r = np.zeros((h, w), dtype=bool)
    r[max(y, 0):min(y + size, h), max(x, 0):min(x + size, w)] = True
    return r


def _moving_square(rng, params, t_frames, h, w):
    dx = int(params.pop("dx", 2))
    dy = int(params.pop("dy", 1))
    size = int(params.pop("square", max(4, min(h, w) // 3)))
    _reject_extra(params)
    x0 = max(1, w // 6)
    y0 = max(1, h // 6)
    if x0 + dx * (t_frames - 1) + size >= w or y0 + dy * (t_frames - 1) + size >= h \
            or x0 + dx * (t_frames - 1) < 0 or y0 + dy * (t_frames - 1) < 0:
        raise ValueError("moving-square: motion larger than frame")
    bg = smooth_texture(rng, h, w)
    sq = smooth_texture(rng, size, size, blur=1.0)

    frames, regions = [], []
    for t in range(t_frames):
        x, y = x0 + t * dx, y0 + t * dy
        fr = bg.copy()
        fr[:, y:y + size, x:x + size] = sq
        frames.append(fr)
        regions.append(_square_region(h, w, x, y, size))

    flows, masks, bflows = [], [], []
    for t in range(1, t_frames):
        prev_r, cur_r = regions[t - 1], regions[t]
        u = np.where(prev_r, float(dx), 0.0)
        v = np.where(prev_r, float(dy), 0.0)
        bu = np.where(cur_r, float(-dx), 0.0)
        bv = np.where(cur_r, float(-dy), 0.0)
        covered = cur_r & ~prev_r          # background occluded at t
        uncovered = prev_r & ~cur_r        # background disoccluded at t
        boundary = _boundary_ring(prev_r) | _boundary_ring(cur_r)
        bad = ndimage.binary_dilation(covered | uncovered | boundary, iterations=1)
        masks.append((~bad).astype(np.float64))
        flows.append(FlowField(u, v))
        bflows.append(FlowField(bu, bv))
    fg = [r.astype(np.float64) for r in regions]
    return VideoSequence(frames, flows, masks, backward_flows=bflows, fg_masks=fg)


def _boundary_ring(region):
    return region ^ ndimage.binary_erosion(region)


def _reject_extra(params):
    if params:
        raise ValueError(f"unknown scene parameter(s): {sorted(params)}")


def sample_field(field_arr, xs, ys):
    """Bilinear sample of a 2-d array at float coords (clamped to border)."""
    h, w = field_arr.shape
    sx = np.clip(xs, 0.0, w - 1.0)
    sy = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx, fy = sx - x0, sy - y0
    return ((1 - fy) * (1 - fx) * field_arr[y0, x0] + (1 - fy) * fx * field_arr[y0, x1]
            + fy * (1 - fx) * field_arr[y1, x0] + fy * fx * field_arr[y1, x1])


def occlusion_from_flows(forward, backward, theta=0.1):
    """Forward-backward consistency occlusion mask.

    A pixel is marked occluded (mask 0) when the forward flow and the
    backward flow sampled at the forward target disagree beyond a
    tolerance proportional to their magnitudes.
    """
    if theta <= 0:
        raise ValueError("occlusion_from_flows: theta must be positive")
    h, w = forward.shape
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    bu = sample_field(backward.u, xs + forward.u, ys + forward.v)
    bv = sample_field(backward.v, xs + forward.u, ys + forward.v)
    mismatch = (forward.u + bu) ** 2 + (forward.v + bv) ** 2
    mag = forward.u ** 2 + forward.v ** 2 + bu ** 2 + bv ** 2
    return np.where(mismatch > theta * mag + theta, 0.0, 1.0)

