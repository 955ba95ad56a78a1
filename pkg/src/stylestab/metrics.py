"""Quantitative evaluation: PSNR/SSIM, the instability metric, the
trace-instability study, controlled-distortion curves, the matched-patch
stability protocol, and wall-clock timing."""

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, stats

from .perceptual import DEFAULT_STYLE_TAPS
from .gram_geometry import trace_report
from .tensor import Tensor


def psnr(a, b, peak=1.0):
    """10*log10(peak^2 / MSE), +inf when the images are identical."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("psnr: shape mismatch")
    if peak <= 0:
        raise ValueError("psnr: peak must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_window(size=11, sigma=1.5):
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


_SSIM_WINDOW = _gaussian_window()


def ssim(a, b, peak=1.0, k1=0.01, k2=0.03):
    """Mean local SSIM, 11x11 Gaussian window sigma=1.5, channel-averaged.

    Only fully interior windows contribute (margin of 5 pixels cropped).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("ssim: shape mismatch")
    if a.ndim == 2:
        a, b = a[None], b[None]
    h, w = a.shape[-2:]
    if min(h, w) < 11:
        raise ValueError("ssim: image smaller than the 11x11 window")
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    win = _SSIM_WINDOW
    m = 5  # window radius to crop

    def filt(x):
        return ndimage.correlate(x, win, mode="nearest")[m:h - m, m:w - m]

    scores = []
    for ch in range(a.shape[0]):
        mu_a = filt(a[ch])
        mu_b = filt(b[ch])
        var_a = filt(a[ch] * a[ch]) - mu_a ** 2
        var_b = filt(b[ch] * b[ch]) - mu_b ** 2
        cov = filt(a[ch] * b[ch]) - mu_a * mu_b
        s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)
             / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)))
        scores.append(s.mean())
    return float(np.mean(scores))


def instability(frames):
    """Average MSE between adjacent frames — the flicker measure."""
    if len(frames) < 2:
        raise ValueError("instability: need at least 2 frames")
    vals = [float(np.mean((np.asarray(a) - np.asarray(b)) ** 2))
            for a, b in zip(frames[:-1], frames[1:])]
    return float(np.mean(vals))


# ---- trace vs instability ------------------------------------------------

def trace_instability_study(style_images, stylize_fns, static_scenes, net,
                            taps=DEFAULT_STYLE_TAPS):
    """Per-style Gram trace vs flicker on static scenes.

    stylize_fns[i](scene) must return the stylized frame list for style i.
    Returns (rows, correlations) where rows have one entry per
    (style, tap) and correlations map tap -> Spearman rho (None when the
    ranks are degenerate).
    """
    if len(style_images) != len(stylize_fns):
        raise ValueError("one stylizer per style required")
    rows = []
    per_style_instab = []
    for i, (style, fn) in enumerate(zip(style_images, stylize_fns)):
        traces = {r["tap"]: r["trace"] for r in trace_report(Tensor(style), net, taps)}
        scene_instab = [instability(fn(scene)) for scene in static_scenes]
        mean_i = float(np.mean(scene_instab))
        per_style_instab.append(mean_i)
        for tap in taps:
            rows.append({"style": i, "tap": tap, "trace": traces[tap],
                         "instability": mean_i})
    correlations = {}
    for tap in taps:
        tr = [r["trace"] for r in rows if r["tap"] == tap]
        if len(set(tr)) < 2 or len(set(per_style_instab)) < 2:
            correlations[tap] = None  # degenerate: no rank variance
        else:
            rho, _ = stats.spearmanr(tr, per_style_instab)
            correlations[tap] = float(rho)
    return rows, correlations


# ---- controlled distortions ----------------------------------------------

def _blur(img, sigma):
    return np.stack([ndimage.gaussian_filter(c, sigma, mode="nearest") for c in img])


def distort(patch, kind, magnitude):
    """Apply one controlled distortion to a [3,H,W] patch in [0,1].

    shift: magnitude is an integer pixel offset; the distorted patch is
    the window of the same source shifted horizontally (callers hand in a
    source wider than the analysis window).
    blur-sharpen: positive magnitude = Gaussian blur sigma, negative =
    unsharp-mask amount |magnitude|.
    """
    if kind == "shift":
        m = int(magnitude)
        w = patch.shape[2]
        if m < 0 or m >= w:
            raise ValueError("shift magnitude exceeds patch size")
        return np.ascontiguousarray(np.roll(patch, -m, axis=2))
    if kind == "blur-sharpen":
        if magnitude == 0:
            return patch.copy()
        if magnitude > 0:
            return np.clip(_blur(patch, float(magnitude)), 0.0, 1.0)
        amount = -float(magnitude)
        return np.clip(patch + amount * (patch - _blur(patch, 1.0)), 0.0, 1.0)
    raise ValueError(f"unknown distortion kind {kind!r}")


def distortion_curves(patch, stylize_fn, kind, magnitudes, window=None):
    """Input-vs-output SSIM decay under controlled distortions.

    patch: [3,H,W] source; for shifts it must be wider than the analysis
    window by max(magnitudes). stylize_fn maps an image to its stylized
    version (the caller fixes p_prev = the patch itself for network
    stylizers). Returns dict of magnitude, input_ssim, output_ssim lists.
    """
    patch = np.asarray(patch, dtype=np.float64)
    h, w = patch.shape[1:]
    if kind == "shift":
        mmax = int(max(magnitudes))
        if window is None:
            window = (w - mmax) // 4 * 4
        if window < 12 or window > w - mmax:
            raise ValueError("shift magnitude exceeds usable patch width")
        crop = lambda img: img[:, :h // 4 * 4, :window]
    else:
        window = window or w // 4 * 4
        crop = lambda img: img[:, :h // 4 * 4, :window]

    base = crop(patch)
    stylized_base = stylize_fn(base)
    input_ssim, output_ssim = [], []
    for m in magnitudes:
        d = crop(distort(patch, kind, m))
        in_s = 1.0 if m == 0 else ssim(base, d)
        out_s = 1.0 if m == 0 else ssim(stylized_base, stylize_fn(d))
        input_ssim.append(in_s)
        output_ssim.append(out_s)
    return {"magnitude": list(magnitudes), "input_ssim": input_ssim,
            "output_ssim": output_ssim}


# ---- matched-patch stability ---------------------------------------------

@dataclass
class StabilityScore:
    mean_psnr: float
    mean_ssim: float
    n_pairs: int
    offsets: list


def _background_positions(fg, patch):
    """Top-left corners whose patch window avoids the foreground mask."""
    h, w = fg.shape
    ok = []
    for y in range(0, h - patch + 1):
        for x in range(0, w - patch + 1):
            if fg[y:y + patch, x:x + patch].sum() == 0:
                ok.append((y, x))
    return ok


def patch_stability(sequence, stylize_fn, patch=32, search=8, seed=0, skip_pairs=0):
    """Matched background patches between adjacent frames, scored on the
    stylized video.

    For each adjacent pair a seeded random background patch is chosen in
    frame t; frame t+1 is searched within +/-search pixels for the offset
    maximizing raw-frame PSNR; PSNR/SSIM of the stylized patches at the
    matched locations are averaged over all pairs. skip_pairs drops the
    first adjacent pairs (recurrent stylizers need a short warm-up).
    """
    if sequence.fg_masks is None:
        raise ValueError("patch_stability: foreground masks required")
    h, w = sequence.frames[0].shape[1:]
    if patch > h or patch > w:
        raise ValueError("patch_stability: frames smaller than patch")
    rng = np.random.default_rng(seed)
    stylized = stylize_fn(sequence)
    psnrs, ssims, offsets = [], [], []
    for t in range(skip_pairs, len(sequence) - 1):
        cand = _background_positions(sequence.fg_masks[t], patch)
        if not cand:
            raise ValueError(f"patch_stability: no background patch in frame {t}")
        y0, x0 = cand[rng.integers(len(cand))]
        ref = sequence.frames[t][:, y0:y0 + patch, x0:x0 + patch]
        best, best_off = -math.inf, (0, 0)
        for dy in range(-search, search + 1):
            for dx in range(-search, search + 1):
                y1, x1 = y0 + dy, x0 + dx
                if y1 < 0 or x1 < 0 or y1 + patch > h or x1 + patch > w:
                    continue
                cand_patch = sequence.frames[t + 1][:, y1:y1 + patch, x1:x1 + patch]
                score = psnr(ref, cand_patch)
                if score > best:
                    best, best_off = score, (dy, dx)
        dy, dx = best_off
        sp0 = stylized[t][:, y0:y0 + patch, x0:x0 + patch]
        sp1 = stylized[t + 1][:, y0 + dy:y0 + dy + patch, x0 + dx:x0 + dx + patch]
        psnrs.append(psnr(sp0, sp1))
        ssims.append(ssim(sp0, sp1))
        offsets.append(best_off)
    return StabilityScore(float(np.mean(psnrs)), float(np.mean(ssims)),
                          len(psnrs), offsets)


# ---- timing --------------------------------------------------------------

def timing(feedforward_fn, optim_fn, frames, repeats=5):
    """Median seconds per frame for both engines plus the speed ratio.

    One warm-up call per engine is excluded from the medians; outputs of
    repeated runs on the same frame must be identical (checked here).
    """
    if repeats < 3:
        raise ValueError("timing: repeats must be >= 3")
    frames = list(frames)
    feedforward_fn(frames[0])
    ff_times = []
    for fr in frames[:repeats]:
        t0 = time.perf_counter()
        out1 = feedforward_fn(fr)
        ff_times.append(time.perf_counter() - t0)
    out2 = feedforward_fn(frames[0])
    if not np.array_equal(feedforward_fn(frames[0]), out2):
        raise RuntimeError("timing: feedforward output not deterministic")
    optim_fn(frames[0])
    opt_times = []
    for fr in frames[:repeats]:
        t0 = time.perf_counter()
        optim_fn(fr)
        opt_times.append(time.perf_counter() - t0)
    ff = float(np.median(ff_times))
    op = float(np.median(opt_times))
    return {"feedforward_s": ff, "optim_s": op,
            "ratio": op / ff if ff > 0 else math.inf}
