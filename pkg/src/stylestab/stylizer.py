"""Stylization engines.

Two routes to a stylized frame: iterative pixel-space optimization of
the image loss (optionally with a temporal term against the previous
output), and a recurrent feedforward network f(p_prev, c_t) trained by
backpropagation through time.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .optim import Adam
from .perceptual import (DEFAULT_CONTENT_TAPS, DEFAULT_STYLE_TAPS, FeatureMap,
                         content_loss, precompute_style_grams, style_loss)
from .flow import bilinear_warp, temporal_loss, FlowField


def residual_block(x, w1, b1, w2, b2, eps=1e-5):
    """conv-instnorm-relu-conv-instnorm plus the identity skip."""
    y = T.conv2d(x, w1, b1, stride=1, pad=(w1.shape[2] - 1) // 2)
    y = T.relu(T.instance_norm(y, eps))
    y = T.conv2d(y, w2, b2, stride=1, pad=(w2.shape[2] - 1) // 2)
    y = T.instance_norm(y, eps)
    return T.add(x, y)


@dataclass(frozen=True)
class StylizerConfig:
    widths: tuple = (16, 32, 48)   # (pre-output, mid, bottleneck)
    n_residual: int = 3
    kernel: int = 3


@dataclass
class LossWeights:
    lambda_c: float = 1.0
    lambda_s: float = 10.0
    lambda_t: float = 100.0

    def __post_init__(self):
        if min(self.lambda_c, self.lambda_s, self.lambda_t) < 0:
            raise ValueError("loss weights must be non-negative")


class RecurrentStylizer:
    """f(p_prev, c_t): 6-channel input, two stride-2 downs, residual
    blocks, two nearest-upsample+conv stages, sigmoid output head."""

    def __init__(self, config=StylizerConfig(), seed=0):
        self.config = config
        w0, w1, w2 = config.widths
        k = config.kernel
        rng = np.random.default_rng(seed)
        self.params = {}

        def conv(name, c_in, c_out):
            std = np.sqrt(2.0 / (c_in * k * k))
            self.params[name + ".w"] = Tensor(rng.normal(0.0, std, (c_out, c_in, k, k)),
                                              requires_grad=True)
            self.params[name + ".b"] = Tensor(np.zeros(c_out), requires_grad=True)

        conv("down1", 6, w1)
        conv("down2", w1, w2)
        for i in range(config.n_residual):
            conv(f"res{i}.a", w2, w2)
            conv(f"res{i}.b", w2, w2)
        conv("up1", w2, w1)
        conv("up2", w1, w0)
        conv("out", w0, 3)

    def parameters(self):
        return [self.params[k] for k in sorted(self.params)]

    def state_dict(self):
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state):
        if set(state) != set(self.params):
            missing = set(self.params) ^ set(state)
            raise KeyError(f"checkpoint key mismatch: {sorted(missing)}")
        for k, v in state.items():
            if v.shape != self.params[k].shape:
                raise ValueError(f"checkpoint shape mismatch at {k}")
            self.params[k].data = np.asarray(v, dtype=np.float64).copy()

    def copy(self):
        clone = RecurrentStylizer(self.config, seed=0)
        clone.load_state_dict(self.state_dict())
        return clone

    def _conv(self, name, x, stride=1):
        k = self.config.kernel
        return T.conv2d(x, self.params[name + ".w"], self.params[name + ".b"],
                        stride=stride, pad=(k - 1) // 2)

    def forward_step(self, p_prev, c_t):
        """One recurrence step; both inputs [3,H,W], H and W divisible by 4."""
        p_prev = p_prev if isinstance(p_prev, Tensor) else Tensor(p_prev)
        c_t = c_t if isinstance(c_t, Tensor) else Tensor(c_t)
        if p_prev.shape != c_t.shape:
            raise ValueError("forward_step: input shapes differ")
        _, h, w = c_t.shape
        if h % 4 or w % 4:
            raise ValueError("forward_step: H and W must be divisible by 4")
        x = T.concat_channels(p_prev, c_t)
        x = T.relu(T.instance_norm(self._conv("down1", x, stride=2)))
        x = T.relu(T.instance_norm(self._conv("down2", x, stride=2)))
        for i in range(self.config.n_residual):
            x = residual_block(x,
                               self.params[f"res{i}.a.w"], self.params[f"res{i}.a.b"],
                               self.params[f"res{i}.b.w"], self.params[f"res{i}.b.b"])
        x = T.relu(T.instance_norm(self._conv("up1", T.upsample_nearest2x(x))))
        x = T.relu(T.instance_norm(self._conv("up2", T.upsample_nearest2x(x))))
        return T.sigmoid(self._conv("out", x))


@dataclass
class TrainConfig:
    phase: str = "image-pretrain"      # or "video-finetune"
    epochs: int = 10
    steps_per_epoch: int = 20
    bptt_steps: int = 4
    lr: float = 1e-3
    flips: bool = True
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    content_taps: tuple = DEFAULT_CONTENT_TAPS
    style_taps: tuple = DEFAULT_STYLE_TAPS

    def __post_init__(self):
        if self.phase not in ("image-pretrain", "video-finetune"):
            raise ValueError(f"unknown training phase {self.phase!r}")
        if self.phase == "video-finetune" and self.bptt_steps < 2:
            raise ValueError("video-finetune requires bptt_steps >= 2")


def _frame_losses(net, p, c_t, style_grams, wts, content_taps, style_taps):
    total = Tensor(0.0)
    if wts.lambda_c > 0:
        p_c = net.extract(p, content_taps)
        c_c = [FeatureMap(f.layer, f.tensor.detach()) for f in net.extract(Tensor(c_t), content_taps)]
        total = T.add(total, T.scale(content_loss(p_c, c_c), wts.lambda_c))
    if wts.lambda_s > 0:
        p_s = net.extract(p, style_taps)
        total = T.add(total, T.scale(style_loss(p_s, style_grams), wts.lambda_s))
    return total


def rollout_loss(model, frames, net, style_grams, wts,
                 flows=None, masks=None,
                 content_taps=DEFAULT_CONTENT_TAPS, style_taps=DEFAULT_STYLE_TAPS):
    """Unrolled loss over a window of frames, differentiable through the
    recurrence. p_0 is the first content frame; the temporal term applies
    from the second step on and needs flows/masks when its weight is > 0.
    """
    if len(frames) < 1:
        raise ValueError("rollout_loss: need at least one frame")
    need_temporal = wts.lambda_t > 0 and len(frames) > 1
    if need_temporal and (flows is None or masks is None):
        raise ValueError("rollout_loss: temporal term requires flows and masks")
    p_prev = Tensor(frames[0])
    total = Tensor(0.0)
    for t, c_t in enumerate(frames):
        p = model.forward_step(p_prev, c_t)
        total = T.add(total, _frame_losses(net, p, c_t, style_grams, wts,
                                           content_taps, style_taps))
        if t >= 1 and need_temporal:
            lt = temporal_loss(p_prev, p, flows[t - 1], masks[t - 1])
            total = T.add(total, T.scale(lt, wts.lambda_t))
        p_prev = p
    return total


def _flip_frame(fr, horizontal, vertical):
    out = fr
    if horizontal:
        out = out[:, :, ::-1]
    if vertical:
        out = out[:, ::-1, :]
    return np.ascontiguousarray(out)


def _flip_flow_mask(flow, mask, horizontal, vertical):
    u, v, m = flow.u, flow.v, mask
    if horizontal:
        u, v, m = -u[:, ::-1], v[:, ::-1], m[:, ::-1]
    if vertical:
        u, v, m = u[::-1, :], -v[::-1, :], m[::-1, :]
    return FlowField(np.ascontiguousarray(u), np.ascontiguousarray(v)), np.ascontiguousarray(m)


def train(model, dataset, config, net, style_image):
    """Train the stylizer on a dataset, returning per-epoch mean losses.

    image-pretrain: dataset is a list of content frames; each step runs a
    single forward with p_prev = c and no temporal term.
    video-finetune: dataset is a list of VideoSequence; each step unrolls
    a bptt_steps window with all three losses.
    """
    rng = np.random.default_rng(config.seed)
    wts = config.weights
    if config.phase == "image-pretrain":
        wts = replace(wts, lambda_t=0.0)
    style_grams = precompute_style_grams(net, Tensor(style_image), config.style_taps)
    opt = Adam(model.parameters(), lr=config.lr)
    history = []
    for _ in range(config.epochs):
        epoch_losses = []
        for _ in range(config.steps_per_epoch):
            fh = config.flips and bool(rng.integers(2))
            fv = config.flips and bool(rng.integers(2))
            if config.phase == "image-pretrain":
                frame = dataset[rng.integers(len(dataset))]
                frames = [_flip_frame(frame, fh, fv)]
                flows = masks = None
            else:
                seq = dataset[rng.integers(len(dataset))]
                n = config.bptt_steps
                start = int(rng.integers(max(1, len(seq) - n + 1)))
                window = seq.frames[start:start + n]
                frames = [_flip_frame(f, fh, fv) for f in window]
                fm = [_flip_flow_mask(seq.flows[i], seq.masks[i], fh, fv)
                      for i in range(start, start + len(window) - 1)]
                flows = [f for f, _ in fm]
                masks = [m for _, m in fm]
            opt.zero_grad()
            loss = rollout_loss(model, frames, net, style_grams, wts,
                                flows=flows, masks=masks,
                                content_taps=config.content_taps,
                                style_taps=config.style_taps)
            value = loss.item()
            if not np.isfinite(value):
                raise FloatingPointError("training loss became non-finite")
            loss.backward()
            opt.step()
            epoch_losses.append(value)
        history.append(float(np.mean(epoch_losses)))
    return history


def stylize_video(model, sequence):
    """Recurrent inference over a sequence; consumes no flows or masks."""
    p_prev = Tensor(sequence.frames[0])
    out = []
    for c_t in sequence.frames:
        p = model.forward_step(p_prev, Tensor(c_t))
        out.append(p.data.copy())
        p_prev = Tensor(p.data)
    return out


def stylize_frames_independent(model, sequence):
    """Real-time-baseline protocol: every frame stylized with p_prev = c_t."""
    return [model.forward_step(Tensor(c), Tensor(c)).data.copy() for c in sequence.frames]


# ---- optimization-based engines ------------------------------------------

def stylize_image_optim(net, content, style_grams, lambda_c=1.0, lambda_s=10.0,
                        iters=250, lr=0.02, init=None,
                        content_taps=DEFAULT_CONTENT_TAPS, style_taps=DEFAULT_STYLE_TAPS,
                        extra_loss=None):
    """Adam on pixels from the content image, minimizing the image loss.

    extra_loss(p_tensor) -> Tensor lets the video variant add a temporal
    term. Returns (image clamped to [0,1], loss history).
    """
    if iters < 1:
        raise ValueError("stylize_image_optim: iters must be >= 1")
    wts = LossWeights(lambda_c, lambda_s, 0.0)
    start = content if init is None else init
    p = Tensor(np.array(start, dtype=np.float64), requires_grad=True)
    opt = Adam([p], lr=lr)
    history = []
    for _ in range(iters):
        opt.zero_grad()
        loss = _frame_losses(net, p, content, style_grams, wts, content_taps, style_taps)
        if extra_loss is not None:
            loss = T.add(loss, extra_loss(p))
        history.append(loss.item())
        loss.backward()
        opt.step()
    return np.clip(p.data, 0.0, 1.0), history


def stylize_video_optim(net, sequence, style_grams, lambda_c=1.0, lambda_s=10.0,
                        lambda_t=100.0, iters=250, lr=0.02,
                        content_taps=DEFAULT_CONTENT_TAPS, style_taps=DEFAULT_STYLE_TAPS):
    """Single-pass optimization baseline: frame 1 from scratch, later
    frames warm-started from the (inverse-)warped previous output and
    pulled toward it by the temporal loss."""
    if lambda_t > 0 and (sequence.flows is None or sequence.masks is None):
        raise ValueError("stylize_video_optim: flows and masks required")
    out = []
    first, _ = stylize_image_optim(net, sequence.frames[0], style_grams, lambda_c,
                                   lambda_s, iters, lr,
                                   content_taps=content_taps, style_taps=style_taps)
    out.append(first)
    for t in range(1, len(sequence)):
        prev = out[-1]
        if lambda_t > 0:
            flow, mask = sequence.flows[t - 1], sequence.masks[t - 1]
            back = FlowField(-flow.u, -flow.v)
            init = bilinear_warp(Tensor(prev), back).data
            prev_const = prev.copy()

            def extra(p, flow=flow, mask=mask, prev_const=prev_const):
                return T.scale(temporal_loss(Tensor(prev_const), p, flow, mask), lambda_t)
        else:
            init, extra = None, None
        frame, _ = stylize_image_optim(net, sequence.frames[t], style_grams, lambda_c,
                                       lambda_s, iters, lr, init=init,
                                       content_taps=content_taps, style_taps=style_taps,
                                       extra_loss=extra)
        out.append(frame)
    return out
