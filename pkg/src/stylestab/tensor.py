"""Minimal dense-tensor engine with reverse-mode differentiation.

Everything is float64 and numpy-backed. A Tensor either is a leaf
(possibly trainable) or records the closure needed to push gradients to
its parents. Any op producing a NaN/Inf raises immediately.
"""

import numpy as np


class GradientError(RuntimeError):
    pass


def _as_array(data):
    arr = np.asarray(data, dtype=np.float64)
    return arr


def _check_finite(arr, op_name):
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values produced by '{op_name}'")


class Tensor:
    """n-d float64 array, optionally a node in an autodiff graph."""

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, _op="leaf"):
        self.data = _as_array(data)
        _check_finite(self.data, _op)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = tuple(_parents)
        self._backward = _backward
        self._op = _op
        self._visits = 0  # instrumentation: backward() increments once per node

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data.copy(), requires_grad=False)

    # ---- graph construction helpers -------------------------------------

    @staticmethod
    def _result(data, parents, backward, op):
        requires = any(p.requires_grad for p in parents)
        if not requires:
            return Tensor(data, _op=op)
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward, _op=op)

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # ---- arithmetic ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return scale(sum_all(self), 1.0 / self.size)

    def reshape(self, *shape):
        return reshape(self, shape)

    # ---- backward --------------------------------------------------------

    def backward(self):
        """Reverse-mode sweep from a scalar loss to every reachable leaf."""
        if self.size != 1:
            raise GradientError(f"backward requires a scalar loss, got shape {self.shape}")
        if getattr(self, "_backward_done", False):
            raise GradientError("backward already called on this graph; rebuild it before differentiating again")

        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            node._visits += 1
            if node._backward is not None:
                node._backward(node.grad)
            node._backward_done = True
        self._backward_done = True


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# ---- elementwise ops -----------------------------------------------------

def add(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
    out_data = a.data + b.data
    _check_finite(out_data, "add")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    return Tensor._result(out_data, (a, b), backward, "add")


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.shape != b.shape:
        raise ValueError(f"sub: shape mismatch {a.shape} vs {b.shape}")
    out_data = a.data - b.data
    _check_finite(out_data, "sub")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(-g)

    return Tensor._result(out_data, (a, b), backward, "sub")


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.shape != b.shape:
        raise ValueError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    out_data = a.data * b.data
    _check_finite(out_data, "mul")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)

    return Tensor._result(out_data, (a, b), backward, "mul")


def scale(x, alpha):
    x = _wrap(x)
    alpha = float(alpha)
    out_data = x.data * alpha
    _check_finite(out_data, "scale")

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * alpha)

    return Tensor._result(out_data, (x,), backward, "scale")


def square(x):
    x = _wrap(x)
    out_data = x.data * x.data
    _check_finite(out_data, "square")

    def backward(g):
        if x.requires_grad:
            x._accumulate(2.0 * g * x.data)

    return Tensor._result(out_data, (x,), backward, "square")


def relu(x):
    x = _wrap(x)
    out_data = np.maximum(x.data, 0.0)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * (x.data > 0.0))

    return Tensor._result(out_data, (x,), backward, "relu")


def sigmoid(x):
    x = _wrap(x)
    out_data = 1.0 / (1.0 + np.exp(-x.data))
    _check_finite(out_data, "sigmoid")

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * out_data * (1.0 - out_data))

    return Tensor._result(out_data, (x,), backward, "sigmoid")


def sum_all(x):
    x = _wrap(x)
    out_data = np.array(x.data.sum())
    _check_finite(out_data, "sum")

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.broadcast_to(g, x.shape).copy())

    return Tensor._result(out_data, (x,), backward, "sum")


def reshape(x, shape):
    x = _wrap(x)
    out_data = x.data.reshape(shape)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g.reshape(x.shape))

    return Tensor._result(out_data, (x,), backward, "reshape")


def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    out_data = a.data @ b.data
    _check_finite(out_data, "matmul")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return Tensor._result(out_data, (a, b), backward, "matmul")


def transpose(x):
    x = _wrap(x)
    out_data = x.data.T

    def backward(g):
        if x.requires_grad:
            x._accumulate(g.T)

    return Tensor._result(out_data, (x,), backward, "transpose")


def concat_channels(a, b):
    """Stack two [C,H,W] tensors along the channel axis."""
    a, b = _wrap(a), _wrap(b)
    if a.shape[1:] != b.shape[1:]:
        raise ValueError(f"concat_channels: spatial mismatch {a.shape} vs {b.shape}")
    out_data = np.concatenate([a.data, b.data], axis=0)
    ca = a.shape[0]

    def backward(g):
        if a.requires_grad:
            a._accumulate(g[:ca])
        if b.requires_grad:
            b._accumulate(g[ca:])

    return Tensor._result(out_data, (a, b), backward, "concat_channels")


def upsample_nearest2x(x):
    """Nearest-neighbor 2x spatial upsampling of a [C,H,W] tensor."""
    x = _wrap(x)
    out_data = np.repeat(np.repeat(x.data, 2, axis=-2), 2, axis=-1)

    def backward(g):
        if x.requires_grad:
            c, h, w = x.shape
            gsum = g.reshape(c, h, 2, w, 2).sum(axis=(2, 4))
            x._accumulate(gsum)

    return Tensor._result(out_data, (x,), backward, "upsample_nearest2x")


# ---- conv2d --------------------------------------------------------------

_col_index_cache = {}


def _col_indices(c_in, h_pad, w_pad, k, stride, h_out, w_out):
    """Flat indices into a padded [C,Hp,Wp] image selecting every conv patch.

    Returns an int array of shape (C*k*k, Hout*Wout). Cached per geometry.
    """
    key = (c_in, h_pad, w_pad, k, stride, h_out, w_out)
    idx = _col_index_cache.get(key)
    if idx is None:
        ci, ki, kj = np.meshgrid(np.arange(c_in), np.arange(k), np.arange(k), indexing="ij")
        oy, ox = np.meshgrid(np.arange(h_out) * stride, np.arange(w_out) * stride, indexing="ij")
        rows = (ci * h_pad * w_pad + ki * w_pad + kj).reshape(-1, 1)
        cols = (oy * w_pad + ox).reshape(1, -1)
        idx = rows + cols
        _col_index_cache[key] = idx
    return idx


def conv2d(x, weight, bias, stride=1, pad=0):
    """2-d convolution (cross-correlation) on a [C,H,W] input, zero padding."""
    x, weight, bias = _wrap(x), _wrap(weight), _wrap(bias)
    c_out, c_in, k, k2 = weight.shape
    if k != k2:
        raise ValueError("conv2d: kernel must be square")
    if x.shape[0] != c_in:
        raise ValueError(f"conv2d: input has {x.shape[0]} channels, weight expects {c_in}")
    if bias.shape != (c_out,):
        raise ValueError(f"conv2d: bias shape {bias.shape} != ({c_out},)")
    _, h, w = x.shape
    h_out = (h + 2 * pad - k) // stride + 1
    w_out = (w + 2 * pad - k) // stride + 1
    if h_out < 1 or w_out < 1:
        raise ValueError("conv2d: kernel larger than padded input")

    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad))) if pad else x.data
    h_pad, w_pad = xp.shape[1], xp.shape[2]
    idx = _col_indices(c_in, h_pad, w_pad, k, stride, h_out, w_out)
    cols = xp.reshape(-1)[idx]  # (C*k*k, Hout*Wout)
    w_mat = weight.data.reshape(c_out, -1)
    out_data = (w_mat @ cols + bias.data[:, None]).reshape(c_out, h_out, w_out)
    _check_finite(out_data, "conv2d")

    def backward(g):
        g2 = g.reshape(c_out, -1)
        if weight.requires_grad:
            weight._accumulate((g2 @ cols.T).reshape(weight.shape))
        if bias.requires_grad:
            bias._accumulate(g2.sum(axis=1))
        if x.requires_grad:
            gcols = w_mat.T @ g2  # (C*k*k, Hout*Wout)
            gx_pad = np.zeros(c_in * h_pad * w_pad)
            np.add.at(gx_pad, idx.reshape(-1), gcols.reshape(-1))
            gx_pad = gx_pad.reshape(c_in, h_pad, w_pad)
            if pad:
                gx_pad = gx_pad[:, pad:h_pad - pad, pad:w_pad - pad]
            x._accumulate(gx_pad)

    return Tensor._result(out_data, (x, weight, bias), backward, "conv2d")


def instance_norm(x, eps=1e-5):
    """Per-channel normalization of a [C,H,W] tensor to zero mean, unit variance.

    Population variance with an eps guard so constant channels map to zero.
    """
    x = _wrap(x)
    if eps <= 0:
        raise ValueError("instance_norm: eps must be positive")
    c, h, w = x.shape
    n = h * w
    flat = x.data.reshape(c, n)
    mean = flat.mean(axis=1, keepdims=True)
    var = flat.var(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (flat - mean) * inv_std
    out_data = xhat.reshape(c, h, w)
    _check_finite(out_data, "instance_norm")

    def backward(g):
        if x.requires_grad:
            gf = g.reshape(c, n)
            gsum = gf.sum(axis=1, keepdims=True)
            gdot = (gf * xhat).sum(axis=1, keepdims=True)
            gx = inv_std * (gf - gsum / n - xhat * gdot / n)
            x._accumulate(gx.reshape(c, h, w))

    return Tensor._result(out_data, (x,), backward, "instance_norm")


def gather_pixels(x, flat_idx, weights=None):
    """Gather spatial samples of a [C,H,W] tensor by flattened pixel index.

    out[c, i] = sum_j weights[j, i] * x[c].flat[flat_idx[j, i]]
    with flat_idx, weights of shape (J, N). Used by bilinear warping;
    indices and weights are constants (no gradient flows into them).
    """
    x = _wrap(x)
    c = x.shape[0]
    xf = x.data.reshape(c, -1)
    if weights is None:
        out_data = xf[:, flat_idx]

        def backward(g):
            if x.requires_grad:
                gx = np.zeros_like(xf)
                np.add.at(gx.T, flat_idx, g.T)
                x._accumulate(gx.reshape(x.shape))

        return Tensor._result(out_data, (x,), backward, "gather_pixels")

    gathered = xf[:, flat_idx]  # (C, J, N)
    out_data = np.einsum("cjn,jn->cn", gathered, weights)
    _check_finite(out_data, "gather_pixels")

    def backward(g):
        if x.requires_grad:
            contrib = g[:, None, :] * weights[None, :, :]  # (C, J, N)
            gxc = np.zeros_like(xf)
            for j in range(flat_idx.shape[0]):
                np.add.at(gxc.T, flat_idx[j], contrib[:, j, :].T)
            x._accumulate(gxc.reshape(x.shape))

    return Tensor._result(out_data, (x,), backward, "gather_pixels")


# ---- finite-difference verification -------------------------------------

def finite_difference_check(fn, tensors, h=1e-5, n_samples=16, rng=None):
    """Compare analytic grads of scalar fn(*tensors) with central differences.

    Samples up to n_samples coordinates per tensor. Returns the max
    relative error over all sampled coordinates.
    """
    rng = rng or np.random.default_rng(0)
    loss = fn(*tensors)
    loss.backward()
    max_rel = 0.0
    for t in tensors:
        if not t.requires_grad:
            continue
        flat = t.data.reshape(-1)
        gflat = (t.grad if t.grad is not None else np.zeros_like(t.data)).reshape(-1)
        n = flat.size
        coords = np.arange(n) if n <= n_samples else rng.choice(n, size=n_samples, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            lp = fn(*tensors).item()
            flat[i] = orig - h
            lm = fn(*tensors).item()
            flat[i] = orig
            numeric = (lp - lm) / (2.0 * h)
            denom = max(abs(numeric), abs(gflat[i]), 1e-8)
            max_rel = max(max_rel, abs(numeric - gflat[i]) / denom)
    return max_rel
