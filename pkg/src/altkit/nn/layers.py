"""Layers with explicit forward/backward passes over numpy arrays.

Every layer maps a batch shaped ``(N, T, ...)`` (chunks x frames x features)
to another batch, caches what its backward pass needs, and accumulates
parameter gradients into ``Parameter.grad`` on ``backward``.
"""

import math
from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    pass


class Parameter:
    __slots__ = ("name", "value", "grad", "lr_mult")

    def __init__(self, name, value, lr_mult=1.0):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)
        self.lr_mult = lr_mult

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self):
        return self.value.size

    def zero_grad(self):
        self.grad[...] = 0

    def astype(self, dtype):
        self.value = self.value.astype(dtype)
        self.grad = np.zeros_like(self.value)


def _uniform(rng, shape, fan_in, dtype):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Layer:
    kind = "layer"

    def params(self):
        return []

    def buffers(self):
        """Non-trainable state saved with the model (e.g. running statistics)."""
        return {}

    def hyper(self):
        return {}

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def astype(self, dtype):
        for p in self.params():
            p.astype(dtype)
        for k, v in self.buffers().items():
            setattr(self, k, v.astype(dtype))

    def num_params(self):
        return sum(p.size for p in self.params())


class Affine(Layer):
    """y = x W + b over the last axis."""
    kind = "affine"

    def __init__(self, din, dout, rng, bias=True, dtype=np.float32, name="affine"):
        self.din, self.dout = din, dout
        self.W = Parameter(f"{name}.W", _uniform(rng, (din, dout), din, dtype))
        self.b = Parameter(f"{name}.b", np.zeros(dout, dtype)) if bias else None

    def params(self):
        return [self.W] + ([self.b] if self.b is not None else [])

    def hyper(self):
        return {"din": self.din, "dout": self.dout, "bias": self.b is not None}

    def forward(self, x, train=False):
        if x.shape[-1] != self.din:
            raise ShapeError(f"affine expects last dim {self.din}, got {x.shape[-1]}")
        self.x = x
        y = x @ self.W.value
        if self.b is not None:
            y = y + self.b.value
        return y

    def backward(self, dy):
        x2 = self.x.reshape(-1, self.din)
        dy2 = dy.reshape(-1, self.dout)
        self.W.grad += x2.T @ dy2
        if self.b is not None:
            self.b.grad += dy2.sum(axis=0)
        return dy @ self.W.value.T


class FeatureMapAffine(Layer):
    """One affine map over the frequency axis, shared by several stacked maps.

    Input ``(N, T, maps * height)``; output ``(N, T, height_out, maps)`` so the
    maps become convolution channels.
    """
    kind = "feature_map_affine"

    def __init__(self, height, maps, rng, height_out=None, dtype=np.float32, name="input"):
        self.height, self.maps = height, maps
        self.height_out = height_out or height
        self.affine = Affine(height, self.height_out, rng, dtype=dtype, name=name)

    def params(self):
        return self.affine.params()

    def hyper(self):
        return {"height": self.height, "maps": self.maps, "height_out": self.height_out}

    def forward(self, x, train=False):
        n, t, d = x.shape
        if d != self.height * self.maps:
            raise ShapeError(f"input dim {d} != {self.maps} maps x {self.height}")
        y = self.affine.forward(x.reshape(n, t, self.maps, self.height))
        return y.transpose(0, 1, 3, 2)

    def backward(self, dy):
        n, t = dy.shape[:2]
        dx = self.affine.backward(dy.transpose(0, 1, 3, 2))
        return dx.reshape(n, t, self.maps * self.height)


class Conv2d(Layer):
    """3x3 convolution over (time, frequency) with zero 'same' padding.

    Input and output are ``(N, T, F, C)``; F must equal the configured height.
    """
    kind = "conv2d"

    def __init__(self, cin, cout, height, rng, bias=False, dtype=np.float32, name="conv"):
        self.cin, self.cout, self.height = cin, cout, height
        fan_in = 9 * cin
        self.W = Parameter(f"{name}.W", _uniform(rng, (9 * cin, cout), fan_in, dtype))
        self.b = Parameter(f"{name}.b", np.zeros(cout, dtype)) if bias else None

    def params(self):
        return [self.W] + ([self.b] if self.b is not None else [])

    def hyper(self):
        return {"cin": self.cin, "cout": self.cout, "height": self.height, "bias": self.b is not None}

    def forward(self, x, train=False):
        n, t, f, c = x.shape
        if f != self.height:
            raise ShapeError(f"conv configured for height {self.height}, got {f}")
        if c != self.cin:
            raise ShapeError(f"conv expects {self.cin} channels, got {c}")
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
        cols = np.concatenate([xp[:, i:i + t, j:j + f, :] for i in range(3) for j in range(3)], axis=-1)
        self.cols = cols
        y = cols.reshape(-1, 9 * c) @ self.W.value
        if self.b is not None:
            y += self.b.value
        return y.reshape(n, t, f, self.cout)

    def backward(self, dy):
        n, t, f, _ = dy.shape
        dy2 = dy.reshape(-1, self.cout)
        self.W.grad += self.cols.reshape(-1, 9 * self.cin).T @ dy2
        if self.b is not None:
            self.b.grad += dy2.sum(axis=0)
        dcols = (dy2 @ self.W.value.T).reshape(n, t, f, 9, self.cin)
        dxp = np.zeros((n, t + 2, f + 2, self.cin), dtype=dy.dtype)
        k = 0
        for i in range(3):
            for j in range(3):
                dxp[:, i:i + t, j:j + f, :] += dcols[:, :, :, k, :]
                k += 1
        self.cols = None
        return dxp[:, 1:-1, 1:-1, :]


class MaxPoolFreq(Layer):
    """Max over non-overlapping pairs of frequency bins; time is untouched."""
    kind = "maxpool_freq"

    def __init__(self, factor=2):
        self.factor = factor

    def hyper(self):
        return {"factor": self.factor}

    def forward(self, x, train=False):
        n, t, f, c = x.shape
        if f % self.factor:
            raise ShapeError(f"frequency axis {f} not divisible by {self.factor}")
        xr = x.reshape(n, t, f // self.factor, self.factor, c)
        self.arg = xr.argmax(axis=3)
        self.shape = x.shape
        return xr.max(axis=3)

    def backward(self, dy):
        n, t, f, c = self.shape
        dx = np.zeros((n, t, f // self.factor, self.factor, c), dtype=dy.dtype)
        np.put_along_axis(dx, self.arg[:, :, :, None, :], dy[:, :, :, None, :], axis=3)
        return dx.reshape(self.shape)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False):
        self.mask = x > 0
        return np.where(self.mask, x, 0).astype(x.dtype, copy=False)

    def backward(self, dy):
        return np.where(self.mask, dy, 0).astype(dy.dtype, copy=False)


def relu(x):
    return np.maximum(x, 0)


class BatchNorm(Layer):
    """Normalizes the last axis over all leading axes (minibatch and time).

    Running statistics (momentum 0.9) replace batch statistics at inference.
    """
    kind = "batchnorm"

    def __init__(self, dim, eps=1e-5, momentum=0.9, dtype=np.float32, name="bn"):
        self.dim, self.eps, self.momentum = dim, eps, momentum
        self.gamma = Parameter(f"{name}.gamma", np.ones(dim, dtype))
        self.beta = Parameter(f"{name}.beta", np.zeros(dim, dtype))
        self.running_mean = np.zeros(dim, dtype)
        self.running_var = np.ones(dim, dtype)

    def params(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def hyper(self):
        return {"dim": self.dim, "eps": self.eps, "momentum": self.momentum}

    def forward(self, x, train=False):
        x2 = x.reshape(-1, self.dim)
        if train:
            mean = x2.mean(axis=0)
            var = x2.var(axis=0)
            m = self.momentum
            self.running_mean = (m * self.running_mean + (1 - m) * mean).astype(self.running_mean.dtype)
            self.running_var = (m * self.running_var + (1 - m) * var).astype(self.running_var.dtype)
        else:
            mean, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x2 - mean) * inv
        self.train_mode = train
        self.xhat, self.inv = xhat, inv
        y = xhat * self.gamma.value + self.beta.value
        return y.reshape(x.shape).astype(x.dtype, copy=False)

    def backward(self, dy):
        shape = dy.shape
        dy2 = dy.reshape(-1, self.dim)
        self.gamma.grad += (dy2 * self.xhat).sum(axis=0)
        self.beta.grad += dy2.sum(axis=0)
        dxhat = dy2 * self.gamma.value
        if self.train_mode:
            dx = self.inv * (dxhat - dxhat.mean(axis=0) - self.xhat * (dxhat * self.xhat).mean(axis=0))
        else:
            dx = dxhat * self.inv
        return dx.reshape(shape).astype(dy.dtype, copy=False)


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, rate=0.0, seed=0):
        self.rate = rate
        self.rng = np.random.default_rng(seed)
        self.seed = seed

    @property
    def rate(self):
        return self._rate

    @rate.setter
    def rate(self, value):
        if not 0.0 <= value < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {value}")
        self._rate = value

    def hyper(self):
        return {"seed": self.seed}

    def forward(self, x, train=False):
        if not train or self.rate == 0.0:
            self.mask = None
            return x
        keep = 1.0 - self.rate
        self.mask = (self.rng.random(x.shape) < keep).astype(x.dtype) / keep
        return x * self.mask

    def backward(self, dy):
        return dy if self.mask is None else dy * self.mask


def gather_offsets(x, offsets):
    """Stack ``x[:, t + o]`` for each offset, clamping to the valid frame range."""
    t = x.shape[1]
    idx = np.clip(np.arange(t)[:, None] + np.asarray(offsets)[None, :], 0, t - 1)
    g = x[:, idx, :]
    return g.reshape(x.shape[0], t, -1)


def scatter_offsets(dg, offsets, d):
    """Adjoint of :func:`gather_offsets`."""
    n, t, _ = dg.shape
    dg = dg.reshape(n, t, len(offsets), d)
    dx = np.zeros((n, t, d), dtype=dg.dtype)
    for j, o in enumerate(offsets):
        src = dg[:, :, j, :]
        if o == 0:
            dx += src
        elif o > 0:
            k = min(o, t)
            dx[:, o:] += src[:, :t - o]
            dx[:, t - 1] += src[:, t - k:].sum(axis=1)
        else:
            k = min(-o, t)
            dx[:, :t + o] += src[:, -o:]
            dx[:, 0] += src[:, :k].sum(axis=1)
    return dx


class TDNNF(Layer):
    """Factorized time-delay layer: spliced input -> semi-orthogonal linear
    bottleneck -> linear expansion -> batchnorm -> ReLU -> dropout.

    The first factor is stored as ``A.value`` shaped ``(din * len(offsets),
    bottleneck)``; the semi-orthogonal constraint applies to its transpose.
    """
    kind = "tdnnf"

    def __init__(self, din, hidden, bottleneck, offsets, rng, dropout_seed=0,
                 dtype=np.float32, name="tdnnf"):
        self.din, self.hidden, self.bottleneck = din, hidden, bottleneck
        self.offsets = tuple(int(o) for o in offsets)
        if not self.offsets:
            raise ValueError("tdnnf needs at least one offset")
        span = din * len(self.offsets)
        self.A = Parameter(f"{name}.A", _uniform(rng, (span, bottleneck), span, dtype))
        self.B = Parameter(f"{name}.B", _uniform(rng, (bottleneck, hidden), bottleneck, dtype))
        self.bn = BatchNorm(hidden, dtype=dtype, name=f"{name}.bn")
        self.relu = ReLU()
        self.dropout = Dropout(0.0, seed=dropout_seed)

    def params(self):
        return [self.A, self.B] + self.bn.params()

    def buffers(self):
        return self.bn.buffers()

    def astype(self, dtype):
        for p in self.params():
            p.astype(dtype)
        self.bn.astype(dtype)

    def hyper(self):
        return {"din": self.din, "hidden": self.hidden, "bottleneck": self.bottleneck,
                "offsets": list(self.offsets), "dropout_seed": self.dropout.seed}

    def forward(self, x, train=False):
        if x.shape[1] == 0:
            raise ShapeError("tdnnf got an empty sequence")
        if x.shape[-1] != self.din:
            raise ShapeError(f"tdnnf expects dim {self.din}, got {x.shape[-1]}")
        self.g = gather_offsets(x, self.offsets)
        self.h = self.g @ self.A.value
        z = self.h @ self.B.value
        return self.dropout.forward(self.relu.forward(self.bn.forward(z, train), train), train)

    def backward(self, dy):
        dz = self.bn.backward(self.relu.backward(self.dropout.backward(dy)))
        n, t = dz.shape[:2]
        self.B.grad += self.h.reshape(-1, self.bottleneck).T @ dz.reshape(-1, self.hidden)
        dh = dz @ self.B.value.T
        self.A.grad += self.g.reshape(n * t, -1).T @ dh.reshape(-1, self.bottleneck)
        dg = dh @ self.A.value.T
        return scatter_offsets(dg, self.offsets, self.din)

    def constrain(self):
        """Apply one semi-orthogonal update to the bottleneck factor."""
        m = self.A.value.T.astype(np.float64)
        self.A.value = semi_orthogonal_step(m).T.astype(self.A.value.dtype)


def semi_orthogonal_step(m):
    """One floating-scale step toward M M^T = sigma^2 I for M with rows <= cols.

    sigma^2 = tr(P P^T) / tr(P) with P = M M^T, then
    M <- M - (1 / (2 sigma^2)) (P - sigma^2 I) M.
    """
    m = np.asarray(m, dtype=np.float64)
    rows, cols = m.shape
    if rows > cols:
        raise ValueError(f"need rows <= cols, got {m.shape}")
    p = m @ m.T
    tr_p = np.trace(p)
    if tr_p <= 0 or not np.isfinite(tr_p):
        raise ValueError("degenerate (all-zero) matrix")
    sigma2 = np.trace(p @ p.T) / tr_p
    return m - (p - sigma2 * np.eye(rows)) @ m / (2.0 * sigma2)


def orthogonality_error(m):
    """||M M^T - sigma^2 I||_F / ||sigma^2 I||_F with the floating sigma^2."""
    m = np.asarray(m, dtype=np.float64)
    p = m @ m.T
    sigma2 = np.trace(p @ p.T) / np.trace(p)
    eye = np.eye(len(p))
    return np.linalg.norm(p - sigma2 * eye) / np.linalg.norm(sigma2 * eye)


@dataclass(frozen=True)
class AttentionContext:
    """Window of ``left`` past and ``right`` future frames; the t=0 bin is index ``left``."""
    left: int = 15
    right: int = 6
    num_heads: int = 15
    key_dim: int = 60
    value_dim: int = 40

    def __post_init__(self):
        if self.left < 0 or self.right < 0 or self.left + self.right < 1:
            raise ValueError("attention context needs left, right >= 0 and left + right >= 1")
        if self.num_heads < 1 or self.key_dim < 1 or self.value_dim < 1:
            raise ValueError("num_heads, key_dim and value_dim must be positive")

    @property
    def window(self):
        return self.left + self.right + 1


class TimeRestrictedAttention(Layer):
    """Multi-head self-attention where frame t sees frames t-left .. t+right.

    Per head: queries/keys of ``key_dim``, values of ``value_dim``, all linear
    in the input without bias. Head outputs are concatenated and mapped to
    ``dout`` by one shared projection. Window positions outside the sequence
    get zero weight.
    """
    kind = "attention"

    def __init__(self, din, num_heads, key_dim, value_dim, left, right, dout, rng,
                 dtype=np.float32, name="attention"):
        if left < 0 or right < 0 or left + right < 1:
            raise ValueError("attention context needs left, right >= 0 and left + right >= 1")
        if num_heads < 1 or key_dim < 1 or value_dim < 1:
            raise ValueError("heads, key_dim and value_dim must be positive")
        self.din, self.num_heads, self.key_dim, self.value_dim = din, num_heads, key_dim, value_dim
        self.left, self.right, self.dout = left, right, dout
        h = num_heads
        self.Wq = Parameter(f"{name}.Wq", _uniform(rng, (h, din, key_dim), din, dtype))
        self.Wk = Parameter(f"{name}.Wk", _uniform(rng, (h, din, key_dim), din, dtype))
        self.Wv = Parameter(f"{name}.Wv", _uniform(rng, (h, din, value_dim), din, dtype))
        self.Wo = Parameter(f"{name}.Wo", _uniform(rng, (h * value_dim, dout), h * value_dim, dtype))
        self.last_weights = None

    @staticmethod
    def count_params(din, num_heads, key_dim, value_dim, dout):
        return num_heads * din * (2 * key_dim + value_dim) + num_heads * value_dim * dout

    @property
    def window(self):
        return self.left + self.right + 1

    def params(self):
        return [self.Wq, self.Wk, self.Wv, self.Wo]

    def hyper(self):
        return {"din": self.din, "num_heads": self.num_heads, "key_dim": self.key_dim,
                "value_dim": self.value_dim, "left": self.left, "right": self.right,
                "dout": self.dout}

    def _pad(self, a):
        """Zero-pad the time axis (2) by ``left`` before and ``right`` after."""
        return np.pad(a, ((0, 0), (0, 0), (self.left, self.right), (0, 0)))

    def _windows(self, padded, t):
        """Read-only view (N, H, T, K, W): entry [..., t, :, j] is frame t + j - left."""
        return np.lib.stride_tricks.sliding_window_view(padded, self.window, axis=2)[:, :, :t]

    def _valid(self, t):
        d = np.arange(-self.left, self.right + 1)
        pos = np.arange(t)[:, None] + d[None, :]
        return (pos >= 0) & (pos < t)

    def attend(self, x):
        """Returns (head outputs (N, T, H*value_dim), weights (N, H, T, W))."""
        n, t, d = x.shape
        if t == 0:
            raise ShapeError("attention got an empty sequence")
        if d != self.din:
            raise ShapeError(f"attention expects dim {self.din}, got {d}")
        x2 = x.reshape(-1, d)
        q = _head_proj(x2, self.Wq.value, n, t)
        k = _head_proj(x2, self.Wk.value, n, t)
        v = _head_proj(x2, self.Wv.value, n, t)
        kp, vp = self._pad(k), self._pad(v)
        kw, vw = self._windows(kp, t), self._windows(vp, t)       # (N, H, T, K, W)
        scale = 1.0 / math.sqrt(self.key_dim)
        logits = np.matmul(q[..., None, :], kw)[..., 0, :] * scale
        logits = np.where(self._valid(t)[None, None], logits, -np.inf)
        logits = logits - logits.max(axis=-1, keepdims=True)
        w = np.exp(logits)
        w /= w.sum(axis=-1, keepdims=True)
        ctx = np.matmul(w[..., None, :], vw.swapaxes(-1, -2))[..., 0, :]
        self.cache = (x2, q, kp, vp, w, scale)
        heads = ctx.transpose(0, 2, 1, 3).reshape(n, t, -1)
        return heads, w

    def forward(self, x, train=False):
        heads, w = self.attend(x)
        self.heads = heads
        self.last_weights = w
        return heads @ self.Wo.value

    def backward(self, dy):
        x2, q, kp, vp, w, scale = self.cache
        n, hd, t, _ = q.shape
        self.Wo.grad += self.heads.reshape(-1, hd * self.value_dim).T @ dy.reshape(-1, self.dout)
        dheads = dy @ self.Wo.value.T
        dctx = dheads.reshape(n, t, hd, self.value_dim).transpose(0, 2, 1, 3)
        dw = np.matmul(dctx[..., None, :], self._windows(vp, t))[..., 0, :]
        dlogits = w * (dw - (dw * w).sum(-1, keepdims=True)) * scale
        dq = np.matmul(dlogits[..., None, :], self._windows(kp, t).swapaxes(-1, -2))[..., 0, :]
        dkp = np.zeros_like(kp)
        dvp = np.zeros_like(vp)
        for j in range(self.window):
            dkp[:, :, j:j + t] += dlogits[..., j:j + 1] * q
            dvp[:, :, j:j + t] += w[..., j:j + 1] * dctx
        lo = self.left
        dx = _head_proj_backward(x2, dq, self.Wq)
        dx += _head_proj_backward(x2, dkp[:, :, lo:lo + t], self.Wk)
        dx += _head_proj_backward(x2, dvp[:, :, lo:lo + t], self.Wv)
        return dx.reshape(n, t, -1).astype(x2.dtype, copy=False)


def _head_proj(x2, W, n, t):
    """(N*T, D) rows times per-head (H, D, K) weights -> (N, H, T, K)."""
    h, d, k = W.shape
    y = x2 @ W.transpose(1, 0, 2).reshape(d, h * k)
    return np.ascontiguousarray(y.reshape(n, t, h, k).transpose(0, 2, 1, 3))


def _head_proj_backward(x2, dout, param):
    """Accumulate the weight gradient of :func:`_head_proj`; return d(x2)."""
    h, d, k = param.value.shape
    g2 = dout.transpose(0, 2, 1, 3).reshape(-1, h * k)
    param.grad += (x2.T @ g2).reshape(d, h, k).transpose(1, 0, 2)
    return g2 @ param.value.transpose(1, 0, 2).reshape(d, h * k).T


def time_restricted_self_attention(x, layer):
    """Functional view: returns (y, weights) for a single sequence ``x`` (T x D).

    ``y`` is the concatenated head outputs (T x H*value_dim), ``weights`` is
    H x T x (left + right + 1).
    """
    heads, w = layer.attend(x[None])
    return heads[0], w[0]


def log_softmax(logits):
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def log_softmax_xent(logits, targets, mask=None):
    """Mean frame cross-entropy and its gradient w.r.t. the logits.

    ``logits`` is (..., K); ``targets`` integer array of the leading shape.
    ``mask`` (same shape as targets) excludes padded frames from the mean.
    """
    k = logits.shape[-1]
    targets = np.asarray(targets)
    if targets.size and (targets.min() < 0 or targets.max() >= k):
        raise ValueError(f"targets must lie in [0, {k})")
    lp = log_softmax(logits)
    flat = lp.reshape(-1, k)
    tflat = targets.reshape(-1)
    mflat = np.ones(len(tflat), dtype=logits.dtype) if mask is None else mask.reshape(-1).astype(logits.dtype)
    count = mflat.sum()
    if count == 0:
        raise ValueError("no unmasked frames")
    picked = flat[np.arange(len(tflat)), tflat]
    loss = -(picked * mflat).sum() / count
    grad = np.exp(flat)
    grad[np.arange(len(tflat)), tflat] -= 1.0
    grad *= (mflat / count)[:, None]
    return float(loss), grad.reshape(logits.shape).astype(logits.dtype, copy=False)
