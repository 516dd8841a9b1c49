"""Minimal differentiable CNN stack on numpy arrays.

Forward/backward are hand-written per layer; a layer caches whatever its
backward pass needs when it runs forward.  Parameters and gradients are
plain arrays held in per-layer dicts and updated in place, so optimizer
state can keep references across steps.

Everything runs in a single dtype chosen at construction (float32 for
training speed, float64 when gradients are being checked bit-by-bit);
mixing dtypes raises rather than silently upcasting.
"""

from __future__ import annotations

import enum

import numpy as np

from . import pooling, tensor
from .pooling import PoolingKind


class Mode(enum.Enum):
    TRAIN = "train"
    EVAL = "eval"


class Layer:
    """Base: empty param/grad/state dicts and a no-op backward contract."""

    def __init__(self):
        self.params: dict = {}
        self.grads: dict = {}
        self.state: dict = {}

    def forward(self, x, mode: Mode):
        raise NotImplementedError

    def backward(self, g):
        raise NotImplementedError


def _he_normal(rng: tensor.Rng, shape, fan_in: int, dtype):
    return (rng.normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Conv3x3(Layer):
    """3x3 cross-correlation, stride 1, zero padding 1 (shape-preserving).

    Evaluated as im2col + one matmul; the backward pass scatters the
    column gradient back with overlap-add.
    """

    def __init__(self, in_channels: int, out_channels: int, rng: tensor.Rng,
                 dtype=tensor.SINGLE, bias: bool = True):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        fan_in = in_channels * 9
        self.params["weight"] = _he_normal(rng, (out_channels, in_channels, 3, 3),
                                           fan_in, dtype)
        if bias:
            self.params["bias"] = np.zeros(out_channels, dtype=dtype)
        self._cols = None
        self._in_hw = None

    def forward(self, x, mode: Mode):
        n, c, h, w = x.shape
        if c != self.in_channels:
            raise ValueError(f"expected {self.in_channels} channels, got {c}")
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        cols = np.empty((n, c, 9, h, w), dtype=x.dtype)
        for k in range(9):
            dh, dw = divmod(k, 3)
            cols[:, :, k] = xp[:, :, dh:dh + h, dw:dw + w]
        cols = cols.reshape(n, c * 9, h * w)
        wmat = self.params["weight"].reshape(self.out_channels, c * 9)
        out = np.matmul(wmat, cols)  # [N, O, H*W]
        if "bias" in self.params:
            out += self.params["bias"][:, None]
        self._cols = cols
        self._in_hw = (h, w)
        return out.reshape(n, self.out_channels, h, w)

    def backward(self, g):
        n = g.shape[0]
        h, w = self._in_hw
        gmat = g.reshape(n, self.out_channels, h * w)
        self.grads["weight"] = np.einsum("nop,nfp->of", gmat, self._cols).reshape(
            self.params["weight"].shape).astype(g.dtype, copy=False)
        if "bias" in self.params:
            self.grads["bias"] = gmat.sum(axis=(0, 2))
        wmat = self.params["weight"].reshape(self.out_channels, -1)
        gcols = np.matmul(wmat.T, gmat).reshape(n, self.in_channels, 9, h, w)
        gpad = np.zeros((n, self.in_channels, h + 2, w + 2), dtype=g.dtype)
        for k in range(9):
            dh, dw = divmod(k, 3)
            gpad[:, :, dh:dh + h, dw:dw + w] += gcols[:, :, k]
        return gpad[:, :, 1:h + 1, 1:w + 1]


class BatchNorm2d(Layer):
    """Per-channel normalization over (batch, height, width).

    Train mode uses batch statistics (batch of at least 2 required) and
    nudges the running estimates by ``momentum``; eval mode normalizes
    with the running estimates, which keeps the eval-mode map affine in
    the input -- exactly what attack gradients rely on.
    """

    def __init__(self, channels: int, dtype=tensor.SINGLE,
                 eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.state["running_mean"] = np.zeros(channels, dtype=dtype)
        self.state["running_var"] = np.ones(channels, dtype=dtype)
        self._cache = None

    def forward(self, x, mode: Mode):
        gamma = self.params["gamma"][:, None, None]
        beta = self.params["beta"][:, None, None]
        if mode is Mode.TRAIN:
            if x.shape[0] < 2:
                raise ValueError("train-mode batch statistics need a batch >= 2")
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))  # biased, for the normalization itself
            m = x.shape[0] * x.shape[2] * x.shape[3]
            unbiased = var * (m / (m - 1))
            self.state["running_mean"] += self.momentum * (
                mean - self.state["running_mean"])
            self.state["running_var"] += self.momentum * (
                unbiased - self.state["running_var"])
            inv = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mean[:, None, None]) * inv[:, None, None]
            self._cache = (xhat, inv)
            return gamma * xhat + beta
        inv = 1.0 / np.sqrt(self.state["running_var"] + self.eps)
        xhat = (x - self.state["running_mean"][:, None, None]) * inv[:, None, None]
        self._cache = (None, inv)  # eval backward only needs the scale
        return gamma * xhat + beta

    def backward(self, g):
        xhat, inv = self._cache
        gamma = self.params["gamma"]
        if xhat is None:  # eval mode: x -> gamma*inv*x + const
            self.grads["gamma"] = np.zeros_like(gamma)
            self.grads["beta"] = g.sum(axis=(0, 2, 3))
            return g * (gamma * inv)[:, None, None]
        self.grads["gamma"] = (g * xhat).sum(axis=(0, 2, 3))
        self.grads["beta"] = g.sum(axis=(0, 2, 3))
        # means over the normalization set, per channel
        gmean = g.mean(axis=(0, 2, 3))[:, None, None]
        gxmean = (g * xhat).mean(axis=(0, 2, 3))[:, None, None]
        return (gamma * inv)[:, None, None] * (g - gmean - xhat * gxmean)


class ReLU(Layer):
    def __init__(self):
        super().__init__()
        self._mask = None

    def forward(self, x, mode: Mode):
        self._mask = x > 0
        return np.where(self._mask, x, x.dtype.type(0))

    def backward(self, g):
        return np.where(self._mask, g, g.dtype.type(0))


class Pool(Layer):
    """Spatial halving with any :class:`PoolingKind`."""

    def __init__(self, kind: PoolingKind):
        super().__init__()
        self.kind = kind
        self._ctx = None

    def forward(self, x, mode: Mode):
        out, self._ctx = pooling.pool_forward(self.kind, x)
        return out

    def backward(self, g):
        return pooling.pool_backward(self.kind, g, self._ctx)


class GlobalAvgPool(Layer):
    def __init__(self):
        super().__init__()
        self._in_hw = None

    def forward(self, x, mode: Mode):
        self._in_hw = x.shape[-2:]
        return x.mean(axis=(-2, -1))

    def backward(self, g):
        h, w = self._in_hw
        scale = g.dtype.type(1.0 / (h * w))
        return np.broadcast_to((g * scale)[..., None, None],
                               g.shape + (h, w)).copy()


class Linear(Layer):
    def __init__(self, in_features: int, out_features: int, rng: tensor.Rng,
                 dtype=tensor.SINGLE):
        super().__init__()
        self.params["weight"] = _he_normal(rng, (out_features, in_features),
                                           in_features, dtype)
        self.params["bias"] = np.zeros(out_features, dtype=dtype)
        self._x = None

    def forward(self, x, mode: Mode):
        self._x = x
        return x @ self.params["weight"].T + self.params["bias"]

    def backward(self, g):
        self.grads["weight"] = g.T @ self._x
        self.grads["bias"] = g.sum(axis=0)
        return g @ self.params["weight"]


class Network:
    """Ordered, named layers with a chain-rule backward pass."""

    def __init__(self, layers, descriptor: str = ""):
        self.layers = [(str(name), layer) for name, layer in layers]
        names = [n for n, _ in self.layers]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate layer names in {names}")
        self.descriptor = descriptor

    def forward(self, x, mode: Mode = Mode.EVAL):
        x = np.asarray(x)
        if x.dtype != self.dtype:
            raise ValueError(f"input dtype {x.dtype} != model dtype {self.dtype}")
        for _, layer in self.layers:
            x = layer.forward(x, mode)
        return x

    def backward(self, g):
        for _, layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    @property
    def dtype(self):
        for _, layer in self.layers:
            for v in layer.params.values():
                return v.dtype
        return np.dtype(tensor.SINGLE)

    def parameters(self) -> dict:
        out = {}
        for name, layer in self.layers:
            for key, val in layer.params.items():
                out[f"{name}.{key}"] = val
        return out

    def gradients(self) -> dict:
        out = {}
        for name, layer in self.layers:
            for key in layer.params:
                out[f"{name}.{key}"] = layer.grads[key]
        return out

    def state_dict(self) -> dict:
        """Learnable parameters plus persistent state (running stats),
        in deterministic layer order."""
        out = {}
        for name, layer in self.layers:
            for key, val in layer.params.items():
                out[f"{name}.{key}"] = val
            for key, val in layer.state.items():
                out[f"{name}.{key}"] = val
        return out

    def load_state_dict(self, entries: dict):
        own = self.state_dict()
        missing = set(own) - set(entries)
        extra = set(entries) - set(own)
        if missing or extra:
            raise ValueError(f"state mismatch: missing {sorted(missing)}, "
                             f"unexpected {sorted(extra)}")
        for key, val in entries.items():
            dst = own[key]
            if dst.shape != val.shape:
                raise ValueError(f"{key}: shape {val.shape} != {dst.shape}")
            if dst.dtype != val.dtype:
                raise ValueError(f"{key}: dtype {val.dtype} != {dst.dtype}")
            dst[...] = val


def build_minicnn(pooling: PoolingKind, in_channels: int, classes: int,
                  width: int, rng: tensor.Rng, dtype=tensor.SINGLE) -> Network:
    """Three conv blocks with two poolings in between, then GAP + linear.

    conv(width) - bn - relu - pool - conv(2w) - bn - relu - pool -
    conv(4w) - bn - relu - gap - fc.  Initialization draws from
    per-layer child streams, so the weights depend only on the seed and
    the architecture, never on call order.  The descriptor string is the
    model's self-description; checkpoints rebuild from it.
    """
    if width < 1:
        raise ValueError(f"width must be >= 1, got {width}")
    desc = (f"mini_cnn:in={in_channels},classes={classes},width={width},"
            f"pool={pooling.value}")
    layers = [
        ("conv1", Conv3x3(in_channels, width, rng.child(0), dtype)),
        ("bn1", BatchNorm2d(width, dtype)),
        ("relu1", ReLU()),
        ("pool1", Pool(pooling)),
        ("conv2", Conv3x3(width, 2 * width, rng.child(1), dtype)),
        ("bn2", BatchNorm2d(2 * width, dtype)),
        ("relu2", ReLU()),
        ("pool2", Pool(pooling)),
        ("conv3", Conv3x3(2 * width, 4 * width, rng.child(2), dtype)),
        ("bn3", BatchNorm2d(4 * width, dtype)),
        ("relu3", ReLU()),
        ("gap", GlobalAvgPool()),
        ("fc", Linear(4 * width, classes, rng.child(3), dtype)),
    ]
    return Network(layers, descriptor=desc)


def parse_minicnn_descriptor(desc: str) -> dict:
    """Invert the descriptor built by :func:`build_minicnn`."""
    prefix = "mini_cnn:"
    if not desc.startswith(prefix):
        raise ValueError(f"not a recognized architecture descriptor: {desc!r}")
    fields = {}
    for item in desc[len(prefix):].split(","):
        key, _, value = item.partition("=")
        fields[key] = value
    try:
        return {
            "pooling": PoolingKind.from_flag(fields["pool"]),
            "in_channels": int(fields["in"]),
            "classes": int(fields["classes"]),
            "width": int(fields["width"]),
        }
    except (KeyError, ValueError) as exc:
        raise ValueError(f"malformed architecture descriptor {desc!r}") from exc


# ---------------------------------------------------------------------------
# loss / metrics / optimizer


def cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and its logits gradient, max-shifted for stability.

    Returns ``(loss, grad)`` with ``grad = (softmax - onehot) / batch``
    in the logits dtype; the scalar loss is accumulated in double.
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} != ({n},)")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError("label out of range")
    z = logits - logits.max(axis=1, keepdims=True)
    expz = np.exp(z)
    denom = expz.sum(axis=1, keepdims=True)
    logp = z - np.log(denom)
    loss = float(-logp[np.arange(n), labels].astype(np.float64).mean())
    grad = expz / denom
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return loss, grad.astype(logits.dtype, copy=False)


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(tensor.argmax_channel(logits) == np.asarray(labels)))


class SgdMomentum:
    """Heavyweight-ball SGD: v <- m*v + (g + wd*p); p <- p - lr*v."""

    def __init__(self, params: dict, momentum: float = 0.9,
                 weight_decay: float = 5e-4):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict, lr: float):
        for key, p in params.items():
            g = grads[key]
            v = self.velocity[key]
            v *= self.momentum
            v += g + p.dtype.type(self.weight_decay) * p
            p -= p.dtype.type(lr) * v


def cyclic_lr(epoch: int, total_epochs: int, lr_max: float) -> float:
    """One triangular cycle over the run: 0 up to lr_max at mid, back down."""
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    return lr_max * (1.0 - abs(2.0 * epoch / total_epochs - 1.0))
