"""Dense [batch, channel, height, width] arrays and seeded randomness.

Tensors are plain numpy arrays in NCHW layout, float64 ("double") or
float32 ("single"); the dtype is fixed at creation and every operation
preserves it.  Elementwise arithmetic and sum/mean/max reductions are
numpy's own.  All randomness flows through an explicit :class:`Rng` --
there is no global generator anywhere in the package.
"""

from __future__ import annotations

import numpy as np

DOUBLE = np.float64
SINGLE = np.float32

PRECISIONS = {"double": DOUBLE, "single": SINGLE}


def check_nchw(x: np.ndarray) -> np.ndarray:
    """Validate that ``x`` is a real 4-axis [N,C,H,W] array."""
    x = np.asarray(x)
    if x.ndim != 4:
        raise ValueError(f"expected 4 axes [N,C,H,W], got shape {x.shape}")
    if np.iscomplexobj(x):
        raise ValueError("expected a real tensor")
    return x


def _check_shape(shape):
    shape = tuple(int(s) for s in shape)
    if any(s < 0 for s in shape):
        raise ValueError(f"negative extent in shape {shape}")
    total = 1
    for s in shape:
        total *= s
        if total > 2**40:
            raise OverflowError(f"element count overflow for shape {shape}")
    return shape


def zeros(shape, dtype=DOUBLE) -> np.ndarray:
    """All-zero tensor with the given extents."""
    return np.zeros(_check_shape(shape), dtype=dtype)


def full(shape, value, dtype=DOUBLE) -> np.ndarray:
    """Constant-fill tensor with the given extents."""
    return np.full(_check_shape(shape), value, dtype=dtype)


def circular_shift(x: np.ndarray, dh: int, dw: int) -> np.ndarray:
    """Roll the two spatial axes: y[..., h, w] = x[..., (h-dh) % H, (w-dw) % W].

    Shifts compose additively modulo the extent, and a shift by a full
    period is the identity.
    """
    return np.roll(x, (dh, dw), axis=(-2, -1))


def argmax_channel(x: np.ndarray) -> np.ndarray:
    """Index of the maximal entry along axis 1 (ties -> lowest index).

    Works for [N, K] logits as well as [N, C, H, W] activations.
    """
    return np.argmax(x, axis=1)


class Rng:
    """Deterministic random stream, addressable by a seed and a spawn key.

    Identical (seed, key) pairs yield byte-identical sample streams.
    ``child(*key)`` derives an independent stream without consuming
    state from the parent, so training loops can hand sub-streams to
    shuffling, attacks, and validation independently of draw order.
    """

    def __init__(self, seed: int, _key: tuple = ()):
        self.seed = int(seed)
        self._key = tuple(int(k) for k in _key)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self._key)
        self._gen = np.random.Generator(np.random.PCG64(seq))

    def child(self, *key: int) -> "Rng":
        return Rng(self.seed, self._key + key)

    def uniform(self, shape, lo: float, hi: float) -> np.ndarray:
        if lo > hi:
            raise ValueError(f"uniform bounds lo={lo} > hi={hi}")
        return self._gen.uniform(lo, hi, size=tuple(shape))

    def normal(self, shape, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        if std < 0:
            raise ValueError(f"normal std must be >= 0, got {std}")
        return self._gen.normal(mean, std, size=tuple(shape))

    def integers(self, lo: int, hi: int, shape=()) -> np.ndarray:
        return self._gen.integers(lo, hi, size=tuple(shape))

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self):
        return f"Rng(seed={self.seed}, key={self._key})"


def uniform(rng: Rng, shape, lo: float, hi: float, dtype=DOUBLE) -> np.ndarray:
    """Tensor of U(lo, hi) samples drawn from ``rng``."""
    return rng.uniform(shape, lo, hi).astype(dtype)


def normal(rng: Rng, shape, mean: float = 0.0, std: float = 1.0, dtype=DOUBLE) -> np.ndarray:
    """Tensor of N(mean, std^2) samples drawn from ``rng``."""
    return rng.normal(shape, mean, std).astype(dtype)
