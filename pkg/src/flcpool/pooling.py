"""Downsampling layers: frequency-crop pooling and the usual suspects.

Every kind halves both spatial extents (even extents required).  The
frequency-crop path ("flc") keeps the centered low-frequency window and
is the only kind here whose output carries exactly zero energy above
the new Nyquist band; max/avg/strided/blur all fold high frequencies
down into the kept band.

``pool_forward`` / ``pool_backward`` give a uniform (output, ctx) /
gradient interface so the network layer can treat all kinds alike.
``dense_map`` returns the *pre-subsample* field of each kind -- its
stride-2 samples reproduce the pooled output, which is the hook the
aliasing analysis hangs off.
"""

from __future__ import annotations

import enum

import numpy as np

from . import spectral
from .spectral import Layout


class PoolingKind(enum.Enum):
    FLC = "flc"
    FLC_PLUS_HIGHPASS = "flc+hp"
    FLC_PLUS_ORIGINAL = "flc+orig"
    MAX_POOL2 = "max"
    AVG_POOL2 = "avg"
    STRIDED_IDENTITY = "strided"
    BLUR_POOL = "blur"

    @classmethod
    def from_flag(cls, flag: str) -> "PoolingKind":
        for kind in cls:
            if kind.value == flag:
                return kind
        raise ValueError(f"unknown pooling kind {flag!r}; choose from "
                         f"{[k.value for k in cls]}")


def _check(x: np.ndarray, even: bool = False) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim < 2:
        raise ValueError(f"pooling needs >= 2 axes, got shape {x.shape}")
    if np.iscomplexobj(x):
        raise ValueError("pooling expects a real array")
    h, w = x.shape[-2:]
    if h < 2 or w < 2:
        raise ValueError(f"pooling needs spatial extents >= 2, got ({h}, {w})")
    if even and (h % 2 or w % 2):
        raise ValueError(f"this pooling kind needs even extents, got ({h}, {w})")
    return x


def _floor_stride2(x: np.ndarray) -> np.ndarray:
    # y[h, w] = x[2h, 2w] with output extents floor(H/2) x floor(W/2);
    # a plain [::2] would keep one sample too many on odd extents
    h, w = x.shape[-2:]
    return x[..., :2 * (h // 2):2, :2 * (w // 2):2].copy()


# ---------------------------------------------------------------------------
# frequency crop


def flc_pool(x: np.ndarray) -> np.ndarray:
    """Keep the centered (H/2, W/2) frequency window, return to space.

    Output values are scaled by (output area)/(input area), which makes
    constants map to themselves and matches dropping the discarded bins
    from an orthonormal-transform point of view.  The discarded
    imaginary part is an algebraic consequence of the one unmatched
    negative line kept when an extent is divisible by 4; it is not an
    error term and can be large for broadband inputs.
    """
    x = _check(x)
    h, w = x.shape[-2:]
    spec = spectral.fftshift(spectral.fft2(x))
    cropped = spectral.crop_center(spec, h // 2, w // 2)
    y = spectral.ifft2(spectral.ifftshift(cropped)).real
    gamma = ((h // 2) * (w // 2)) / (h * w)
    return (y * gamma).astype(x.dtype, copy=False)


def flc_pool_backward(g: np.ndarray, in_h: int, in_w: int) -> np.ndarray:
    """Adjoint of :func:`flc_pool` (the area factor cancels exactly)."""
    g = np.asarray(g)
    spec = spectral.fftshift(spectral.fft2(g))
    padded = spectral.zero_pad_center(spec, in_h, in_w)
    return spectral.ifft2(spectral.ifftshift(padded)).real.astype(g.dtype, copy=False)


def bandlimited_upsample2(y: np.ndarray) -> np.ndarray:
    """Ideal 2x upsampling by centered zero-padding in frequency.

    Inverse-direction companion of :func:`flc_pool`: for any real y,
    ``bandlimited_upsample2(y)[..., ::2, ::2] == y`` up to rounding, and
    the result has no energy above the cutoff by construction.
    """
    y = _check(y)
    h, w = y.shape[-2:]
    spec = spectral.fftshift(spectral.fft2(y))
    padded = spectral.zero_pad_center(spec, 2 * h, 2 * w)
    up = spectral.ifft2(spectral.ifftshift(padded)).real
    return (up * 4.0).astype(y.dtype, copy=False)


# ---------------------------------------------------------------------------
# dense reference filters (full resolution, circular boundary)


def lowpass_filter(x: np.ndarray) -> np.ndarray:
    """Ideal lowpass at full resolution: mask the spectrum, come back."""
    x = np.asarray(x)
    h, w = x.shape[-2:]
    mask = spectral.ideal_lowpass_mask(h, w, Layout.DC_AT_ORIGIN).astype(x.dtype)
    spec = np.fft.fft2(x, axes=(-2, -1))
    return np.fft.ifft2(spec * mask, axes=(-2, -1)).real.astype(x.dtype, copy=False)


def highpass_filter(x: np.ndarray) -> np.ndarray:
    """Complement of :func:`lowpass_filter` on the same mask."""
    x = np.asarray(x)
    h, w = x.shape[-2:]
    mask = spectral.ideal_lowpass_mask(h, w, Layout.DC_AT_ORIGIN).astype(x.dtype)
    spec = np.fft.fft2(x, axes=(-2, -1))
    return np.fft.ifft2(spec * (1.0 - mask), axes=(-2, -1)).real.astype(x.dtype, copy=False)


BLUR_KERNEL = np.outer([1.0, 2.0, 1.0], [1.0, 2.0, 1.0]) / 16.0

# offsets and python-float weights so float32 inputs stay float32
_BLUR_TAPS = [(dh, dw, BLUR_KERNEL[dh + 1, dw + 1].item())
              for dh in (-1, 0, 1) for dw in (-1, 0, 1)]


def blur_filter(x: np.ndarray) -> np.ndarray:
    """Circular 3x3 [1,2,1] (x) [1,2,1] / 16 smoothing at full resolution.

    Circular rather than reflective boundary handling, so the filter is
    exactly diagonal in frequency and shift-commutation holds exactly.
    """
    x = np.asarray(x)
    acc = np.zeros_like(x)
    for dh, dw, weight in _BLUR_TAPS:
        acc += weight * np.roll(x, (-dh, -dw), axis=(-2, -1))
    return acc


# ---------------------------------------------------------------------------
# spatial kinds


def strided_identity(x: np.ndarray) -> np.ndarray:
    """Every second sample, no filtering at all (the aliasing baseline)."""
    return _floor_stride2(_check(x))


def _upsample_zeros(g: np.ndarray, in_h: int, in_w: int) -> np.ndarray:
    out = np.zeros(g.shape[:-2] + (in_h, in_w), dtype=g.dtype)
    out[..., ::2, ::2] = g
    return out


def _windows2(x: np.ndarray) -> np.ndarray:
    # [..., H, W] -> [..., H/2, W/2, 4], window entries in row-major order
    h, w = x.shape[-2:]
    r = x.reshape(x.shape[:-2] + (h // 2, 2, w // 2, 2))
    r = np.moveaxis(r, -3, -2)
    return r.reshape(x.shape[:-2] + (h // 2, w // 2, 4))


def _unwindows2(gw: np.ndarray, in_h: int, in_w: int) -> np.ndarray:
    r = gw.reshape(gw.shape[:-3] + (in_h // 2, in_w // 2, 2, 2))
    r = np.moveaxis(r, -2, -3)
    return r.reshape(gw.shape[:-3] + (in_h, in_w))


def max_pool2(x: np.ndarray) -> np.ndarray:
    """2x2/stride-2 max; ties go to the first entry in row-major order."""
    x = _check(x, even=True)
    return _windows2(x).max(axis=-1)


def _max_pool2_with_idx(x):
    wins = _windows2(x)
    idx = np.argmax(wins, axis=-1)  # np.argmax already breaks ties low
    out = np.take_along_axis(wins, idx[..., None], axis=-1)[..., 0]
    return out, idx


def _max_pool2_backward(g, idx, in_h, in_w):
    gw = np.zeros(g.shape + (4,), dtype=g.dtype)
    np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
    return _unwindows2(gw, in_h, in_w)


def avg_pool2(x: np.ndarray) -> np.ndarray:
    x = _check(x, even=True)
    return _windows2(x).mean(axis=-1)


def blur_pool(x: np.ndarray) -> np.ndarray:
    """Smooth with :func:`blur_filter`, then take every second sample."""
    x = _check(x, even=True)
    return blur_filter(x)[..., ::2, ::2].copy()


def highpass_pool(x: np.ndarray) -> np.ndarray:
    """Complement-filtered input, subsampled: the residue flc throws away
    folded back onto the small grid.

    Together with flc the complement partitions the input's spectral
    energy bin-by-bin (the masks are exact complements); note the
    partition is stated on the masked spectra, not on the real-part
    fields, whose unmatched lines each keep only half their energy when
    an extent is divisible by 4.
    """
    x = _check(x)
    return _floor_stride2(highpass_filter(x))


def flc_plus_pool(x: np.ndarray, second: PoolingKind) -> np.ndarray:
    """flc plus a second branch, combined by addition.

    The second branch is either the complement-filtered input or the
    raw input, each subsampled with stride 2.  Shares one forward
    transform across both branches instead of composing the public
    single-branch functions.
    """
    x = _check(x)
    h, w = x.shape[-2:]
    spec = spectral.fft2(x)
    cropped = spectral.crop_center(spectral.fftshift(spec), h // 2, w // 2)
    gamma = ((h // 2) * (w // 2)) / (h * w)
    low = spectral.ifft2(spectral.ifftshift(cropped)).real * gamma
    if second is PoolingKind.FLC_PLUS_HIGHPASS:
        mask = spectral.ideal_lowpass_mask(h, w, Layout.DC_AT_ORIGIN).astype(x.dtype)
        dense = np.fft.ifft2(spec.data * (1.0 - mask), axes=(-2, -1)).real
        extra = _floor_stride2(dense)
    elif second is PoolingKind.FLC_PLUS_ORIGINAL:
        extra = _floor_stride2(x)
    else:
        raise ValueError(f"not a two-branch kind: {second}")
    return (low + extra).astype(x.dtype, copy=False)


# ---------------------------------------------------------------------------
# uniform forward/backward interface


def pool_forward(kind: PoolingKind, x: np.ndarray):
    """Pooled output plus the context the matching backward pass needs."""
    x = _check(x)
    h, w = x.shape[-2:]
    ctx = {"in_hw": (h, w)}
    if kind is PoolingKind.FLC:
        return flc_pool(x), ctx
    if kind in (PoolingKind.FLC_PLUS_HIGHPASS, PoolingKind.FLC_PLUS_ORIGINAL):
        return flc_plus_pool(x, kind), ctx
    if kind is PoolingKind.MAX_POOL2:
        out, idx = _max_pool2_with_idx(x)
        ctx["idx"] = idx
        return out, ctx
    if kind is PoolingKind.AVG_POOL2:
        return avg_pool2(x), ctx
    if kind is PoolingKind.STRIDED_IDENTITY:
        return strided_identity(x), ctx
    if kind is PoolingKind.BLUR_POOL:
        return blur_pool(x), ctx
    raise ValueError(f"unknown pooling kind {kind!r}")


def pool_backward(kind: PoolingKind, g: np.ndarray, ctx) -> np.ndarray:
    """Gradient with respect to the pooling input."""
    g = np.asarray(g)
    in_h, in_w = ctx["in_hw"]
    if kind is PoolingKind.FLC:
        return flc_pool_backward(g, in_h, in_w)
    if kind is PoolingKind.FLC_PLUS_HIGHPASS:
        up = _upsample_zeros(g, in_h, in_w)
        # the dense complement filter has an even real kernel, hence is
        # its own adjoint; subsampling's adjoint is zero-stuffing
        return flc_pool_backward(g, in_h, in_w) + highpass_filter(up)
    if kind is PoolingKind.FLC_PLUS_ORIGINAL:
        return flc_pool_backward(g, in_h, in_w) + _upsample_zeros(g, in_h, in_w)
    if kind is PoolingKind.MAX_POOL2:
        return _max_pool2_backward(g, ctx["idx"], in_h, in_w)
    if kind is PoolingKind.AVG_POOL2:
        gw = np.broadcast_to(g[..., None] / 4.0, g.shape + (4,)).astype(g.dtype)
        return _unwindows2(gw, in_h, in_w)
    if kind is PoolingKind.STRIDED_IDENTITY:
        return _upsample_zeros(g, in_h, in_w)
    if kind is PoolingKind.BLUR_POOL:
        # blur kernel is even too: adjoint = blur of the zero-stuffed grad
        return blur_filter(_upsample_zeros(g, in_h, in_w))
    raise ValueError(f"unknown pooling kind {kind!r}")


def dense_map(kind: PoolingKind, x: np.ndarray) -> np.ndarray:
    """Pre-subsample field of ``kind``: stride-2 samples give the pooled
    output.  This is the full-resolution signal the pooled grid actually
    samples, which makes the above-cutoff energy comparison between
    kinds meaningful.  Even extents only (analysis-side usage)."""
    x = _check(x, even=True)
    if kind is PoolingKind.FLC:
        return bandlimited_upsample2(flc_pool(x))
    if kind is PoolingKind.FLC_PLUS_HIGHPASS:
        return bandlimited_upsample2(flc_pool(x)) + highpass_filter(x)
    if kind is PoolingKind.FLC_PLUS_ORIGINAL:
        return bandlimited_upsample2(flc_pool(x)) + x
    if kind is PoolingKind.MAX_POOL2:
        return _sliding_reduce(x, np.maximum)
    if kind is PoolingKind.AVG_POOL2:
        return _sliding_reduce(x, np.add) / 4.0
    if kind is PoolingKind.STRIDED_IDENTITY:
        return x.copy()
    if kind is PoolingKind.BLUR_POOL:
        return blur_filter(x)
    raise ValueError(f"unknown pooling kind {kind!r}")


def _sliding_reduce(x, op):
    # 2x2 sliding window with wraparound, anchored at the top-left corner
    right = np.roll(x, -1, axis=-1)
    down = np.roll(x, -1, axis=-2)
    diag = np.roll(x, (-1, -1), axis=(-2, -1))
    return op(op(x, right), op(down, diag))
