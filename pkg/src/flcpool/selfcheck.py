"""Runtime property suite behind ``selftest`` and ``gradcheck``.

These are the fast end-user checks (machine-precision identities of the
spectral path plus finite-difference gradient verification); the test
suite carries its own independent oracles.
"""

from __future__ import annotations

import numpy as np

from . import attacks, nn, pooling, spectral
from .pooling import PoolingKind
from .tensor import Rng


def _circular_conv2(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Spatial circular convolution of [...,H,W] with an [H,W] kernel."""
    out = np.zeros_like(x)
    h, w = kernel.shape
    for dh in range(h):
        for dw in range(w):
            k = kernel[dh, dw]
            if k != 0.0:
                out += k * np.roll(x, (dh, dw), axis=(-2, -1))
    return out


def check_fft_vs_dft(rng: Rng, tol: float = 1e-10):
    worst = 0.0
    for e_h in (1, 2, 3, 4, 7, 8):
        for e_w in (1, 2, 5, 8):
            x = rng.child(e_h, e_w).normal((2, 1, e_h, e_w))
            fast = spectral.fft2(x).data
            slow = spectral.dft2(x).data
            num = float(np.abs(fast - slow).max())
            den = max(float(np.abs(slow).max()), 1e-30)
            worst = max(worst, num / den)
            back = spectral.ifft2(spectral.fft2(x)).real
            worst = max(worst, float(np.abs(back - x).max()))
    return "fft_vs_dft", worst <= tol, f"max rel err {worst:.3e}"


def check_parseval(rng: Rng, tol: float = 1e-10):
    worst = 0.0
    for e in (4, 7, 16):
        x = rng.child(e).normal((3, 2, e, e))
        spatial = float(np.sum(x.astype(np.float64) ** 2))
        spec = float(spectral.fft2(x).energy()) / (e * e)
        worst = max(worst, abs(spatial - spec) / max(spatial, 1e-30))
    return "parseval", worst <= tol, f"max rel err {worst:.3e}"


def check_sinc_equivalence(rng: Rng, tol: float = 1e-10):
    worst = 0.0
    for e in (8, 12, 16):
        x = rng.child(e).normal((2, 1, e, e))
        kernel = spectral.sinc_kernel(e, e)
        dense = _circular_conv2(x, kernel)
        ref = dense[..., ::2, ::2]
        got = pooling.flc_pool(x)
        num = float(np.abs(got - ref).max())
        den = max(float(np.abs(ref).max()), 1e-30)
        worst = max(worst, num / den)
    return "sinc_equivalence", worst <= tol, f"max rel err {worst:.3e}"


def check_alias_free(rng: Rng, tol: float = 1e-14):
    x = rng.child(0).normal((8, 1, 16, 16))
    up = pooling.bandlimited_upsample2(pooling.flc_pool(x))
    _, share = spectral.above_nyquist_energy(up)
    return "alias_free", share <= tol, f"above-cutoff share {share:.3e}"


def check_adjoints(rng: Rng, tol: float = 1e-10):
    worst, e = 0.0, 16
    for i, kind in enumerate(PoolingKind):
        x = rng.child(i, 0).normal((2, 3, e, e))
        out, ctx = pooling.pool_forward(kind, x)
        y = rng.child(i, 1).normal(out.shape)
        lhs = float(np.sum(out * y))
        rhs = float(np.sum(x * pooling.pool_backward(kind, y, ctx)))
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), 1e-30))
    return "adjoints", worst <= tol, f"max rel err {worst:.3e}"


def check_even_shift(rng: Rng, tol: float = 1e-10):
    from .tensor import circular_shift

    worst = 0.0
    x = rng.child(0).normal((4, 1, 16, 16))
    for a, b in ((1, 0), (0, 3), (5, 2)):
        lhs = pooling.flc_pool(circular_shift(x, 2 * a, 2 * b))
        rhs = circular_shift(pooling.flc_pool(x), a, b)
        worst = max(worst, float(np.abs(lhs - rhs).max()))
    return "even_shift_equivariance", worst <= tol, f"max abs err {worst:.3e}"


def run_selftest(seed: int = 0):
    """All property checks; each entry is (name, passed, detail)."""
    rng = Rng(seed)
    return [
        check_fft_vs_dft(rng.child(0)),
        check_parseval(rng.child(1)),
        check_sinc_equivalence(rng.child(2)),
        check_alias_free(rng.child(3)),
        check_adjoints(rng.child(4)),
        check_even_shift(rng.child(5)),
    ]


def finite_difference_input_grad(model: nn.Network, x: np.ndarray,
                                 labels: np.ndarray, coords,
                                 step: float = 1e-5) -> np.ndarray:
    """Central differences of the mean loss at the given flat pixel coords."""
    flat = x.reshape(-1)
    out = np.empty(len(coords), dtype=np.float64)
    for i, c in enumerate(coords):
        keep = flat[c]
        flat[c] = keep + step
        up = attacks.per_example_loss(model.forward(x, nn.Mode.EVAL), labels).mean()
        flat[c] = keep - step
        down = attacks.per_example_loss(model.forward(x, nn.Mode.EVAL), labels).mean()
        flat[c] = keep
        out[i] = (up - down) / (2.0 * step)
    return out


def gradcheck(pooling_kind: PoolingKind, seed: int = 0, coords: int = 32,
              step: float = 1e-5):
    """Analytic input gradient vs central differences for one architecture.

    Runs in double precision; returns (max relative error, #coords).
    """
    rng = Rng(seed)
    model = nn.build_minicnn(pooling_kind, in_channels=1, classes=4, width=4,
                             rng=rng.child(0), dtype=np.dtype(np.float64))
    x = rng.child(1).uniform((4, 1, 16, 16), 0.0, 1.0)
    labels = rng.child(2).integers(0, 4, (4,))
    _, grad = attacks.input_gradient(model, x, labels)
    picks = rng.child(3).permutation(x.size)[:coords]
    fd = finite_difference_input_grad(model, x, labels, picks, step)
    an = grad.reshape(-1)[picks]
    scale = np.maximum(np.abs(fd), 1e-8)
    return float(np.max(np.abs(an - fd) / scale)), int(coords)
