"""White-box gradient attacks: single-step sign attacks and iterated PGD.

All attacks run the model in eval mode (frozen normalization
statistics), never touch model state beyond transient gradient caches,
and take every random draw from an explicit rng stream.  Perturbations
live in an epsilon-ball around the *original* input and are projected
back after every step, then clamped to the pixel range (project first,
clamp second).  Every public attack asserts its own budget on the way
out, so a violation fails loudly in test builds.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .tensor import Rng


class Norm(enum.Enum):
    LINF = "linf"
    L2 = "l2"

    @classmethod
    def from_flag(cls, flag: str) -> "Norm":
        for n in cls:
            if n.value == flag:
                return n
        raise ValueError(f"unknown norm {flag!r}")


@dataclass(frozen=True)
class AttackConfig:
    """Budget and schedule of one attack.

    Defaults are the evaluation-grade PGD settings; one-step training
    attacks come from :meth:`for_fgsm_at`.  ``epsilon`` may be zero so a
    zero-budget run can double as a clean run (the degenerate identity
    the training tests lean on).
    """

    epsilon: float = 8 / 255
    alpha: float = 2 / 255
    steps: int = 50
    restarts: int = 10
    norm: Norm = Norm.LINF
    clamp: tuple = (0.0, 1.0)

    def __post_init__(self):
        if self.epsilon < 0 or self.alpha <= 0:
            raise ValueError("need epsilon >= 0 and alpha > 0")
        if self.steps < 1 or self.restarts < 1:
            raise ValueError("need steps >= 1 and restarts >= 1")
        if not self.clamp[0] < self.clamp[1]:
            raise ValueError(f"empty clamp range {self.clamp}")

    @classmethod
    def for_fgsm_at(cls, epsilon: float = 8 / 255, alpha: float = 10 / 255):
        return cls(epsilon=epsilon, alpha=alpha, steps=1, restarts=1)

    @classmethod
    def for_pgd_val(cls, epsilon: float = 8 / 255):
        # cheap per-epoch validation flavor: fewer steps, single restart
        return cls(epsilon=epsilon, steps=10, restarts=1)


def input_gradient(model: nn.Network, x: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy loss and its gradient with respect to the pixels."""
    logits = model.forward(x, nn.Mode.EVAL)
    loss, gl = nn.cross_entropy(logits, labels)
    return loss, model.backward(gl)


def per_example_loss(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Unreduced cross-entropy, double precision, max-shifted."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return -logp[np.arange(len(labels)), labels].astype(np.float64)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def _clamp(x, lo, hi):
    return np.clip(x, x.dtype.type(lo), x.dtype.type(hi))


def _flat_norms(d: np.ndarray) -> np.ndarray:
    # per-example l2 norm over all non-batch axes, shape [N,1,1,1]
    return np.sqrt((d.astype(np.float64) ** 2).sum(axis=(1, 2, 3),
                                                   keepdims=True)).astype(d.dtype)


def _project(delta: np.ndarray, epsilon: float, norm: Norm) -> np.ndarray:
    if norm is Norm.LINF:
        return np.clip(delta, -delta.dtype.type(epsilon), delta.dtype.type(epsilon))
    norms = _flat_norms(delta)
    scale = np.where(norms > epsilon,
                     np.divide(epsilon, norms, out=np.ones_like(norms),
                               where=norms > 0),
                     np.ones_like(norms))
    return delta * scale.astype(delta.dtype)


def _ascent_step(grad: np.ndarray, alpha: float, norm: Norm) -> np.ndarray:
    if norm is Norm.LINF:
        return grad.dtype.type(alpha) * np.sign(grad)
    norms = _flat_norms(grad)
    scale = np.divide(alpha, norms, out=np.zeros_like(norms), where=norms > 0)
    return grad * scale.astype(grad.dtype)  # zero gradient -> zero step


def _assert_budget(x, adv, epsilon, norm, clamp):
    lo, hi = clamp
    assert adv.min() >= lo and adv.max() <= hi, "pixel clamp violated"
    # adv holds fl(x + delta): each pixel may sit ~half an ulp of the
    # clamp range off the mathematical perturbation, so the slack has to
    # scale with the working precision (float32 ulp at 1.0 is ~1.2e-7).
    ulp = float(np.spacing(x.dtype.type(max(abs(lo), abs(hi), epsilon))))
    diff = adv.astype(np.float64) - x.astype(np.float64)
    if norm is Norm.LINF:
        assert np.abs(diff).max() <= epsilon + 1e-12 + 4.0 * ulp, \
            "linf budget violated"
    else:
        slack = 1e-6 + 4.0 * ulp * math.sqrt(diff[0].size)
        assert _flat_norms(diff).max() <= epsilon + slack, "l2 budget violated"


def fgsm(model: nn.Network, x: np.ndarray, labels: np.ndarray,
         epsilon: float, clamp=(0.0, 1.0)) -> np.ndarray:
    """One signed step of size epsilon, clamped; sign(0) = 0."""
    _, grad = input_gradient(model, x, labels)
    adv = _clamp(x + x.dtype.type(epsilon) * np.sign(grad), *clamp)
    _assert_budget(x, adv, epsilon, Norm.LINF, clamp)
    return adv


def fast_fgsm(model: nn.Network, x: np.ndarray, labels: np.ndarray,
              epsilon: float, alpha: float, clamp=(0.0, 1.0)) -> np.ndarray:
    """Signed step of size alpha, projected back to the epsilon ball.

    With alpha <= epsilon the projection is inactive and this is fgsm at
    step alpha; an oversized step (10/255 against 8/255) saturates the
    ball wherever the gradient sign is nonzero.
    """
    _, grad = input_gradient(model, x, labels)
    delta = _project(x.dtype.type(alpha) * np.sign(grad), epsilon, Norm.LINF)
    adv = _clamp(x + delta, *clamp)
    _assert_budget(x, adv, epsilon, Norm.LINF, clamp)
    return adv


def pgd(model: nn.Network, x: np.ndarray, labels: np.ndarray,
        cfg: AttackConfig, rng: Rng | None = None,
        random_start: bool = True) -> np.ndarray:
    """Projected gradient ascent on the cross-entropy, strongest-of-restarts.

    Each restart runs ``cfg.steps`` iterations of step/project/clamp;
    across restarts the per-example perturbation with the highest loss
    wins, so more restarts never weaken the attack.  With random_start
    off, one restart, one step, and alpha == epsilon, the linf attack
    degenerates to :func:`fgsm` exactly.
    """
    if random_start and rng is None:
        raise ValueError("random_start=True needs an rng")
    best_x = x.copy()
    best_loss = np.full(len(x), -np.inf)
    for _ in range(cfg.restarts):
        if random_start:
            # uniform in the epsilon cube, then projected -- which only
            # matters for the l2 ball
            delta = rng.uniform(x.shape, -cfg.epsilon, cfg.epsilon).astype(x.dtype)
            adv = _clamp(x + _project(delta, cfg.epsilon, cfg.norm), *cfg.clamp)
        else:
            adv = x.copy()
        for _ in range(cfg.steps):
            _, grad = input_gradient(model, adv, labels)
            adv = adv + _ascent_step(grad, cfg.alpha, cfg.norm)
            adv = _clamp(x + _project(adv - x, cfg.epsilon, cfg.norm), *cfg.clamp)
        loss = per_example_loss(model.forward(adv, nn.Mode.EVAL), labels)
        better = loss > best_loss
        best_x[better] = adv[better]
        best_loss = np.where(better, loss, best_loss)
    _assert_budget(x, best_x, cfg.epsilon, cfg.norm, cfg.clamp)
    return best_x


# ---------------------------------------------------------------------------
# dataset-level evaluations


def _batches(n: int, batch_size: int):
    for lo in range(0, n, batch_size):
        yield lo, min(lo + batch_size, n)


def transfer_eval(source_model: nn.Network, target_model: nn.Network,
                  x: np.ndarray, y: np.ndarray, cfg: AttackConfig,
                  rng: Rng, batch_size: int = 128) -> float:
    """Accuracy of the target on PGD perturbations crafted on the source."""
    if x.shape[0] == 0:
        raise ValueError("empty dataset")
    correct = 0
    for i, (lo, hi) in enumerate(_batches(len(x), batch_size)):
        adv = pgd(source_model, x[lo:hi], y[lo:hi], cfg, rng.child(i))
        pred = np.argmax(target_model.forward(adv, nn.Mode.EVAL), axis=1)
        correct += int((pred == y[lo:hi]).sum())
    return correct / len(x)


def confidence_stats(model: nn.Network, x: np.ndarray, y: np.ndarray,
                     cfg: AttackConfig, rng: Rng, batch_size: int = 128) -> dict:
    """Mean max-softmax on correct clean inputs vs on wrong attacked ones.

    Either entry is None when its subset is empty (a model that is never
    fooled has no wrong-prediction confidence to report).
    """
    if x.shape[0] == 0:
        raise ValueError("empty dataset")
    clean_conf, adv_conf = [], []
    for i, (lo, hi) in enumerate(_batches(len(x), batch_size)):
        xb, yb = x[lo:hi], y[lo:hi]
        probs = softmax(model.forward(xb, nn.Mode.EVAL).astype(np.float64))
        pred = probs.argmax(axis=1)
        clean_conf.extend(probs[pred == yb].max(axis=1))
        adv = pgd(model, xb, yb, cfg, rng.child(i))
        aprobs = softmax(model.forward(adv, nn.Mode.EVAL).astype(np.float64))
        apred = aprobs.argmax(axis=1)
        adv_conf.extend(aprobs[apred != yb].max(axis=1))
    return {
        "clean_conf_correct": float(np.mean(clean_conf)) if clean_conf else None,
        "adv_conf_wrong": float(np.mean(adv_conf)) if adv_conf else None,
    }
