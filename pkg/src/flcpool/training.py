"""Training loops, run histories, overfitting detection, checkpoints.

Clean training and single-step adversarial training share one loop
skeleton; the clean path simply skips the batch-perturbation stage.
Because the perturbation with a zero budget is the identity and the
evaluation attacks are fixed independent of the training attack, a
zero-epsilon adversarial run reproduces the clean trajectory bit for
bit -- the test suite leans on that.

Randomness is split into addressed streams per purpose and epoch
(shuffling: child(1, epoch); PGD validation: child(2, epoch)), so no
stage's draws depend on another stage's consumption.
"""

from __future__ import annotations

import io
import struct
import time
from dataclasses import dataclass

import numpy as np

from . import attacks, nn
from .attacks import AttackConfig
from .data import Dataset, FormatError
from .tensor import DOUBLE, SINGLE, Rng

# fixed evaluation attacks, identical for clean and adversarial runs
EVAL_EPSILON = 8 / 255
PGD_VAL_CONFIG = AttackConfig.for_pgd_val(EVAL_EPSILON)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int = 128
    lr_max: float = 0.2
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    early_stop_threshold: float | None = None  # None = never stop early

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 2:
            raise ValueError("need epochs >= 1 and batch_size >= 2")
        if self.lr_max < 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ValueError("negative hyperparameter")
        if self.early_stop_threshold is not None and not (
                0 < self.early_stop_threshold <= 1):
            raise ValueError("early_stop_threshold must be in (0, 1]")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int          # 1-based, matching the CSV column
    lr: float
    train_loss: float
    train_acc: float
    fgsm_test_acc: float
    pgd_val_acc: float
    clean_test_acc: float
    wall_seconds: float


CSV_HEADER = "epoch,lr,train_loss,train_acc,fgsm_test_acc,pgd_val_acc," \
             "clean_test_acc,wall_seconds"
_CSV_FIELDS = CSV_HEADER.split(",")


class RunHistory:
    """One completed record per epoch, with CSV round-tripping.

    Floats are serialized with shortest-round-trip repr, so identical
    runs produce identical bytes (wall_seconds being the one column that
    legitimately differs between reruns).
    """

    def __init__(self, records=()):
        self.records = list(records)

    def append(self, record: EpochRecord):
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> list:
        if name not in _CSV_FIELDS:
            raise KeyError(f"no column {name!r}")
        return [getattr(r, name) for r in self.records]

    def to_csv(self) -> str:
        lines = [CSV_HEADER]
        for r in self.records:
            lines.append(",".join(
                str(r.epoch) if f == "epoch" else repr(float(getattr(r, f)))
                for f in _CSV_FIELDS))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "RunHistory":
        lines = [ln for ln in text.splitlines() if ln]
        if not lines or lines[0] != CSV_HEADER:
            raise FormatError(f"bad metrics header: {lines[:1]}")
        records = []
        for ln in lines[1:]:
            vals = ln.split(",")
            if len(vals) != len(_CSV_FIELDS):
                raise FormatError(f"bad metrics row: {ln!r}")
            records.append(EpochRecord(int(vals[0]),
                                       *(float(v) for v in vals[1:])))
        return cls(records)


@dataclass(frozen=True)
class CoVerdict:
    """Outcome of the catastrophic-overfitting detector."""

    occurred: bool
    epoch: int | None           # first detection epoch (1-based)
    pgd_peak: float
    pgd_at_detection: float | None


def detect_catastrophic_overfitting(history: RunHistory,
                                    drop_ratio: float = 0.5,
                                    fgsm_floor: float = 0.8,
                                    min_peak: float = 0.3) -> CoVerdict:
    """First epoch where PGD accuracy collapsed while FGSM accuracy held.

    Collapse: pgd <= drop_ratio * (running PGD peak); held: fgsm >=
    fgsm_floor * (running FGSM max), both at the same epoch.  The peak
    must have reached min_peak first -- a model that was never robust
    has nothing to lose catastrophically, and early-training noise
    around chance level would otherwise trip the ratio test (a bounce
    from 0.26 to 0.13 is chatter, not a collapse).
    """
    if len(history) < 3:
        raise ValueError(f"need >= 3 evaluated epochs, got {len(history)}")
    pgd = history.column("pgd_val_acc")
    fgsm = history.column("fgsm_test_acc")
    epochs = history.column("epoch")
    pgd_peak = fgsm_max = 0.0
    for i in range(len(pgd)):
        pgd_peak = max(pgd_peak, pgd[i])
        fgsm_max = max(fgsm_max, fgsm[i])
        if (pgd_peak > 0 and pgd_peak >= min_peak
                and pgd[i] <= drop_ratio * pgd_peak
                and fgsm[i] >= fgsm_floor * fgsm_max):
            return CoVerdict(True, epochs[i], pgd_peak, pgd[i])
    return CoVerdict(False, None, pgd_peak, None)


def early_stop_monitor(pgd_curve, threshold: float) -> int | None:
    """1-based index where the curve first falls below threshold * its
    running max; None if it never does.  Never fires on a non-decreasing
    curve.  Accepts a RunHistory or a bare sequence of PGD accuracies."""
    if not 0 < threshold <= 1:
        raise ValueError("threshold must be in (0, 1]")
    if isinstance(pgd_curve, RunHistory):
        pgd_curve = pgd_curve.column("pgd_val_acc")
    peak = 0.0
    for i, v in enumerate(pgd_curve):
        peak = max(peak, v)
        if v < threshold * peak:
            return i + 1
    return None


# ---------------------------------------------------------------------------
# evaluation


def _batches(n: int, batch_size: int):
    for lo in range(0, n, batch_size):
        yield lo, min(lo + batch_size, n)


def evaluate(model: nn.Network, x: np.ndarray, y: np.ndarray,
             method: str = "clean", cfg: AttackConfig | None = None,
             rng: Rng | None = None, batch_size: int = 128) -> dict:
    """Accuracy and mean loss, optionally under attack.

    method is one of "clean", "fgsm", "pgd"; the attacked variants need
    a config (and pgd an rng for its random starts).
    """
    if len(x) == 0:
        raise ValueError("empty dataset")
    if method != "clean" and cfg is None:
        raise ValueError(f"method {method!r} needs an AttackConfig")
    x = x.astype(model.dtype, copy=False)
    correct = 0
    loss_sum = 0.0
    for i, (lo, hi) in enumerate(_batches(len(x), batch_size)):
        xb, yb = x[lo:hi], y[lo:hi]
        if method == "fgsm":
            xb = attacks.fgsm(model, xb, yb, cfg.epsilon, cfg.clamp)
        elif method == "pgd":
            xb = attacks.pgd(model, xb, yb, cfg,
                             rng.child(i) if rng is not None else None,
                             random_start=rng is not None)
        elif method != "clean":
            raise ValueError(f"unknown evaluation method {method!r}")
        logits = model.forward(xb, nn.Mode.EVAL)
        loss_sum += float(attacks.per_example_loss(logits, yb).sum())
        correct += int((np.argmax(logits, axis=1) == yb).sum())
    return {"accuracy": correct / len(x), "loss": loss_sum / len(x)}


# ---------------------------------------------------------------------------
# the shared loop


def _epoch_metrics(model, xval, yval, xtest, ytest, val_rng, batch_size):
    fgsm_cfg = AttackConfig(epsilon=EVAL_EPSILON, alpha=EVAL_EPSILON,
                            steps=1, restarts=1)
    fgsm_test = evaluate(model, xtest, ytest, "fgsm", fgsm_cfg,
                         batch_size=batch_size)["accuracy"]
    pgd_val = evaluate(model, xval, yval, "pgd", PGD_VAL_CONFIG, val_rng,
                       batch_size=batch_size)["accuracy"]
    clean_test = evaluate(model, xtest, ytest, "clean",
                          batch_size=batch_size)["accuracy"]
    return fgsm_test, pgd_val, clean_test


def _train_loop(model: nn.Network, dataset: Dataset, cfg: TrainConfig,
                at_attack: AttackConfig | None):
    xtr, ytr = dataset.split("train")
    xval, yval = dataset.split("val")
    xtest, ytest = dataset.split("test")
    if len(xtr) == 0:
        raise ValueError("empty training split")
    xtr = xtr.astype(model.dtype, copy=False)
    xval = xval.astype(model.dtype, copy=False)
    xtest = xtest.astype(model.dtype, copy=False)

    root = Rng(cfg.seed)
    opt = nn.SgdMomentum(model.parameters(), cfg.momentum, cfg.weight_decay)
    history = RunHistory()
    best_pgd, best_state = -1.0, None

    for epoch in range(cfg.epochs):
        lr = nn.cyclic_lr(epoch, cfg.epochs, cfg.lr_max)
        order = root.child(1, epoch).permutation(len(xtr))
        t0 = time.perf_counter()
        loss_sum, correct, seen = 0.0, 0, 0
        for lo, hi in _batches(len(xtr), cfg.batch_size):
            take = order[lo:hi]
            if len(take) < 2:
                continue  # train-mode batch statistics need >= 2 examples
            xb, yb = xtr[take], ytr[take]
            if at_attack is not None:
                xb = attacks.fast_fgsm(model, xb, yb, at_attack.epsilon,
                                       at_attack.alpha, at_attack.clamp)
            logits = model.forward(xb, nn.Mode.TRAIN)
            loss, gl = nn.cross_entropy(logits, yb)
            model.backward(gl)
            opt.step(model.parameters(), model.gradients(), lr)
            loss_sum += loss * len(take)
            correct += int((np.argmax(logits, axis=1) == yb).sum())
            seen += len(take)
        wall = time.perf_counter() - t0
        if seen == 0:
            raise ValueError("every batch was smaller than 2 examples; "
                             "shrink batch_size or grow the training split")

        fgsm_test, pgd_val, clean_test = _epoch_metrics(
            model, xval, yval, xtest, ytest, root.child(2, epoch),
            cfg.batch_size)
        history.append(EpochRecord(
            epoch=epoch + 1, lr=lr,
            train_loss=loss_sum / seen, train_acc=correct / seen,
            fgsm_test_acc=fgsm_test, pgd_val_acc=pgd_val,
            clean_test_acc=clean_test, wall_seconds=wall))

        if cfg.early_stop_threshold is not None:
            if pgd_val > best_pgd:
                best_pgd = pgd_val
                best_state = {k: v.copy() for k, v in model.state_dict().items()}
            if early_stop_monitor(history.column("pgd_val_acc"),
                                  cfg.early_stop_threshold) is not None:
                model.load_state_dict(best_state)  # keep the best-PGD model
                break
    return model, history


def train_clean(model: nn.Network, dataset: Dataset, cfg: TrainConfig):
    """Minibatch SGD with the triangular schedule; metrics every epoch."""
    return _train_loop(model, dataset, cfg, at_attack=None)


def train_fgsm_at(model: nn.Network, dataset: Dataset, cfg: TrainConfig,
                  attack: AttackConfig):
    """Same loop, but every batch is replaced by its one-step adversarial
    counterpart before the SGD step."""
    return _train_loop(model, dataset, cfg, at_attack=attack)


# ---------------------------------------------------------------------------
# checkpoints

_MAGIC = b"FLCK"
_VERSION = 1
_PRECISION_TAGS = {np.dtype(DOUBLE): 0, np.dtype(SINGLE): 1}
_TAG_DTYPES = {0: np.dtype(DOUBLE), 1: np.dtype(SINGLE)}
_TAG_NAMES = {0: "double", 1: "single"}


def save_checkpoint(model: nn.Network, path: str):
    """Binary dump: magic, version, precision tag, descriptor, then one
    record (name, rank, extents, little-endian payload) per entry of the
    state dict, in deterministic order."""
    dtype = np.dtype(model.dtype)
    if dtype not in _PRECISION_TAGS:
        raise ValueError(f"unsupported precision {dtype}")
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<HB", _VERSION, _PRECISION_TAGS[dtype]))
    desc = model.descriptor.encode("utf-8")
    buf.write(struct.pack("<I", len(desc)))
    buf.write(desc)
    le_scalar = dtype.newbyteorder("<")
    for name, arr in model.state_dict().items():
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<I", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype=le_scalar).tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def _take(buf: bytes, offset: int, count: int, path: str):
    if offset + count > len(buf):
        raise FormatError(f"{path}: truncated at byte {len(buf)}, "
                          f"needed {offset + count}")
    return buf[offset:offset + count], offset + count


def load_checkpoint(path: str, precision: str | None = None) -> nn.Network:
    """Rebuild the architecture from its descriptor and restore all state.

    ``precision`` ("double"/"single"), when given, must match the file:
    cross-precision loads are refused rather than silently cast.
    """
    with open(path, "rb") as f:
        buf = f.read()
    raw, off = _take(buf, 0, 7, path)
    if raw[:4] != _MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    version, tag = struct.unpack("<HB", raw[4:])
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if tag not in _TAG_DTYPES:
        raise FormatError(f"{path}: unknown precision tag {tag}")
    if precision is not None and _TAG_NAMES[tag] != precision:
        raise FormatError(f"{path}: holds {_TAG_NAMES[tag]} parameters, "
                          f"refusing cross-precision load as {precision}")
    dtype = _TAG_DTYPES[tag]

    raw, off = _take(buf, off, 4, path)
    desc_len = struct.unpack("<I", raw)[0]
    raw, off = _take(buf, off, desc_len, path)
    descriptor = raw.decode("utf-8")

    entries = {}
    le_scalar = dtype.newbyteorder("<")
    while off < len(buf):
        raw, off = _take(buf, off, 4, path)
        name_len = struct.unpack("<I", raw)[0]
        raw, off = _take(buf, off, name_len, path)
        name = raw.decode("utf-8")
        raw, off = _take(buf, off, 1, path)
        rank = raw[0]
        raw, off = _take(buf, off, 4 * rank, path)
        shape = struct.unpack(f"<{rank}I", raw)
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        raw, off = _take(buf, off, count * dtype.itemsize, path)
        entries[name] = np.frombuffer(raw, dtype=le_scalar).astype(
            dtype).reshape(shape)

    try:
        arch = nn.parse_minicnn_descriptor(descriptor)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc
    model = nn.build_minicnn(arch["pooling"], arch["in_channels"],
                             arch["classes"], arch["width"],
                             Rng(0), dtype=dtype)
    try:
        model.load_state_dict(entries)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return model
