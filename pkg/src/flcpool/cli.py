"""Command-line front end.

Subcommands: train, attack, eval, analyze, selftest, gradcheck.
Exit codes: 0 success, 1 check/assertion failure, 2 usage error,
3 I/O or file-format error.

Every run is described by a flat RunSpec; each flag overrides the
corresponding field of a ``--spec`` file.  The canonical serialization
(sorted keys, no whitespace) is written to ``<out>/runspec.json``, its
sha256 to ``<out>/runspec.sha256``, and the hash is repeated inside
``summary.json`` -- rerunning from the written spec reproduces the run.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import analysis, attacks, data, figures, nn, selfcheck, training
from .attacks import AttackConfig, Norm
from .pooling import PoolingKind
from .tensor import DOUBLE, SINGLE, Rng


class UsageError(ValueError):
    pass


def parse_scalar(text: str) -> float:
    """Float flag values; accepts plain decimals and fractions ("8/255")."""
    try:
        if "/" in text:
            num, den = text.split("/", 1)
            value = float(num) / float(den)
        else:
            value = float(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise UsageError(f"bad numeric value {text!r}") from exc
    if not np.isfinite(value):
        raise UsageError(f"non-finite numeric value {text!r}")
    return value


@dataclass(frozen=True)
class RunSpec:
    """Flat description of one run; every field is also a CLI flag."""

    command: str = "train"
    pooling: str = "flc"
    dataset: str = "synth"
    checkpoint: str = ""
    precision: str = "double"
    width: int = 8
    classes: int = 4
    attack: str = "fgsm"        # train: clean|fgsm; attack/eval: fgsm|pgd
    epsilon: float = 8 / 255
    alpha: float = 10 / 255
    steps: int = 50
    restarts: int = 10
    norm: str = "linf"
    epochs: int = 30
    batch_size: int = 128
    lr_max: float = 0.2
    momentum: float = 0.9
    weight_decay: float = 5e-4
    early_stop: float = 0.0     # 0 disables the monitor
    seed: int = 0
    max_shift: int = 4
    pairs: int = 512

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def canonical_bytes(self) -> bytes:
        return (json.dumps(self.as_dict(), sort_keys=True,
                           separators=(",", ":")) + "\n").encode("ascii")

    def sha256(self) -> str:
        return hashlib.sha256(self.canonical_bytes()).hexdigest()


_FLOAT_FIELDS = {"epsilon", "alpha", "lr_max", "momentum", "weight_decay",
                 "early_stop"}
_INT_FIELDS = {"width", "classes", "steps", "restarts", "epochs",
               "batch_size", "seed", "max_shift", "pairs"}


def build_spec(command: str, spec_path: str | None, flags: dict) -> RunSpec:
    merged = {f.name: f.default for f in dataclasses.fields(RunSpec)}
    if spec_path is not None:
        try:
            with open(spec_path, "r", encoding="utf-8") as f:
                loaded = json.load(f)
        except json.JSONDecodeError as exc:
            raise data.FormatError(f"{spec_path}: not valid JSON ({exc})")
        if not isinstance(loaded, dict):
            raise data.FormatError(f"{spec_path}: spec must be a flat object")
        for key, value in loaded.items():
            if key not in merged:
                raise UsageError(f"unknown RunSpec field {key!r} in {spec_path}")
            merged[key] = value
    for key, value in flags.items():
        if value is not None:
            merged[key] = value
    merged["command"] = command

    for key in _FLOAT_FIELDS:
        merged[key] = parse_scalar(str(merged[key]))
    for key in _INT_FIELDS:
        try:
            merged[key] = int(merged[key])
        except (TypeError, ValueError):
            raise UsageError(f"field {key!r} must be an integer, "
                             f"got {merged[key]!r}")
    spec = RunSpec(**merged)

    try:
        PoolingKind.from_flag(spec.pooling)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if spec.norm not in ("linf", "l2"):
        raise UsageError(f"--norm must be linf or l2, got {spec.norm!r}")
    if spec.precision not in ("double", "single"):
        raise UsageError(f"--precision must be double or single, "
                         f"got {spec.precision!r}")
    if spec.command == "train" and spec.attack not in ("clean", "fgsm"):
        raise UsageError("train supports --attack clean|fgsm")
    if spec.command in ("attack", "eval") and spec.attack not in ("fgsm", "pgd"):
        raise UsageError(f"{spec.command} supports --attack fgsm|pgd")
    return spec


def _dtype(spec: RunSpec) -> np.dtype:
    return np.dtype(DOUBLE if spec.precision == "double" else SINGLE)


def load_dataset(spec: RunSpec) -> data.Dataset:
    """synth[:<n>], idx:<images>,<labels>, or cifar:<path>."""
    name = spec.dataset
    if name == "synth" or name.startswith("synth:"):
        n = data.DESK_TOTAL
        if ":" in name:
            try:
                n = int(name.split(":", 1)[1])
            except ValueError:
                raise UsageError(f"bad synth size in {name!r}")
        return data.synth_dataset(Rng(spec.seed).child(100), n=n,
                                  classes=spec.classes)
    if name.startswith("idx:"):
        paths = name[4:].split(",")
        if len(paths) != 2:
            raise UsageError("idx datasets need idx:<images>,<labels>")
        ds = data.load_idx(paths[0], paths[1])
    elif name.startswith("cifar:"):
        ds = data.load_cifar_binary(name[6:])
    else:
        raise UsageError(f"unknown dataset {name!r} "
                         "(synth, idx:<imgs>,<labels>, cifar:<path>)")
    if len(ds) >= data.DESK_TOTAL:
        ds = ds.carve(len(ds) - data.DESK_VAL - data.DESK_TEST,
                      data.DESK_VAL, data.DESK_TEST)
    return ds


def _prepare_out(spec: RunSpec, out: str) -> str:
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "runspec.json"), "wb") as f:
        f.write(spec.canonical_bytes())
    with open(os.path.join(out, "runspec.sha256"), "w", encoding="ascii") as f:
        f.write(spec.sha256() + "\n")
    return spec.sha256()


def _write_summary(out: str, payload: dict):
    with open(os.path.join(out, "summary.json"), "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True, indent=2)
        f.write("\n")


def _attack_config(spec: RunSpec) -> AttackConfig:
    return AttackConfig(epsilon=spec.epsilon, alpha=spec.alpha,
                        steps=spec.steps, restarts=spec.restarts,
                        norm=Norm.from_flag(spec.norm))


def _eval_split(ds: data.Dataset, name: str):
    try:
        return ds.split(name)
    except KeyError:
        return ds.split("train")


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(spec: RunSpec, out: str) -> int:
    digest = _prepare_out(spec, out)
    ds = load_dataset(spec)
    if "val" not in ds.splits or "test" not in ds.splits:
        raise UsageError(f"dataset {spec.dataset!r} is too small to carve "
                         "train/val/test splits for training")
    kind = PoolingKind.from_flag(spec.pooling)
    model = nn.build_minicnn(kind, ds.images.shape[1], ds.n_classes,
                             spec.width, Rng(spec.seed).child(0),
                             dtype=_dtype(spec))
    cfg = training.TrainConfig(
        epochs=spec.epochs, batch_size=spec.batch_size, lr_max=spec.lr_max,
        momentum=spec.momentum, weight_decay=spec.weight_decay,
        seed=spec.seed,
        early_stop_threshold=spec.early_stop if spec.early_stop > 0 else None)
    if spec.attack == "clean":
        model, history = training.train_clean(model, ds, cfg)
    else:
        at = AttackConfig(epsilon=spec.epsilon, alpha=spec.alpha,
                          steps=1, restarts=1)
        model, history = training.train_fgsm_at(model, ds, cfg, at)

    with open(os.path.join(out, "metrics.csv"), "w", encoding="ascii") as f:
        f.write(history.to_csv())
    training.save_checkpoint(model, os.path.join(out, "checkpoint.flck"))
    figures.training_curves_png(history, os.path.join(out, "curves.png"))
    verdict = None
    if len(history) >= 3:
        v = training.detect_catastrophic_overfitting(history)
        verdict = {"occurred": v.occurred, "epoch": v.epoch,
                   "pgd_peak": v.pgd_peak,
                   "pgd_at_detection": v.pgd_at_detection}
    last = history.records[-1]
    _write_summary(out, {
        "runspec_sha256": digest,
        "epochs_run": len(history),
        "final": {"clean_test_acc": last.clean_test_acc,
                  "fgsm_test_acc": last.fgsm_test_acc,
                  "pgd_val_acc": last.pgd_val_acc},
        "catastrophic_overfitting": verdict,
    })
    print(f"trained {spec.pooling} for {len(history)} epochs -> {out}")
    print(f"  final clean={last.clean_test_acc:.4f} "
          f"fgsm={last.fgsm_test_acc:.4f} pgd={last.pgd_val_acc:.4f}")
    return 0


def cmd_attack(spec: RunSpec, out: str) -> int:
    digest = _prepare_out(spec, out)
    model = training.load_checkpoint(spec.checkpoint,
                                     precision=spec.precision)
    ds = load_dataset(spec)
    x, y = _eval_split(ds, "test")
    x = x.astype(model.dtype, copy=False)
    cfg = _attack_config(spec)
    rng = Rng(spec.seed).child(200)

    clean = training.evaluate(model, x, y, "clean")
    if spec.attack == "fgsm":
        x_adv = np.concatenate(
            [attacks.fgsm(model, x[lo:hi], y[lo:hi], cfg.epsilon, cfg.clamp)
             for lo, hi in training._batches(len(x), spec.batch_size)])
    else:
        x_adv = np.concatenate(
            [attacks.pgd(model, x[lo:hi], y[lo:hi], cfg, rng.child(i))
             for i, (lo, hi) in
             enumerate(training._batches(len(x), spec.batch_size))])
    logits = np.concatenate(
        [model.forward(x_adv[lo:hi], nn.Mode.EVAL)
         for lo, hi in training._batches(len(x_adv), spec.batch_size)])
    adv_acc = float((np.argmax(logits, axis=1) == y).mean())
    conf = attacks.confidence_stats(model, x, y, cfg, rng.child(999),
                                    spec.batch_size)

    spectra = analysis.perturbation_spectrum_diff(
        np.asarray(x, dtype=np.float64), np.asarray(x_adv, dtype=np.float64))
    analysis.emit_report(spectra.mean_spatial_diff[0],
                         os.path.join(out, "mean_spatial_diff.pgm"), "pgm")
    with open(os.path.join(out, "mean_spectrum_diff.pgm"), "wb") as f:
        f.write(analysis.to_pgm_bytes(spectra.mean_spectrum_diff[0],
                                      log_scale=True))
    figures.spectrum_diff_png(spectra, os.path.join(out, "spectra.png"))

    _write_summary(out, {
        "runspec_sha256": digest,
        "clean_accuracy": clean["accuracy"],
        "adversarial_accuracy": adv_acc,
        "attack": spec.attack,
        "epsilon": spec.epsilon,
        "confidence": conf,
        "perturbation_high_freq_share": spectra.high_freq_share,
    })
    print(f"{spec.attack} @ eps={spec.epsilon:.6f}: "
          f"clean={clean['accuracy']:.4f} adv={adv_acc:.4f} -> {out}")
    return 0


def cmd_eval(spec: RunSpec, out: str) -> int:
    digest = _prepare_out(spec, out)
    model = training.load_checkpoint(spec.checkpoint,
                                     precision=spec.precision)
    ds = load_dataset(spec)
    x, y = _eval_split(ds, "test")
    x = x.astype(model.dtype, copy=False)
    rng = Rng(spec.seed).child(300)
    cfg = _attack_config(spec)
    report = {
        "runspec_sha256": digest,
        "clean": training.evaluate(model, x, y, "clean"),
        "fgsm": training.evaluate(
            model, x, y, "fgsm",
            AttackConfig(epsilon=spec.epsilon, alpha=spec.epsilon,
                         steps=1, restarts=1)),
        "pgd": training.evaluate(model, x, y, "pgd", cfg, rng),
    }
    _write_summary(out, report)
    print(f"clean={report['clean']['accuracy']:.4f} "
          f"fgsm={report['fgsm']['accuracy']:.4f} "
          f"pgd={report['pgd']['accuracy']:.4f} -> {out}")
    return 0


def cmd_analyze(spec: RunSpec, out: str) -> int:
    digest = _prepare_out(spec, out)
    model = training.load_checkpoint(spec.checkpoint,
                                     precision=spec.precision)
    ds = load_dataset(spec)
    x, y = _eval_split(ds, "test")
    rng = Rng(spec.seed).child(400)

    shift = analysis.shift_consistency(model, x, y, spec.max_shift,
                                       spec.pairs, rng.child(0))
    analysis.emit_report(shift, os.path.join(out, "shift_consistency.json"),
                         "json")
    analysis.emit_report(shift, os.path.join(out, "shift_consistency.csv"),
                         "csv")
    figures.shift_consistency_png(shift,
                                  os.path.join(out, "shift_consistency.png"))

    probe = x[:min(len(x), 128)].astype(model.dtype, copy=False)
    alias = analysis.layer_aliasing_trace(model, probe)
    analysis.emit_report(alias, os.path.join(out, "aliasing.json"), "json")
    analysis.emit_report(alias, os.path.join(out, "aliasing.csv"), "csv")
    figures.aliasing_png(alias, os.path.join(out, "aliasing.png"))

    _write_summary(out, {
        "runspec_sha256": digest,
        "shift_consistency": shift.consistency,
        "aliasing": alias.as_dict()["layers"],
    })
    print(f"shift consistency {shift.consistency:.4f}; aliasing "
          + ", ".join(f"{n}={r:.4f}" for n, r in
                      zip(alias.layer_names, alias.ratios))
          + f" -> {out}")
    return 0


def cmd_selftest(seed: int) -> int:
    results = selfcheck.run_selftest(seed)
    width = max(len(name) for name, _, _ in results)
    failed = 0
    for name, ok, detail in results:
        status = "ok" if ok else "FAIL"
        print(f"{name:<{width}}  {status:<4}  {detail}")
        failed += not ok
    if failed:
        print(f"{failed} of {len(results)} checks failed")
        return 1
    print(f"all {len(results)} checks passed")
    return 0


def cmd_gradcheck(pooling: str, seed: int, coords: int, tol: float) -> int:
    kind = PoolingKind.from_flag(pooling)
    max_rel, n = selfcheck.gradcheck(kind, seed=seed, coords=coords)
    ok = max_rel <= tol
    print(f"gradcheck pool={pooling} coords={n} max_rel_err={max_rel:.3e} "
          f"tol={tol:.1e} {'ok' if ok else 'FAIL'}")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# argument wiring


def _add_spec_flags(p: argparse.ArgumentParser):
    p.add_argument("--spec", help="RunSpec JSON file; flags override it")
    p.add_argument("--pooling", help="flc|flc+hp|flc+orig|max|avg|strided|blur")
    p.add_argument("--dataset",
                   help="synth[:<n>] | idx:<imgs>,<labels> | cifar:<path>")
    p.add_argument("--checkpoint")
    p.add_argument("--precision", help="double|single")
    p.add_argument("--width", type=int)
    p.add_argument("--classes", type=int)
    p.add_argument("--attack")
    p.add_argument("--epsilon", help='budget; "8/255" or a decimal')
    p.add_argument("--alpha", help="step size, same syntax as --epsilon")
    p.add_argument("--steps", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--norm", help="linf|l2")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr-max", dest="lr_max")
    p.add_argument("--momentum")
    p.add_argument("--weight-decay", dest="weight_decay")
    p.add_argument("--early-stop", dest="early_stop",
                   help="stop threshold in (0,1]; 0 disables")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-shift", dest="max_shift", type=int)
    p.add_argument("--pairs", type=int)
    p.add_argument("--out", required=True, help="output directory")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flcpool",
        description="frequency-cropped pooling: training, attacks, analysis")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("train", "attack", "eval", "analyze"):
        _add_spec_flags(sub.add_parser(name))
    st = sub.add_parser("selftest", help="fast spectral property checks")
    st.add_argument("--seed", type=int, default=0)
    gc = sub.add_parser("gradcheck",
                        help="finite-difference input-gradient check")
    gc.add_argument("--pooling", default="flc")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--coords", type=int, default=32)
    gc.add_argument("--tol", default="1e-4")
    return parser


_SPEC_FLAG_KEYS = [f.name for f in dataclasses.fields(RunSpec)
                   if f.name != "command"]


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "selftest":
            return cmd_selftest(args.seed)
        if args.command == "gradcheck":
            return cmd_gradcheck(args.pooling, args.seed, args.coords,
                                 parse_scalar(args.tol))
        flags = {k: getattr(args, k, None) for k in _SPEC_FLAG_KEYS}
        spec = build_spec(args.command, args.spec, flags)
        if args.command in ("attack", "eval", "analyze") and not spec.checkpoint:
            raise UsageError(f"{args.command} needs --checkpoint")
        handler = {"train": cmd_train, "attack": cmd_attack,
                   "eval": cmd_eval, "analyze": cmd_analyze}[args.command]
        return handler(spec, args.out)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except data.FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3
    except (AssertionError, ValueError) as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
