"""End-to-end guarantees the package ships with.

Each class pins one user-facing promise: the exact sinc equivalence of
the frequency-crop pool, the alias-free property that motivates it, FFT
correctness against direct sums, gradient exactness for every pooling
variant, the single-step-AT collapse contrast at desk scale, the shift
consistency advantage, persistence determinism, and the two-branch
ablation.  Budgets are asserted where the promise includes one.

The desk experiments (collapse contrast, shift consistency, ablation)
share session fixtures; expect the full file to take ~half an hour.
"""

import time

import numpy as np
import pytest

from flcpool import (
    AttackConfig,
    DESK_TOTAL,
    PoolingKind,
    Rng,
    above_nyquist_energy,
    bandlimited_upsample2,
    build_minicnn,
    circular_shift,
    dense_map,
    detect_catastrophic_overfitting,
    evaluate,
    fft2,
    fgsm,
    flc_plus_pool,
    flc_pool,
    highpass_pool,
    ifft2,
    input_gradient,
    load_checkpoint,
    pgd,
    pool_backward,
    pool_forward,
    save_checkpoint,
    shift_consistency,
    sinc_kernel,
    strided_identity,
    synth_dataset,
    train_clean,
    train_fgsm_at,
)
from flcpool.nn import Mode, cross_entropy
from flcpool.training import TrainConfig

import oracles

# Desk-scale collapse experiment: everything the contrast needs beyond
# the library defaults.  PGD validation uses AttackConfig.for_pgd_val()
# inside the training loop; the attack itself is pinned below.
CO_EPOCHS = 60
CO_SEEDS = (0, 1, 2, 3, 4)
CO_WIDTH = 8
CO_BATCH = 128
CO_ATTACK = AttackConfig(epsilon=8 / 255, alpha=10 / 255, steps=1, restarts=1)
CO_BASELINE = PoolingKind.MAX_POOL2   # strided never learns this corpus


def _roll_conv2(x2d, kernel):
    """Circular convolution via explicit shifts -- no transforms involved."""
    out = np.zeros_like(x2d)
    kh, kw = kernel.shape
    for a in range(kh):
        for b in range(kw):
            if kernel[a, b] != 0.0:
                out += kernel[a, b] * np.roll(x2d, (a, b), axis=(0, 1))
    return out


class TestSincEquivalence:
    """flc_pool(x) == circular-conv by the sinc kernel, then stride 2."""

    def test_matches_sinc_convolution_on_all_extents(self):
        t0 = time.monotonic()
        rng = Rng(2024)
        for e in (8, 12, 16, 32):
            x = rng.normal((1, 1, e, e))
            kernel = sinc_kernel(e, e)
            spatial = _roll_conv2(x[0, 0], kernel)[::2, ::2]
            pooled = np.asarray(flc_pool(x))[0, 0]
            err = np.abs(pooled - spatial).max() / np.abs(spatial).max()
            assert err <= 1e-10, f"extent {e}: relative error {err:.2e}"
        assert time.monotonic() - t0 < 10.0

    def test_roll_convolution_agrees_with_loop_oracle(self):
        # ties the fast helper above to the quadruple-loop reference
        rng = Rng(31)
        x = rng.normal((8, 8))
        k = sinc_kernel(8, 8)
        np.testing.assert_allclose(
            _roll_conv2(x, k), oracles.circular_conv2_loops(x, k), atol=1e-12)


class TestAliasFreeDownsampling:
    """Frequency cropping leaves nothing above the cutoff; every spatial
    pool does."""

    def test_crop_pool_reconstruction_is_exactly_bandlimited(self):
        t0 = time.monotonic()
        x = Rng(7).normal((1000, 1, 16, 16))
        recon = bandlimited_upsample2(flc_pool(x))
        ratios, _ = above_nyquist_energy(np.asarray(recon))
        assert float(np.max(ratios)) <= 1e-14
        assert time.monotonic() - t0 < 30.0

    @pytest.mark.parametrize("kind", [PoolingKind.BLUR_POOL,
                                      PoolingKind.MAX_POOL2,
                                      PoolingKind.STRIDED_IDENTITY])
    def test_spatial_pools_keep_foldable_energy_on_white_noise(self, kind):
        x = Rng(11).normal((1000, 1, 16, 16))
        field = dense_map(kind, x)
        ratios, _ = above_nyquist_energy(np.asarray(field))
        assert float(np.min(ratios)) > 0.01


class TestFftAgainstDirectSums:
    def test_all_extents_against_loop_dft(self):
        t0 = time.monotonic()
        rng = Rng(3)
        for h in range(1, 17):
            for w in range(1, 17):
                x = rng.normal((h, w))
                fast = fft2(x).data
                slow = oracles.dft2_loops(x)
                scale = np.abs(slow).max() or 1.0
                assert np.abs(fast - slow).max() / scale <= 1e-10
                back = np.asarray(ifft2(fft2(x)))
                assert np.abs(back - x).max() <= 1e-10
        assert time.monotonic() - t0 < 60.0

    def test_parseval(self):
        rng = Rng(4)
        for h, w in ((5, 13), (16, 16), (12, 7)):
            x = rng.normal((h, w))
            spec = fft2(x).data
            spatial = float(np.sum(x * x))
            spectral_side = float(np.sum(np.abs(spec) ** 2)) / (h * w)
            assert abs(spatial - spectral_side) / spatial <= 1e-10


class TestGradientExactness:
    """Backprop through the full network agrees with finite differences
    for every pooling variant, and each pooling backward is the true
    adjoint of its (linearized) forward."""

    @pytest.mark.parametrize("kind", list(PoolingKind))
    def test_input_gradient_matches_central_differences(self, kind):
        model = build_minicnn(kind, in_channels=1, classes=4, width=2,
                              rng=Rng(5).child(0), dtype=np.dtype(np.float64))
        rng = Rng(6)
        x = 0.5 + 0.1 * rng.normal((2, 1, 16, 16))
        y = np.array([1, 3])
        _, grad = input_gradient(model, x, y)
        grad = np.asarray(grad)

        def loss_at(z):
            return float(cross_entropy(model.forward(z, Mode.EVAL), y)[0])

        coords = [int(i) for i in rng.integers(0, x.size, (40,))]
        fd = oracles.central_diff_loss(loss_at, x.copy(), coords, step=1e-5)
        scale = np.abs(fd).max()
        grad_flat = grad.reshape(-1)
        verified = 0
        for c, want in zip(coords, fd):
            got = grad_flat[c]
            if abs(want) < 1e-8 * scale:
                # dead coordinate (e.g. a strided-away pixel): both
                # routes must agree that it is dead
                assert abs(got) < 1e-8 * scale, (
                    f"{kind}: coord {c} grad {got} but fd says dead")
            else:
                assert abs(got - want) / abs(want) <= 1e-4, (
                    f"{kind}: coord {c} grad {got} vs fd {want}")
            verified += 1
        assert verified >= 32

    @pytest.mark.parametrize("kind", list(PoolingKind))
    def test_pooling_backward_is_adjoint(self, kind):
        rng = Rng(8)
        x = rng.normal((3, 2, 16, 16))
        out, ctx = pool_forward(kind, x)
        out = np.asarray(out)
        y = rng.normal(out.shape)
        lhs = float(np.sum(out * y))
        rhs = float(np.sum(x * np.asarray(pool_backward(kind, y, ctx))))
        scale = max(abs(lhs), abs(rhs), 1.0)
        assert abs(lhs - rhs) / scale <= 1e-10


class TestEvenShiftEquivariance:
    def test_pool_commutes_with_even_shifts(self):
        t0 = time.monotonic()
        rng = Rng(9)
        for _ in range(100):
            x = rng.normal((1, 1, 16, 16))
            a = int(rng.integers(-4, 5, (1,))[0])
            b = int(rng.integers(-4, 5, (1,))[0])
            lhs = np.asarray(flc_pool(circular_shift(x, 2 * a, 2 * b)))
            rhs = np.asarray(circular_shift(np.asarray(flc_pool(x)), a, b))
            assert np.abs(lhs - rhs).max() <= 1e-10
        assert time.monotonic() - t0 < 5.0


def _carved(n_train, n_val, n_test, seed=42, **kw):
    ds = synth_dataset(Rng(seed).child(100), n=n_train + n_val + n_test, **kw)
    return ds.carve(n_train, n_val, n_test)


class TestDegenerateAttackIdentities:
    def test_one_step_pgd_is_fgsm(self):
        t0 = time.monotonic()
        ds = _carved(64, 16, 16)
        model = build_minicnn(PoolingKind.FLC, 1, 4, 2, Rng(10).child(0),
                              dtype=np.dtype(np.float64))
        x = ds.images[:32]
        y = ds.labels[:32]
        cfg = AttackConfig(epsilon=8 / 255, alpha=8 / 255, steps=1, restarts=1)
        a = np.asarray(pgd(model, x, y, cfg, random_start=False))
        b = np.asarray(fgsm(model, x, y, cfg.epsilon))
        assert np.array_equal(a, b)

        # zero-budget AT walks the exact clean-training trajectory
        ds_small = _carved(96, 24, 24, seed=43)
        cfg_t = TrainConfig(epochs=3, batch_size=32, seed=5)
        m_clean = build_minicnn(PoolingKind.FLC, 1, 4, 2, Rng(12).child(0),
                                dtype=np.dtype(np.float32))
        m_at = build_minicnn(PoolingKind.FLC, 1, 4, 2, Rng(12).child(0),
                             dtype=np.dtype(np.float32))
        m_clean, hist_clean = train_clean(m_clean, ds_small, cfg_t)
        zero = AttackConfig(epsilon=0.0, alpha=10 / 255, steps=1, restarts=1)
        m_at, hist_at = train_fgsm_at(m_at, ds_small, cfg_t, zero)
        for (k1, v1), (k2, v2) in zip(sorted(m_clean.state_dict().items()),
                                      sorted(m_at.state_dict().items())):
            assert k1 == k2 and np.array_equal(v1, v2), k1
        for rc, ra in zip(hist_clean.records, hist_at.records):
            assert rc.train_loss == ra.train_loss
            assert rc.pgd_val_acc == ra.pgd_val_acc
        assert time.monotonic() - t0 < 60.0


class TestPersistenceDeterminism:
    def test_checkpoint_round_trip_and_rerun_reproducibility(self, tmp_path):
        t0 = time.monotonic()
        ds = _carved(96, 24, 24, seed=44)
        cfg = TrainConfig(epochs=2, batch_size=32, seed=9)
        attack = AttackConfig(epsilon=8 / 255, alpha=10 / 255, steps=1,
                              restarts=1)

        def one_run():
            m = build_minicnn(PoolingKind.FLC, 1, 4, 2, Rng(13).child(0),
                              dtype=np.dtype(np.float32))
            return train_fgsm_at(m, ds, cfg, attack)

        model, hist = one_run()
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, str(path))
        loaded = load_checkpoint(str(path))
        x = ds.images[:16].astype(np.float32)
        assert np.array_equal(np.asarray(model.forward(x, Mode.EVAL)),
                              np.asarray(loaded.forward(x, Mode.EVAL)))

        model2, hist2 = one_run()
        rows1 = hist.to_csv().splitlines()
        rows2 = hist2.to_csv().splitlines()
        assert rows1[0] == rows2[0]
        for r1, r2 in zip(rows1[1:], rows2[1:]):
            # wall_seconds (last column) is the one legitimate difference
            assert r1.rsplit(",", 1)[0] == r2.rsplit(",", 1)[0]
        assert time.monotonic() - t0 < 60.0


# ---------------------------------------------------------------------------
# desk experiments (shared across the collapse, cost, and ablation promises)


def _at_run(kind, seed, dataset):
    model = build_minicnn(kind, in_channels=1, classes=4, width=CO_WIDTH,
                          rng=Rng(seed).child(0), dtype=np.dtype(np.float32))
    cfg = TrainConfig(epochs=CO_EPOCHS, batch_size=CO_BATCH, seed=seed)
    return train_fgsm_at(model, dataset, cfg, CO_ATTACK)


@pytest.fixture(scope="session")
def desk_corpus():
    return synth_dataset(Rng(0).child(100), n=DESK_TOTAL)


@pytest.fixture(scope="session")
def collapse_runs(desk_corpus):
    """5-seed AT sweep for the baseline and frequency-crop variants.

    Returns (histories-by-kind, cpu_minutes); the budget promise covers
    the whole sweep.
    """
    cpu0, wall0 = time.process_time(), time.monotonic()
    histories = {}
    for kind in (CO_BASELINE, PoolingKind.FLC):
        histories[kind] = [_at_run(kind, seed, desk_corpus)[1]
                           for seed in CO_SEEDS]
    cpu_minutes = (time.process_time() - cpu0) / 60.0
    wall_minutes = (time.monotonic() - wall0) / 60.0
    return histories, max(cpu_minutes, 0.0), wall_minutes


class TestSingleStepCollapseContrast:
    """Single-step AT collapses with spatial pooling and holds with
    frequency cropping, at a final robustness gap of 10+ points."""

    def test_baseline_collapses_and_crop_does_not(self, collapse_runs):
        histories, _, _ = collapse_runs
        base_fired = sum(
            detect_catastrophic_overfitting(h).occurred
            for h in histories[CO_BASELINE])
        flc_fired = sum(
            detect_catastrophic_overfitting(h).occurred
            for h in histories[PoolingKind.FLC])
        assert base_fired >= 3, f"baseline fired only {base_fired}/5"
        assert flc_fired <= 1, f"frequency crop fired {flc_fired}/5"

    def test_final_pgd_gap_at_least_ten_points(self, collapse_runs):
        histories, _, _ = collapse_runs
        final = {k: np.mean([h.column("pgd_val_acc")[-1] for h in hs])
                 for k, hs in histories.items()}
        gap = final[PoolingKind.FLC] - final[CO_BASELINE]
        assert gap >= 0.10, (f"gap {gap:.3f} (flc {final[PoolingKind.FLC]:.3f}"
                             f" vs baseline {final[CO_BASELINE]:.3f})")

    def test_sweep_fits_cpu_budget(self, collapse_runs):
        _, cpu_minutes, _ = collapse_runs
        assert cpu_minutes < 40.0


class TestTrainingCostRatio:
    def test_crop_pool_epochs_cost_at_most_twice_baseline(self, collapse_runs):
        histories, _, _ = collapse_runs
        mean_epoch = {
            k: np.mean([r.wall_seconds for h in hs for r in h.records])
            for k, hs in histories.items()}
        ratio = mean_epoch[PoolingKind.FLC] / mean_epoch[CO_BASELINE]
        assert ratio <= 2.0, f"flc/base epoch-time ratio {ratio:.2f}"


@pytest.fixture(scope="session")
def clean_runs(desk_corpus):
    """5-seed clean training of both variants for the shift-consistency
    comparison.  Shorter schedule: consistency needs a converged clean
    model, not a 60-epoch one."""
    out = {}
    for kind in (CO_BASELINE, PoolingKind.FLC):
        models = []
        for seed in CO_SEEDS:
            m = build_minicnn(kind, 1, 4, CO_WIDTH, Rng(seed).child(0),
                              dtype=np.dtype(np.float32))
            m, _ = train_clean(m, desk_corpus,
                               TrainConfig(epochs=15, batch_size=CO_BATCH,
                                           seed=seed))
            models.append(m)
        out[kind] = models
    return out


class TestShiftConsistencyAdvantage:
    def test_crop_pool_is_steadier_under_shifts(self, clean_runs, desk_corpus):
        t0 = time.monotonic()
        test_idx = desk_corpus.splits["test"]
        x = desk_corpus.images[test_idx]
        y = desk_corpus.labels[test_idx]
        cons = {}
        for kind, models in clean_runs.items():
            vals = [shift_consistency(m, x, y, max_shift=4, pairs=512,
                                      rng=Rng(100 + i)).consistency
                    for i, m in enumerate(models)]
            cons[kind] = float(np.mean(vals))
        edge = cons[PoolingKind.FLC] - cons[CO_BASELINE]
        assert edge >= 0.02, (f"consistency edge {edge:.4f} "
                              f"(flc {cons[PoolingKind.FLC]:.4f} vs "
                              f"baseline {cons[CO_BASELINE]:.4f})")
        assert time.monotonic() - t0 < 900.0


class TestSecondPathAblation:
    """Adding a second branch on top of the frequency crop changes
    nothing that matters: outputs decompose exactly, robustness moves
    within noise."""

    def test_two_branch_outputs_match_composition(self):
        x = Rng(14).normal((4, 3, 16, 16))
        plus_orig = np.asarray(flc_plus_pool(x, PoolingKind.FLC_PLUS_ORIGINAL))
        want = np.asarray(flc_pool(x)) + np.asarray(strided_identity(x))
        assert np.abs(plus_orig - want).max() <= 1e-10
        plus_hp = np.asarray(flc_plus_pool(x, PoolingKind.FLC_PLUS_HIGHPASS))
        want_hp = np.asarray(flc_pool(x)) + np.asarray(highpass_pool(x))
        assert np.abs(plus_hp - want_hp).max() <= 1e-10

    def test_second_branch_does_not_buy_robustness(self, collapse_runs,
                                                   desk_corpus):
        t0 = time.monotonic()
        histories, _, _ = collapse_runs
        flc_final = [h.column("pgd_val_acc")[-1]
                     for h in histories[PoolingKind.FLC][:3]]
        for kind in (PoolingKind.FLC_PLUS_HIGHPASS,
                     PoolingKind.FLC_PLUS_ORIGINAL):
            finals = [_at_run(kind, seed, desk_corpus)[1]
                      .column("pgd_val_acc")[-1] for seed in CO_SEEDS[:3]]
            lift = float(np.mean(finals)) - float(np.mean(flc_final))
            assert lift <= 0.03, f"{kind}: second branch lifted PGD by {lift:.3f}"
        assert time.monotonic() - t0 < 1800.0
