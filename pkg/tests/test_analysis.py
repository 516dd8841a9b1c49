import json

import numpy as np
import pytest

from flcpool.analysis import (AliasingReport, PerturbationSpectrumReport,
                              ShiftConsistencyReport, emit_report,
                              layer_aliasing_trace, perturbation_spectrum_diff,
                              shift_consistency, to_pgm_bytes)
from flcpool.nn import Mode, Pool, build_minicnn
from flcpool.pooling import PoolingKind
from flcpool.spectral import ideal_lowpass_mask, Layout
from flcpool.tensor import Rng

import oracles


class TestShiftConsistency:
    def test_max_shift_one_is_identity_pairs(self, model_factory, rng):
        model = model_factory(dtype=np.float32)
        x = rng.uniform((8, 1, 16, 16), 0.0, 1.0).astype(np.float32)
        y = rng.integers(0, 4, (8,))
        rep = shift_consistency(model, x, y, max_shift=1, pairs=64,
                                rng=rng.child(0))
        assert rep.consistency == 1.0

    def test_constant_logit_model_is_fully_consistent(self, rng):
        class Constant:
            dtype = np.dtype(np.float64)

            def forward(self, x, mode):
                logits = np.zeros((len(x), 4))
                logits[:, 2] = 1.0
                return logits

        x = rng.uniform((4, 1, 8, 8), 0.0, 1.0)
        y = rng.integers(0, 4, (4,))
        rep = shift_consistency(Constant(), x, y, max_shift=4, pairs=128,
                                rng=rng.child(1))
        assert rep.consistency == 1.0
        assert all(v == 1.0 for v in rep.per_class.values())

    def test_per_class_pairs_sum_to_total(self, model_factory, rng):
        model = model_factory(dtype=np.float32)
        x = rng.uniform((16, 1, 16, 16), 0.0, 1.0).astype(np.float32)
        y = rng.integers(0, 4, (16,))
        rep = shift_consistency(model, x, y, max_shift=3, pairs=100,
                                rng=rng.child(2))
        assert sum(rep.per_class_pairs.values()) == 100
        assert 0.0 <= rep.consistency <= 1.0

    def test_labels_only_partition_never_change_agreement(self, model_factory,
                                                          rng):
        # relabeling affects the per-class split, not overall consistency
        model = model_factory(dtype=np.float32)
        x = rng.uniform((8, 1, 16, 16), 0.0, 1.0).astype(np.float32)
        y1 = rng.integers(0, 4, (8,))
        y2 = (y1 + 1) % 4
        r1 = shift_consistency(model, x, y1, max_shift=4, pairs=64,
                               rng=Rng(17))
        r2 = shift_consistency(model, x, y2, max_shift=4, pairs=64,
                               rng=Rng(17))
        assert r1.consistency == r2.consistency

    def test_requires_rng_and_data(self, model_factory, rng):
        model = model_factory(dtype=np.float32)
        x = rng.uniform((4, 1, 16, 16), 0.0, 1.0).astype(np.float32)
        y = rng.integers(0, 4, (4,))
        with pytest.raises(ValueError):
            shift_consistency(model, x, y, rng=None)
        with pytest.raises(ValueError):
            shift_consistency(model, x, y, max_shift=0, rng=rng)
        with pytest.raises(ValueError):
            shift_consistency(model, np.zeros((0, 1, 16, 16), np.float32),
                              np.zeros((0,)), rng=rng)

    def test_csv_schema(self):
        rep = ShiftConsistencyReport(4, 10, 0.8, {0: 0.75, 1: 1.0},
                                     {0: 4, 1: 6})
        lines = rep.to_csv().splitlines()
        assert lines[0] == "scope,pairs,consistency"
        assert lines[1] == "all,10,0.8"
        assert lines[2] == "class_0,4,0.75"
        assert lines[3] == "class_1,6,1.0"


class TestAliasingTrace:
    def test_bandlimited_probe_reads_zero_at_first_pool(self, rng):
        model = build_minicnn(PoolingKind.FLC, 1, 4, 2, Rng(0).child(0),
                              dtype=np.dtype(np.float64))
        # build a probe with spectrum strictly inside the closure
        mask = ideal_lowpass_mask(16, 16, Layout.DC_AT_ORIGIN)
        spec = np.fft.fft2(rng.normal((4, 1, 16, 16))) * mask
        probe = np.fft.ifft2(spec).real
        # first pool sees the raw probe only if the model starts with Pool;
        # build such a model by hand
        from flcpool import nn as nnmod
        pool_first = nnmod.Network([("pool0", Pool(PoolingKind.FLC))])
        rep = layer_aliasing_trace(pool_first, probe)
        assert rep.layer_names == ["pool0"]
        assert rep.ratios[0] <= 1e-14

    def test_white_noise_probe_matches_band_count(self, rng):
        pool_first_model = _pool_only_model()
        probe = rng.normal((32, 1, 16, 16))
        rep = layer_aliasing_trace(pool_first_model, probe)
        expected = oracles.WHITE_NOISE_HF_SHARE_16
        assert rep.ratios[0] == pytest.approx(expected, abs=0.02)

    def test_minicnn_names_both_pools(self, model_factory, rng):
        model = model_factory(dtype=np.float32)
        probe = rng.uniform((4, 1, 16, 16), 0.0, 1.0).astype(np.float32)
        rep = layer_aliasing_trace(model, probe)
        assert len(rep.layer_names) == 2
        assert all("pool" in n for n in rep.layer_names)
        assert all(0.0 <= r <= 1.0 for r in rep.ratios)

    def test_no_pool_model_rejected(self, rng):
        from flcpool import nn as nnmod
        model = nnmod.Network([("relu", nnmod.ReLU())])
        with pytest.raises(ValueError, match="no pooling"):
            layer_aliasing_trace(model, rng.normal((2, 1, 8, 8)))

    def test_csv_schema(self):
        rep = AliasingReport(["pool1", "pool2"], [0.5, 0.25])
        lines = rep.to_csv().splitlines()
        assert lines[0] == "layer,above_nyquist_energy"
        assert lines[1] == "pool1,0.5"


def _pool_only_model():
    from flcpool import nn as nnmod
    return nnmod.Network([("pool0", Pool(PoolingKind.FLC))])


class TestPerturbationSpectrum:
    def test_zero_perturbation_reads_zero(self, rng):
        x = rng.uniform((3, 1, 8, 8), 0.0, 1.0)
        rep = perturbation_spectrum_diff(x, x.copy())
        np.testing.assert_array_equal(rep.spatial_diff, 0.0)
        np.testing.assert_array_equal(rep.spectrum_diff, 0.0)
        assert rep.high_freq_share == 0.0

    def test_shapes_and_means(self, rng):
        x = rng.uniform((5, 2, 8, 8), 0.0, 1.0)
        adv = np.clip(x + rng.normal(x.shape, std=0.01), 0.0, 1.0)
        rep = perturbation_spectrum_diff(x, adv)
        assert rep.spatial_diff.shape == (5, 2, 8, 8)
        assert rep.spectrum_diff.shape == (5, 2, 8, 8)
        assert rep.mean_spatial_diff.shape == (2, 8, 8)
        np.testing.assert_allclose(rep.mean_spatial_diff,
                                   rep.spatial_diff.mean(axis=0), atol=1e-15)
        assert 0.0 <= rep.high_freq_share <= 1.0

    def test_pure_high_tone_perturbation_is_all_high_freq(self):
        h = np.arange(16)
        tone = 0.01 * np.cos(2 * np.pi * 7 * h / 16)[None, :] * np.ones((16, 1))
        x = np.full((1, 1, 16, 16), 0.5)
        rep = perturbation_spectrum_diff(x, x + tone)
        assert rep.high_freq_share == pytest.approx(1.0, abs=1e-12)

    def test_spectrum_diff_is_dc_centered(self):
        # constant perturbation shows up at the center bin of spectrum_diff
        x = np.full((1, 1, 8, 8), 0.4)
        rep = perturbation_spectrum_diff(x, x + 0.01)
        center = rep.spectrum_diff[0, 0, 4, 4]
        assert center == pytest.approx(0.01 * 64)
        off = rep.spectrum_diff[0, 0].copy()
        off[4, 4] = 0.0
        np.testing.assert_allclose(off, 0.0, atol=1e-12)

    def test_shape_mismatch_rejected(self, rng):
        with pytest.raises(ValueError):
            perturbation_spectrum_diff(np.zeros((2, 1, 8, 8)),
                                       np.zeros((2, 1, 8, 4)))


class TestEmission:
    def test_json_bytes_deterministic(self, tmp_path):
        rep = ShiftConsistencyReport(4, 10, 0.8, {1: 1.0, 0: 0.75},
                                     {1: 6, 0: 4})
        p1 = str(tmp_path / "a.json")
        p2 = str(tmp_path / "b.json")
        emit_report(rep, p1, "json")
        emit_report(rep, p2, "json")
        assert open(p1, "rb").read() == open(p2, "rb").read()
        payload = json.loads(open(p1).read())
        assert payload["consistency"] == 0.8
        assert payload["per_class"] == {"0": 0.75, "1": 1.0}

    def test_csv_emission(self, tmp_path):
        rep = AliasingReport(["pool1"], [0.125])
        path = str(tmp_path / "a.csv")
        emit_report(rep, path, "csv")
        assert open(path).read() == "layer,above_nyquist_energy\npool1,0.125\n"

    def test_pgm_golden_header_and_payload(self, tmp_path):
        img = np.array([[0.0, 0.5], [1.0, 0.25]])
        raw = to_pgm_bytes(img)
        assert raw.startswith(b"P5\n2 2\n255\n")
        pixels = raw[len(b"P5\n2 2\n255\n"):]
        assert list(pixels) == [0, 128, 255, 64]

    def test_pgm_constant_image_is_black(self):
        raw = to_pgm_bytes(np.full((3, 3), 0.7))
        assert raw.endswith(bytes(9))

    def test_pgm_log_scale_reorders_magnitudes(self):
        img = np.array([[1.0, -100.0], [0.0, 10.0]])
        raw = to_pgm_bytes(img, log_scale=True)
        pixels = list(raw[raw.index(b"255\n") + 4:])
        # |.| then log1p: -100 maps to the brightest value
        assert pixels[1] == 255 and pixels[2] == 0

    def test_pgm_rejects_wrong_rank(self):
        with pytest.raises(ValueError):
            to_pgm_bytes(np.zeros((2, 2, 2)))

    def test_format_type_mismatches(self, tmp_path):
        rep = AliasingReport(["p"], [0.5])
        with pytest.raises(ValueError):
            emit_report(rep, str(tmp_path / "x.bin"), "protobuf")
        with pytest.raises(TypeError):
            emit_report(object(), str(tmp_path / "x.json"), "json")
        with pytest.raises(TypeError):
            emit_report(object(), str(tmp_path / "x.csv"), "csv")

    def test_plain_dict_as_json(self, tmp_path):
        path = str(tmp_path / "d.json")
        emit_report({"b": 2, "a": 1}, path, "json")
        assert open(path).read() == '{\n  "a": 1,\n  "b": 2\n}\n'
