import numpy as np
import pytest
from hypothesis import given, strategies as st

from mbci import model
from mbci.errors import WeightsError
from mbci.ingest import SynthControl, WindowBuffer, synth_generate

from oracles import naive_forward

FS = 250.0


def make_window(samples, start=0.0):
    return WindowBuffer(samples=np.asarray(samples, dtype=np.float32),
                        start_time=start, sampling_rate=FS)


def tone_window(freq, amplitude=10.0):
    t = np.arange(int(10 * FS)) / FS
    return make_window(amplitude * np.sin(2 * np.pi * freq * t))


class TestFeatureExtraction:
    def test_tone_maximizes_owning_band_row(self):
        fe = model.FeatureExtractor(FS)
        window = tone_window(5.0)
        rows = fe.bank.apply(np.float64(window.samples), zero_phase=False)
        from mbci.dsp import hilbert_envelope
        env = hilbert_envelope(rows)
        means = env.mean(axis=1)
        assert np.argmax(means) == 2  # band [4.1, 6.1] owns 5 Hz

    def test_shape_and_normalization(self, rng):
        fe = model.FeatureExtractor(FS)
        fm = fe.extract(make_window(rng.normal(0, 20, int(10 * FS))))
        assert fm.values.shape == (35, 100)
        assert abs(fm.values.mean()) < 1e-9
        assert abs(fm.values.std() - 1.0) < 1e-9
        assert not fm.degenerate

    def test_deterministic(self):
        fe = model.FeatureExtractor(FS)
        w = tone_window(9.0)
        a = fe.extract(w).values
        b = fe.extract(w).values
        np.testing.assert_array_equal(a, b)

    def test_flat_window_degenerate(self):
        fe = model.FeatureExtractor(FS)
        fm = fe.extract(make_window(np.zeros(int(10 * FS))))
        assert fm.degenerate
        assert np.all(fm.values == 0.0)

    def test_rate_must_divide_into_envelope_blocks(self):
        with pytest.raises(ValueError):
            model.FeatureExtractor(255.0)


class TestWeightContainer:
    def test_round_trip_bit_identical(self, tmp_path):
        w = model.init_random_weights(7)
        p1 = tmp_path / "a"
        p2 = tmp_path / "b"
        model.save_weights(w, p1)
        loaded = model.load_weights(p1)
        model.save_weights(loaded, p2)
        assert (p1 / "weights.bin").read_bytes() == (p2 / "weights.bin").read_bytes()
        assert (p1 / "manifest.json").read_text() == (p2 / "manifest.json").read_text()

    def test_same_seed_same_bytes(self, tmp_path):
        model.save_weights(model.init_random_weights(7), tmp_path / "a")
        model.save_weights(model.init_random_weights(7), tmp_path / "b")
        assert (tmp_path / "a/weights.bin").read_bytes() == (tmp_path / "b/weights.bin").read_bytes()

    def test_wrong_dense_width_names_layer(self):
        w = model.init_random_weights(0)
        w.tensors["dense1.weight"] = np.zeros((24576, 99))
        with pytest.raises(WeightsError, match="dense1"):
            model._validate_tensors(w.tensors)

    def test_truncated_blob_detected(self, tmp_path):
        w = model.init_random_weights(1)
        model.save_weights(w, tmp_path / "c")
        blob = (tmp_path / "c/weights.bin").read_bytes()
        (tmp_path / "c/weights.bin").write_bytes(blob[:-100])
        with pytest.raises(WeightsError, match="corrupt"):
            model.load_weights(tmp_path / "c")

    def test_tampered_blob_detected(self, tmp_path):
        w = model.init_random_weights(1)
        model.save_weights(w, tmp_path / "c")
        blob = bytearray((tmp_path / "c/weights.bin").read_bytes())
        blob[100] ^= 0xFF
        (tmp_path / "c/weights.bin").write_bytes(bytes(blob))
        with pytest.raises(WeightsError, match="SHA-256"):
            model.load_weights(tmp_path / "c")

    def test_unknown_version_rejected(self, tmp_path):
        import json
        model.save_weights(model.init_random_weights(1), tmp_path / "c")
        manifest = json.loads((tmp_path / "c/manifest.json").read_text())
        manifest["format_version"] = 99
        (tmp_path / "c/manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(WeightsError, match="version"):
            model.load_weights(tmp_path / "c")

    def test_missing_container(self, tmp_path):
        with pytest.raises(WeightsError):
            model.load_weights(tmp_path / "nothing")

    def test_negative_bn_variance_rejected(self):
        w = model.init_random_weights(0)
        w.tensors["stem.bn.var"] = np.zeros(32)
        with pytest.raises(WeightsError, match="variance"):
            model._validate_tensors(w.tensors)


class TestForward:
    def test_shape_trace_matches_architecture(self):
        assert model.shape_trace() == [
            (35, 100, 1), (35, 100, 32), (17, 49, 32), (17, 49, 128),
            (8, 24, 128), (24576,), (100,), (2,),
        ]

    def test_zero_weights_score_exactly_50(self, rng):
        w = model.zero_weights()
        result = model.forward(w, rng.normal(size=(35, 100)))
        assert result.score == 50.0
        assert result.probability == 0.5

    def test_score_in_range_and_softmax_normalized(self, rng):
        w = model.init_random_weights(3)
        for _ in range(5):
            r = model.forward(w, rng.normal(size=(35, 100)))
            assert 0.0 <= r.score <= 100.0
            assert r.score == pytest.approx(100.0 * r.probability)

    def test_matches_naive_oracle(self, rng):
        for seed in range(5):
            w = model.init_random_weights(seed)
            feats = rng.normal(size=(35, 100))
            got = model.forward(w, feats).score
            want, _ = naive_forward(w, feats)
            assert got == pytest.approx(want, rel=1e-4, abs=1e-6)

    def test_logit_shift_invariance(self, rng):
        w = model.init_random_weights(5)
        feats = rng.normal(size=(35, 100))
        base = model.forward(w, feats).score
        w.tensors["dense2.bias"] = w.tensors["dense2.bias"] + 3.7
        shifted = model.forward(w, feats).score
        assert shifted == pytest.approx(base, abs=1e-6)

    def test_stem_linear_at_zero_bias(self, rng):
        w = model.init_random_weights(2)
        w.tensors["stem.conv.bias"] = np.zeros(32)
        feats = rng.normal(size=(35, 100))
        one = model.stem_forward(w, feats, pre_activation=True)
        scaled = model.stem_forward(w, 2.5 * feats, pre_activation=True)
        np.testing.assert_allclose(scaled, 2.5 * one, rtol=1e-9, atol=1e-12)

    def test_wrong_feature_shape_rejected(self):
        w = model.zero_weights()
        with pytest.raises(WeightsError):
            model.forward(w, np.zeros((35, 99)))

    def test_deterministic(self, rng):
        w = model.init_random_weights(4)
        feats = rng.normal(size=(35, 100))
        assert model.forward(w, feats).score == model.forward(w, feats).score

    @given(st.integers(0, 10_000))
    def test_softmax_probability_vector(self, seed):
        rng = np.random.default_rng(seed)
        p = model.softmax(rng.normal(0, 10, size=2))
        assert np.all(p >= 0)
        assert abs(p.sum() - 1.0) < 1e-6


class TestScoreStream:
    def windows(self, duration=30.0, seed=0):
        from mbci.ingest import StreamConfig, open_source, iter_windows
        cfg = StreamConfig(sampling_rate=FS, source_kind="synthetic")
        return iter_windows(open_source(cfg, duration=duration, seed=seed))

    def test_one_score_per_window_in_order(self):
        w = model.zero_weights()
        scores = list(model.score_stream(w, self.windows(30.0)))
        assert len(scores) == 21
        starts = [s.window_start for s in scores]
        assert starts == sorted(starts)

    def test_replayed_stream_scores_identical(self):
        w = model.init_random_weights(1)
        a = [s.score for s in model.score_stream(w, self.windows(seed=2))]
        b = [s.score for s in model.score_stream(w, self.windows(seed=2))]
        assert a == b

    def test_discontinuous_window_yields_gap(self):
        w = model.zero_weights()
        windows = [
            WindowBuffer(samples=np.zeros(2500, dtype=np.float32), start_time=0.0,
                         sampling_rate=FS),
            WindowBuffer(samples=np.zeros(2500, dtype=np.float32), start_time=1.0,
                         sampling_rate=FS, discontinuous=True),
        ]
        out = list(model.score_stream(w, windows))
        assert isinstance(out[0], model.MindfulnessScore)
        assert isinstance(out[1], model.GapMarker)

    def test_latency_recorded(self):
        w = model.zero_weights()
        scores = [s for s in model.score_stream(w, self.windows(15.0))]
        assert all(s.latency_ms > 0 for s in scores)


class TestFixtureModel:
    def test_score_monotone_in_latent(self):
        w = model.fixture_weights()
        fe = model.FeatureExtractor(FS)
        means = []
        for latent in [0.0, 0.25, 0.5, 0.75, 1.0]:
            control = model.fixture_synth_control(latent)
            x = synth_generate(control, 70.0, FS, seed=42)
            scores = []
            for k in range(6):
                wb = make_window(x[k * 2500:(k + 1) * 2500])
                scores.append(model.forward(w, fe.extract(wb)).score)
            means.append(np.mean(scores))
        assert all(a < b for a, b in zip(means, means[1:]))

    def test_fixture_validates(self):
        model._validate_tensors(model.fixture_weights().tensors)
