import numpy as np
import pytest

from mbci import dsp, ingest, recording
from mbci.errors import DeviceUnavailableError, IngestError

FS = 250.0


def make_stream(duration, seed=0, rate=FS, **cfg):
    config = ingest.StreamConfig(sampling_rate=rate, source_kind="synthetic", **cfg)
    return ingest.open_source(config, duration=duration, seed=seed)


class TestOpenSource:
    def test_replay_yields_every_sample_in_order(self, tmp_path):
        samples = np.arange(3000, dtype=np.float32)
        path = tmp_path / "eeg.raw"
        recording.write_recording(path, samples, FS)
        config = ingest.StreamConfig(source_kind="replay", source_locator=str(path))
        stream = ingest.open_source(config)
        records = list(stream)
        assert len(records) == 3000
        assert [r.value for r in records[:5]] == [0, 1, 2, 3, 4]
        ts = np.array([r.timestamp for r in records])
        assert np.all(np.diff(ts) > 0)

    def test_synthetic_sample_count(self):
        stream = make_stream(duration=10.0)
        assert len(list(stream)) == 2500

    def test_device_stub_errors_out(self):
        config = ingest.StreamConfig(source_kind="device", source_locator="hci0")
        with pytest.raises(DeviceUnavailableError):
            ingest.open_source(config)

    def test_missing_replay_file(self, tmp_path):
        config = ingest.StreamConfig(source_kind="replay",
                                     source_locator=str(tmp_path / "nope.raw"))
        with pytest.raises(IngestError):
            ingest.open_source(config)

    def test_malformed_header(self, tmp_path):
        path = tmp_path / "bad.raw"
        path.write_bytes(b"XXXX" + b"\x00" * 64)
        config = ingest.StreamConfig(source_kind="replay", source_locator=str(path))
        with pytest.raises(IngestError):
            ingest.open_source(config)

    def test_low_rate_rejected(self):
        with pytest.raises(IngestError):
            make_stream(duration=1.0, rate=100.0)

    def test_replay_adopts_file_rate_when_unset(self, tmp_path):
        path = tmp_path / "eeg.raw"
        recording.write_recording(path, np.zeros(100, dtype=np.float32), 500.0)
        config = ingest.StreamConfig(sampling_rate=0, source_kind="replay",
                                     source_locator=str(path))
        stream = ingest.open_source(config)
        assert stream.config.sampling_rate == 500.0


class TestRecordingFormat:
    def test_round_trip(self, tmp_path):
        samples = np.random.default_rng(3).normal(0, 20, 5000).astype(np.float32)
        path = tmp_path / "eeg.raw"
        recording.write_recording(path, samples, FS, channel_label="Fp2")
        header, back = recording.read_recording(path)
        assert header.sampling_rate == FS
        assert header.channel_label == "Fp2"
        np.testing.assert_array_equal(back, samples)

    def test_truncated_payload_detected(self, tmp_path):
        path = tmp_path / "eeg.raw"
        recording.write_recording(path, np.zeros(10, dtype=np.float32), FS)
        raw = path.read_bytes()
        path.write_bytes(raw[:-2])  # cut mid-sample
        with pytest.raises(IngestError):
            recording.read_recording(path)

    def test_incremental_writer_matches_bulk(self, tmp_path):
        samples = np.arange(1000, dtype=np.float32)
        bulk = tmp_path / "bulk.raw"
        inc = tmp_path / "inc.raw"
        recording.write_recording(bulk, samples, FS)
        w = recording.RecordingWriter(inc, FS)
        for chunk in np.split(samples, 10):
            w.append(chunk)
        w.close()
        assert bulk.read_bytes() == inc.read_bytes()


class TestWindows:
    def test_window_count_30s(self):
        stream = make_stream(duration=30.0)
        windows = list(ingest.iter_windows(stream))
        assert len(windows) == 21  # floor((30-10)/1)+1

    def test_window_overlap_is_shared_samples(self):
        stream = make_stream(duration=15.0)
        windows = list(ingest.iter_windows(stream))
        k, k1 = windows[0], windows[1]
        np.testing.assert_array_equal(k.samples[250:], k1.samples[:-250])

    def test_short_stream_yields_nothing(self):
        stream = make_stream(duration=5.0)
        assert list(ingest.iter_windows(stream)) == []

    def test_window_length_and_times(self):
        stream = make_stream(duration=13.0)
        windows = list(ingest.iter_windows(stream))
        assert all(len(w.samples) == 2500 for w in windows)
        assert [w.start_time for w in windows] == [0.0, 1.0, 2.0, 3.0]

    def test_tails_reconstruct_stream(self):
        stream = make_stream(duration=20.0, seed=5)
        original = stream.samples.copy()
        windows = list(ingest.iter_windows(stream))
        rebuilt = list(windows[0].samples)
        for w in windows[1:]:
            rebuilt.extend(w.samples[-250:])
        n = len(rebuilt)
        np.testing.assert_array_equal(np.asarray(rebuilt), original[:n])

    def test_gap_marks_window_discontinuous(self):
        config = ingest.StreamConfig(sampling_rate=FS)
        asm = ingest.WindowAssembler(config)
        out = []
        t = 0.0
        for i in range(int(11 * FS)):
            t = i / FS if i < 2600 else i / FS + 0.5  # half-second gap mid-stream
            out.extend(asm.push(ingest.SampleRecord(timestamp=t, value=0.0)))
        flagged = [w for w in out if w.discontinuous]
        clean = [w for w in out if not w.discontinuous]
        assert flagged, "expected at least one discontinuous window"
        assert clean, "windows before the gap should stay clean"
        # window 0 completed before the gap arrives
        assert not out[0].discontinuous

    def test_non_monotonic_timestamps_rejected(self):
        asm = ingest.WindowAssembler(ingest.StreamConfig(sampling_rate=FS))
        asm.push(ingest.SampleRecord(timestamp=0.0, value=0.0))
        with pytest.raises(IngestError):
            asm.push(ingest.SampleRecord(timestamp=0.0, value=0.0))

    def test_next_window_pulls_one(self):
        stream = make_stream(duration=12.0)
        asm = ingest.WindowAssembler(stream.config)
        it = iter(stream)
        w = ingest.next_window(asm, it)
        assert w is not None and w.start_time == 0.0

    def test_bad_config_rejected(self):
        with pytest.raises(IngestError):
            ingest.WindowAssembler(ingest.StreamConfig(window_seconds=1.0, hop_seconds=2.0))


class TestSynthGenerate:
    def test_deterministic(self):
        c = ingest.SynthControl()
        a = ingest.synth_generate(c, 10.0, FS, seed=9)
        b = ingest.synth_generate(c, 10.0, FS, seed=9)
        np.testing.assert_array_equal(a, b)

    def test_seed_changes_output(self):
        c = ingest.SynthControl()
        a = ingest.synth_generate(c, 10.0, FS, seed=1)
        b = ingest.synth_generate(c, 10.0, FS, seed=2)
        assert not np.array_equal(a, b)

    def test_latent_direction_on_band_powers(self):
        low = ingest.synth_generate(ingest.SynthControl(latent_mindfulness=0.0),
                                    120.0, FS, seed=11)
        high = ingest.synth_generate(ingest.SynthControl(latent_mindfulness=1.0),
                                     120.0, FS, seed=11)
        bp_low = dsp.compute_band_powers(dsp.welch_psd(np.float64(low), FS))
        bp_high = dsp.compute_band_powers(dsp.welch_psd(np.float64(high), FS))
        assert bp_low.relative_theta > bp_high.relative_theta
        assert bp_high.relative_beta > bp_low.relative_beta

    def test_white_noise_mode_is_flat(self):
        c = ingest.SynthControl(band_gains={"theta": 0, "alpha": 0, "beta": 0},
                                noise_exponent=0.0, background_rms=20.0)
        x = np.float64(ingest.synth_generate(c, 300.0, FS, seed=3))
        psd = dsp.welch_psd(x, FS)
        mask = (psd.frequencies >= 1.0) & (psd.frequencies <= 40.0)
        band = psd.power[mask]
        spread_db = 10 * np.log10(band.max() / band.min())
        assert spread_db < 3.0

    def test_piecewise_latent_trajectory(self):
        c = ingest.SynthControl(latent_mindfulness=[(0.0, 0.0), (60.0, 1.0)])
        x = ingest.synth_generate(c, 60.0, FS, seed=4)
        assert len(x) == 60 * FS

    def test_negative_gain_rejected(self):
        c = ingest.SynthControl(band_gains={"theta": -1.0, "alpha": 0, "beta": 0})
        with pytest.raises(ValueError):
            ingest.synth_generate(c, 5.0, FS, seed=0)

    def test_zero_duration_rejected(self):
        with pytest.raises(ValueError):
            ingest.synth_generate(ingest.SynthControl(), 0.0, FS, seed=0)

    def test_amplitude_within_artifact_thresholds(self):
        x = ingest.synth_generate(ingest.SynthControl(), 60.0, FS, seed=8)
        peak = np.max(np.abs(x))
        assert 10.0 < peak < 300.0
