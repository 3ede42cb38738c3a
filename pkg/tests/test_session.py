import json

import numpy as np
import pytest

from mbci import analysis, model
from mbci.errors import CorruptSessionError, SessionError
from mbci.feedback import MISC_LABELS, SessionMode
from mbci.ingest import StreamConfig, SynthControl
from mbci.session import (SessionDescriptor, SessionRunner, load_session,
                          run_headless_session)

FS = 250.0


def make_descriptor(mode="RMS", duration=30.0, session_id="s1", seed=0):
    return SessionDescriptor(
        session_id=session_id,
        mode=SessionMode(mode),
        subject_id="subj01",
        source=StreamConfig(sampling_rate=FS, source_kind="synthetic"),
        seed=seed,
        synth_control=SynthControl(),
        duration_seconds=duration,
    )


@pytest.fixture(scope="module")
def weights():
    return model.fixture_weights()


class TestRunner:
    def test_rms_emits_scores_and_scenes(self, tmp_path, weights):
        d = make_descriptor(duration=30.0)
        path = run_headless_session(d, weights, tmp_path)
        log = load_session(path)
        scores = log.events_of("score_update")
        scenes = log.events_of("scene_state")
        assert len(scores) == 21  # windows finishing at t = 10..30
        assert len(scenes) == 21
        assert all(s["payload"]["source"] == "cnn" for s in scenes)
        ts = [e["t"] for e in scores]
        assert ts == sorted(ts)
        np.testing.assert_allclose(np.diff(ts), 1.0)

    def test_rs_has_no_scene_events(self, tmp_path, weights):
        d = make_descriptor(mode="RS", duration=20.0)
        log = load_session(run_headless_session(d, weights, tmp_path))
        assert log.events_of("scene_state") == []
        assert len(log.events_of("score_update")) == 11

    def test_pms_scene_driven_by_pseudo(self, tmp_path, weights):
        d = make_descriptor(mode="PMS", duration=30.0)
        log = load_session(run_headless_session(d, weights, tmp_path))
        scenes = log.events_of("scene_state")
        assert scenes and all(s["payload"]["source"] == "pseudo" for s in scenes)
        driving = [s["payload"]["driving_score"] for s in scenes]
        cnn = [s["payload"]["score"] for s in log.events_of("score_update")]
        assert driving != cnn

    def test_truncated_run_is_aborted_with_data(self, tmp_path, weights):
        d = make_descriptor(duration=15.0)
        log = load_session(run_headless_session(d, weights, tmp_path))
        assert log.status == "aborted"
        assert len(log.samples) == int(15 * FS)

    def test_full_schedule_completes(self, tmp_path, weights):
        # desk-scale paradigm: 2-minute RS schedule, source covers all of it
        d = make_descriptor(mode="RS", duration=120.0)
        d.mode = SessionMode("RS", duration_minutes=2)
        path = run_headless_session(d, weights, tmp_path)
        log = load_session(path)
        assert log.status == "complete"
        prompts = [p["payload"]["prompt_minute"]
                   for p in log.events_of("misc_prompt")]
        assert prompts == [0, 2]

    def test_misc_prompts_fire_on_schedule(self, tmp_path, weights):
        d = make_descriptor(mode="RS", duration=125.0)
        log = load_session(run_headless_session(d, weights, tmp_path))
        prompts = log.events_of("misc_prompt")
        assert [p["payload"]["prompt_minute"] for p in prompts] == [0, 2]

    def test_recording_sample_count(self, tmp_path, weights):
        d = make_descriptor(duration=20.0)
        log = load_session(run_headless_session(d, weights, tmp_path))
        assert len(log.samples) == 20 * FS

    def test_duplicate_session_dir_rejected(self, tmp_path, weights):
        run_headless_session(make_descriptor(duration=11.0), weights, tmp_path)
        with pytest.raises(SessionError):
            SessionRunner(make_descriptor(duration=11.0), weights, tmp_path)


class TestMiscSubmission:
    def test_submit_and_persist(self, tmp_path, weights):
        d = make_descriptor(mode="RS", duration=15.0)
        runner = SessionRunner(d, weights, tmp_path)
        runner.run()
        ack = runner.submit_misc(0, 6, MISC_LABELS[6])
        assert ack["payload"]["value"] == 6
        runner.stop()
        log = load_session(runner.dir)
        acks = log.events_of("misc_ack")
        assert len(acks) == 1 and acks[0]["payload"]["value"] == 6

    def test_duplicate_answer_rejected(self, tmp_path, weights):
        d = make_descriptor(mode="RS", duration=15.0, session_id="dup")
        runner = SessionRunner(d, weights, tmp_path)
        runner.run()
        runner.submit_misc(0, 2, MISC_LABELS[2])
        with pytest.raises(SessionError, match="already answered"):
            runner.submit_misc(0, 3, MISC_LABELS[3])
        runner.stop()
        assert len(load_session(runner.dir).events_of("misc_ack")) == 1

    def test_unknown_prompt_rejected(self, tmp_path, weights):
        d = make_descriptor(mode="RS", duration=15.0, session_id="uk")
        runner = SessionRunner(d, weights, tmp_path)
        runner.run()
        with pytest.raises(SessionError, match="no MISC prompt"):
            runner.submit_misc(40, 1, MISC_LABELS[1])
        runner.stop()

    def test_out_of_range_value_rejected(self, tmp_path, weights):
        from mbci.errors import ResponseValidationError
        d = make_descriptor(mode="RS", duration=15.0, session_id="oor")
        runner = SessionRunner(d, weights, tmp_path)
        runner.run()
        with pytest.raises(ResponseValidationError):
            runner.submit_misc(0, 12, "whatever")
        runner.stop()

    def test_likert_lands_in_manifest(self, tmp_path, weights):
        d = make_descriptor(duration=12.0, session_id="lk")
        runner = SessionRunner(d, weights, tmp_path)
        runner.run()
        runner.submit_likert(3)
        runner.stop()
        assert load_session(runner.dir).likert == 3


class TestPersistenceIntegrity:
    def test_crash_before_manifest_detected(self, tmp_path, weights):
        d = make_descriptor(duration=12.0, session_id="crash")
        runner = SessionRunner(d, weights, tmp_path)
        runner.run()
        # simulated kill: payload written, manifest never lands
        runner._events_fh.flush()
        runner._recorder.close()
        with pytest.raises(CorruptSessionError, match="no manifest"):
            load_session(runner.dir)

    def test_tampered_events_detected(self, tmp_path, weights):
        path = run_headless_session(make_descriptor(duration=12.0, session_id="t1"),
                                    weights, tmp_path)
        events = path / "events.log"
        events.write_text(events.read_text() + "\n")
        with pytest.raises(CorruptSessionError, match="checksum"):
            load_session(path)

    def test_tampered_recording_detected(self, tmp_path, weights):
        path = run_headless_session(make_descriptor(duration=12.0, session_id="t2"),
                                    weights, tmp_path)
        raw = path / "eeg.raw"
        data = bytearray(raw.read_bytes())
        data[-1] ^= 0x01
        raw.write_bytes(bytes(data))
        with pytest.raises(CorruptSessionError, match="checksum"):
            load_session(path)

    def test_every_broadcast_is_persisted(self, tmp_path, weights):
        d = make_descriptor(duration=14.0, session_id="bc")
        runner = SessionRunner(d, weights, tmp_path)
        seen = []
        runner.subscribe(seen.append)
        runner.run()
        runner.stop()
        log = load_session(runner.dir)
        persisted = [json.dumps(e, sort_keys=True) for e in log.events]
        for event in seen:
            assert json.dumps(event, sort_keys=True) in persisted


class TestReplayFidelity:
    def test_offline_replay_reproduces_scores_bit_identically(self, tmp_path, weights):
        d = make_descriptor(duration=25.0, session_id="rp", seed=3)
        path = run_headless_session(d, weights, tmp_path)
        log = load_session(path)
        live = [(e["payload"]["window_start"], e["payload"]["score"])
                for e in log.events_of("score_update")]
        offline = analysis.replay_scores(log, weights)
        assert len(live) == len(offline)
        for (ws_a, score_a), (ws_b, score_b) in zip(live, offline):
            assert ws_a == ws_b
            assert score_a == score_b  # bit-identical
