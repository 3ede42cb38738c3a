"""Offline analysis: per-session spectral summaries, score replay
verification, and cohort-level statistics with CSV output.

The offline EEG path mirrors the study pipeline: 1-45 Hz zero-phase IIR,
60-second epochs, amplitude-based rejection, Welch PSD per epoch, band
powers averaged over accepted epochs (relatives and ratios recomputed from
the averaged absolute powers).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dsp
from .errors import MbciError
from .model import ModelWeights, ScoringPipeline
from .ingest import StreamConfig, WindowAssembler, SampleStream
from .session import SessionLog, load_session
from .stats import TestResult, bh_fdr, paired_t

SUMMARY_COLUMNS = [
    "session_id", "subject_id", "state", "usable", "mean_misc", "n_misc",
    "mean_score", "n_scores", "epochs_total", "epochs_accepted",
    "theta", "alpha", "beta", "total",
    "relative_theta", "relative_alpha", "relative_beta",
    "theta_beta_ratio", "theta_alpha_ratio",
]

TEST_COLUMNS = ["test", "metric", "group_a", "group_b", "n", "statistic", "df",
                "p_value", "effect_size", "effect_convention", "corrected_p",
                "correction"]


@dataclass
class SessionSummary:
    session_id: str
    subject_id: str
    state: str
    usable: bool
    mean_misc: float | None
    n_misc: int
    mean_score: float | None
    n_scores: int
    epochs_total: int
    epochs_accepted: int
    band_powers: dsp.BandPowers | None
    sampling_rate: float

    def metric(self, name: str) -> float:
        if name in ("mean_misc", "mean_score"):
            value = getattr(self, name)
            if value is None:
                raise MbciError(f"session {self.session_id} has no {name}")
            return value
        if self.band_powers is None:
            raise MbciError(f"session {self.session_id} has no usable epochs")
        return getattr(self.band_powers, name)


def offline_band_powers(samples: np.ndarray, sampling_rate: float
                        ) -> tuple[dsp.BandPowers | None, int, int]:
    """Study-style band powers: (averaged BandPowers, total epochs, accepted)."""
    x = np.asarray(samples, dtype=np.float64)
    spec = dsp.design_bandpass(1.0, 45.0, 4, sampling_rate)
    filtered = dsp.apply_filter(spec, x, zero_phase=True)
    epochs = [dsp.reject_artifacts(e) for e in dsp.split_epochs(filtered, sampling_rate)]
    accepted = [e for e in epochs if e.accepted]
    if not accepted:
        return None, len(epochs), 0
    per_epoch = [dsp.compute_band_powers(dsp.welch_psd(e.samples, sampling_rate))
                 for e in accepted]
    theta = float(np.mean([b.theta for b in per_epoch]))
    alpha = float(np.mean([b.alpha for b in per_epoch]))
    beta = float(np.mean([b.beta for b in per_epoch]))
    total = float(np.mean([b.total for b in per_epoch]))
    averaged = dsp.BandPowers(
        theta=theta, alpha=alpha, beta=beta, total=total,
        relative_theta=theta / total, relative_alpha=alpha / total,
        relative_beta=beta / total,
        theta_beta_ratio=theta / beta if beta > 0 else float("inf"),
        theta_alpha_ratio=theta / alpha if alpha > 0 else float("inf"))
    return averaged, len(epochs), len(accepted)


def summarize_session(session: SessionLog | str | Path) -> SessionSummary:
    if not isinstance(session, SessionLog):
        session = load_session(session)
    powers, n_total, n_accepted = offline_band_powers(session.samples,
                                                      session.sampling_rate)
    misc_values = [e["payload"]["value"] for e in session.events_of("misc_ack")]
    scores = [e["payload"]["score"] for e in session.events_of("score_update")]
    return SessionSummary(
        session_id=session.session_id,
        subject_id=session.subject_id,
        state=session.mode,
        usable=powers is not None,
        mean_misc=float(np.mean(misc_values)) if misc_values else None,
        n_misc=len(misc_values),
        mean_score=float(np.mean(scores)) if scores else None,
        n_scores=len(scores),
        epochs_total=n_total,
        epochs_accepted=n_accepted,
        band_powers=powers,
        sampling_rate=session.sampling_rate,
    )


def replay_scores(session: SessionLog | str | Path,
                  weights: ModelWeights) -> list[tuple[float, float]]:
    """Re-score a persisted recording offline: (window_start, score) pairs.

    With the weights used live, this reproduces the logged score sequence
    bit-identically; the float32 recording is the source of truth.
    """
    if not isinstance(session, SessionLog):
        session = load_session(session)
    config = StreamConfig(sampling_rate=session.sampling_rate, source_kind="replay")
    stream = SampleStream(config, session.samples)
    pipeline = ScoringPipeline(weights, session.sampling_rate)
    assembler = WindowAssembler(config)
    out = []
    for window in assembler.windows(stream):
        result = pipeline.score_window(window)
        if hasattr(result, "score"):
            out.append((window.start_time, result.score))
    return out


# ---------------------------------------------------------------------------
# Cohorts
# ---------------------------------------------------------------------------


def load_cohort(manifest_path: str | Path) -> dict[str, dict[str, SessionSummary]]:
    """Cohort manifest: {"subjects": {id: {STATE: session_dir}}} -> summaries."""
    manifest_path = Path(manifest_path)
    try:
        spec = json.loads(manifest_path.read_text())
        subjects = spec["subjects"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise MbciError(f"corrupt cohort manifest {manifest_path}: {exc}") from exc
    base = manifest_path.parent
    cohort: dict[str, dict[str, SessionSummary]] = {}
    for subject, states in subjects.items():
        cohort[subject] = {}
        for state, rel in states.items():
            path = Path(rel)
            if not path.is_absolute():
                path = base / path
            cohort[subject][state] = summarize_session(path)
    return cohort


def check_uniform_rate(summaries: list[SessionSummary]) -> None:
    rates = {s.sampling_rate for s in summaries}
    if len(rates) > 1:
        raise MbciError(
            f"mixed sampling rates {sorted(rates)}; rerun with an explicit resample rate")


def run_paired_tests(cohort: dict[str, dict[str, SessionSummary]],
                     requests: list[str], alpha: float = 0.05) -> list[dict]:
    """Each request is 'paired:<metric>:<stateA>:<stateB>'. Rows get BH-FDR
    corrected p-values as one family."""
    rows = []
    results: list[TestResult] = []
    for req in requests:
        parts = req.split(":")
        if len(parts) != 4 or parts[0] != "paired":
            raise MbciError(f"unrecognized test request {req!r}")
        _, metric, state_a, state_b = parts
        subjects = sorted(s for s, states in cohort.items()
                          if state_a in states and state_b in states)
        if len(subjects) < 2:
            raise MbciError(f"not enough paired subjects for {req!r}")
        x = np.array([cohort[s][state_a].metric(metric) for s in subjects])
        y = np.array([cohort[s][state_b].metric(metric) for s in subjects])
        res = paired_t(x, y)
        results.append(res)
        rows.append({"test": "paired_t", "metric": metric, "group_a": state_a,
                     "group_b": state_b, "n": len(subjects),
                     "statistic": res.statistic, "df": res.df,
                     "p_value": res.p_value, "effect_size": res.effect_size,
                     "effect_convention": res.effect_convention})
    if rows:
        _, adjusted = bh_fdr(np.array([r["p_value"] for r in rows]), alpha=alpha)
        for row, adj in zip(rows, adjusted):
            row["corrected_p"] = float(adj)
            row["correction"] = "benjamini-hochberg"
    return rows


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------


def summary_row(s: SessionSummary) -> dict:
    row = {c: "" for c in SUMMARY_COLUMNS}
    row.update({
        "session_id": s.session_id, "subject_id": s.subject_id, "state": s.state,
        "usable": int(s.usable), "n_misc": s.n_misc, "n_scores": s.n_scores,
        "epochs_total": s.epochs_total, "epochs_accepted": s.epochs_accepted,
    })
    if s.mean_misc is not None:
        row["mean_misc"] = f"{s.mean_misc:.6g}"
    if s.mean_score is not None:
        row["mean_score"] = f"{s.mean_score:.6g}"
    if s.band_powers is not None:
        for name in ("theta", "alpha", "beta", "total", "relative_theta",
                     "relative_alpha", "relative_beta", "theta_beta_ratio",
                     "theta_alpha_ratio"):
            row[name] = f"{getattr(s.band_powers, name):.6g}"
    return row


def write_summary_csv(summaries: list[SessionSummary], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        writer.writeheader()
        for s in summaries:
            writer.writerow(summary_row(s))


def write_tests_csv(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TEST_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
