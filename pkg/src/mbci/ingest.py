"""EEG sample sources (replay, synthetic, device stub) and sliding-window assembly.

A source yields SampleRecords in timestamp order; the WindowAssembler turns
them into overlapping fixed-length windows (default 10 s window, 1 s hop).
Samples are float32-quantized at the source so that a persisted recording
replays bit-identically through the scoring pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import recording
from .dsp import design_bandpass, apply_filter
from .errors import DeviceUnavailableError, IngestError

MIN_SAMPLING_RATE = 150.0  # bank reaches 70.1 Hz; Nyquist must clear it


@dataclass(frozen=True)
class SampleRecord:
    timestamp: float  # seconds since session start
    value: float      # microvolts
    channel: str = "Fp2"


@dataclass
class StreamConfig:
    sampling_rate: float = 250.0
    source_kind: str = "synthetic"  # replay | synthetic | device
    source_locator: str = ""
    window_seconds: float = 10.0
    hop_seconds: float = 1.0

    def validate(self) -> None:
        if self.sampling_rate < MIN_SAMPLING_RATE:
            raise IngestError(
                f"sampling rate {self.sampling_rate} Hz unsupported (< {MIN_SAMPLING_RATE})")
        if not (self.window_seconds > self.hop_seconds > 0):
            raise IngestError("need window_seconds > hop_seconds > 0")
        if self.source_kind not in ("replay", "synthetic", "device"):
            raise IngestError(f"unknown source kind {self.source_kind!r}")


@dataclass
class WindowBuffer:
    samples: np.ndarray
    start_time: float
    sampling_rate: float
    discontinuous: bool = False

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sampling_rate


# ---------------------------------------------------------------------------
# Synthetic generator
# ---------------------------------------------------------------------------


def _default_band_gains() -> dict[str, float]:
    return {"theta": 8.0, "alpha": 10.0, "beta": 6.0}


@dataclass
class SynthControl:
    """Controls for the synthetic EEG generator.

    latent_mindfulness is a constant in [0, 1] or a piecewise-linear
    trajectory given as (time_s, value) breakpoints. Rising latent lowers the
    theta component and raises the beta component, mimicking the direction of
    a mindful state; alpha is untouched. band_gains are component RMS
    amplitudes in microvolts; noise_exponent is the 1/f^a background slope.
    """

    latent_mindfulness: float | list[tuple[float, float]] = 0.5
    band_gains: dict[str, float] = field(default_factory=_default_band_gains)
    noise_exponent: float = 1.0
    background_rms: float = 15.0

    def latent_at(self, t: np.ndarray) -> np.ndarray:
        if isinstance(self.latent_mindfulness, (int, float)):
            lam = np.full_like(t, float(self.latent_mindfulness))
        else:
            pts = sorted(self.latent_mindfulness)
            xp = np.array([p[0] for p in pts])
            fp = np.array([p[1] for p in pts])
            lam = np.interp(t, xp, fp)
        return np.clip(lam, 0.0, 1.0)


_COMPONENT_BANDS = {"theta": (4.0, 8.0), "alpha": (8.0, 13.0), "beta": (13.0, 30.0)}
# theta fades and beta swells as the latent rises; both stay positive
_THETA_SCALE = (1.0, -0.6)  # scale = 1.0 - 0.6 * latent
_BETA_SCALE = (0.4, 0.6)    # scale = 0.4 + 0.6 * latent


def _colored_noise(rng: np.random.Generator, n: int, rate: float,
                   exponent: float, rms: float) -> np.ndarray:
    white = rng.standard_normal(n)
    if rms <= 0:
        return np.zeros(n)
    if exponent == 0.0:
        spectrum_shaped = white
    else:
        spec = np.fft.rfft(white)
        f = np.fft.rfftfreq(n, d=1.0 / rate)
        # plateau below 0.5 Hz keeps ultra-slow wander bounded
        f_eff = np.maximum(f, 0.5)
        shape = f_eff ** (-exponent / 2.0)
        shape[0] = 0.0
        spectrum_shaped = np.fft.irfft(spec * shape, n=n)
    sd = np.std(spectrum_shaped)
    if sd == 0:
        return np.zeros(n)
    return spectrum_shaped * (rms / sd)


def synth_generate(control: SynthControl, duration: float, rate: float = 250.0,
                   seed: int = 0) -> np.ndarray:
    """Deterministic synthetic EEG (float32 microvolts) for a fixed seed.

    Mixes 1/f background noise with band-limited theta/alpha/beta noise whose
    theta power falls and beta power grows monotonically with the latent.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    rng = np.random.default_rng(seed)
    n = int(round(duration * rate))
    t = np.arange(n) / rate
    lam = control.latent_at(t)

    out = _colored_noise(rng, n, rate, control.noise_exponent, control.background_rms)
    for name, (lo, hi) in _COMPONENT_BANDS.items():
        gain = control.band_gains.get(name, 0.0)
        if gain < 0:
            raise ValueError(f"band gain for {name} must be non-negative")
        # draw even when gain is zero so the rng stream does not depend on gains
        white = rng.standard_normal(n)
        if gain == 0.0:
            continue
        spec = design_bandpass(lo, hi, 4, rate)
        comp = apply_filter(spec, white, zero_phase=True)
        comp *= gain / np.std(comp)
        if name == "theta":
            comp *= _THETA_SCALE[0] + _THETA_SCALE[1] * lam
        elif name == "beta":
            comp *= _BETA_SCALE[0] + _BETA_SCALE[1] * lam
        out += comp
    return out.astype(np.float32)


# ---------------------------------------------------------------------------
# Sample streams
# ---------------------------------------------------------------------------


class SampleStream:
    """Iterator of SampleRecords with a known configuration."""

    def __init__(self, config: StreamConfig, samples: np.ndarray, channel: str = "Fp2"):
        self.config = config
        self.channel = channel
        self._samples = np.asarray(samples, dtype=np.float32)
        self._i = 0

    def __iter__(self) -> Iterator[SampleRecord]:
        rate = self.config.sampling_rate
        for i in range(self._i, len(self._samples)):
            yield SampleRecord(timestamp=i / rate, value=float(self._samples[i]),
                               channel=self.channel)

    @property
    def samples(self) -> np.ndarray:
        return self._samples

    def __len__(self) -> int:
        return len(self._samples)


def open_source(config: StreamConfig, duration: float | None = None,
                seed: int = 0, control: SynthControl | None = None) -> SampleStream:
    """Open a sample source per config.source_kind.

    replay: reads an `eeg.raw` recording; recorded timestamps are rescaled to
    the configured rate (set config.sampling_rate = 0 to adopt the file's).
    synthetic: seeded generator, requires `duration`.
    device: stub only; raises DeviceUnavailableError.
    """
    if config.source_kind == "replay":
        header, samples = recording.read_recording(config.source_locator)
        if config.sampling_rate <= 0:
            config.sampling_rate = header.sampling_rate
        config.validate()
        return SampleStream(config, samples, channel=header.channel_label)
    config.validate()
    if config.source_kind == "synthetic":
        if duration is None or duration <= 0:
            raise IngestError("synthetic source needs a positive duration")
        samples = synth_generate(control or SynthControl(), duration,
                                 config.sampling_rate, seed)
        return SampleStream(config, samples)
    raise DeviceUnavailableError(
        f"no EEG device reachable at {config.source_locator or '<unset>'} (stub driver)")


# ---------------------------------------------------------------------------
# Sliding-window assembly
# ---------------------------------------------------------------------------


class WindowAssembler:
    """Assembles timestamp-ordered samples into overlapping windows.

    The first window covers [0, window_seconds); each next one advances by
    hop_seconds and shares window-hop seconds with its predecessor. A
    timestamp gap larger than two sample periods marks the affected windows
    discontinuous; samples are never fabricated.
    """

    def __init__(self, config: StreamConfig):
        config.validate()
        self.config = config
        self.window_n = int(round(config.window_seconds * config.sampling_rate))
        self.hop_n = int(round(config.hop_seconds * config.sampling_rate))
        self._buf: list[float] = []
        self._buf_start = 0  # absolute index of _buf[0]
        self._last_ts: float | None = None
        self._gap_until = -1  # absolute sample index; windows touching it are flagged
        self._emitted = 0

    def push(self, rec: SampleRecord) -> list[WindowBuffer]:
        gap_limit = 2.0 / self.config.sampling_rate
        if self._last_ts is not None:
            if rec.timestamp <= self._last_ts:
                raise IngestError(
                    f"timestamps not strictly increasing: {rec.timestamp} after {self._last_ts}")
            if rec.timestamp - self._last_ts > gap_limit:
                self._gap_until = self._buf_start + len(self._buf)
        self._last_ts = rec.timestamp
        self._buf.append(rec.value)
        return self._drain()

    def _drain(self) -> list[WindowBuffer]:
        out = []
        while len(self._buf) >= self.window_n:
            start_idx = self._buf_start
            samples = np.asarray(self._buf[: self.window_n], dtype=np.float32)
            discont = start_idx < self._gap_until < start_idx + self.window_n
            out.append(WindowBuffer(
                samples=samples,
                start_time=self._emitted * self.config.hop_seconds,
                sampling_rate=self.config.sampling_rate,
                discontinuous=discont,
            ))
            self._emitted += 1
            del self._buf[: self.hop_n]
            self._buf_start += self.hop_n
        return out

    def windows(self, stream: SampleStream) -> Iterator[WindowBuffer]:
        for rec in stream:
            yield from self.push(rec)


def next_window(assembler: WindowAssembler, records: Iterator[SampleRecord]) -> WindowBuffer | None:
    """Pull records until one window is complete; None signals end-of-stream."""
    for rec in records:
        ready = assembler.push(rec)
        if ready:
            return ready[0]
    return None


def iter_windows(stream: SampleStream) -> Iterator[WindowBuffer]:
    yield from WindowAssembler(stream.config).windows(stream)
