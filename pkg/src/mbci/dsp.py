"""Signal-processing primitives: IIR band-pass design, the 35-band filter bank,
Hilbert envelopes, Welch PSD, band powers, epoching, artifact rejection and
matrix normalization.

All functions are pure; filters carry no hidden state. The streaming path uses
causal (single-pass) filtering, the offline path zero-phase (forward-backward).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

from .errors import DegenerateDataError, FilterDesignError

# Analysis band definitions (Hz). Relative powers are fractions of TOTAL_BAND.
THETA_BAND = (4.0, 8.0)
ALPHA_BAND = (8.0, 13.0)
BETA_BAND = (13.0, 30.0)
TOTAL_BAND = (1.0, 40.0)

EPOCH_SECONDS = 60.0
REJECT_HIGH_UV = 300.0
REJECT_LOW_UV = 10.0


@dataclass(frozen=True)
class FilterSpec:
    """A realized band-pass IIR filter.

    `order` is the Butterworth design order as passed to the designer (the
    realized band-pass has twice that many poles). Coefficients are stored as
    second-order sections for numerical stability in narrow low bands.
    """

    low_hz: float
    high_hz: float
    order: int
    sampling_rate: float
    sos: np.ndarray = field(repr=False)

    def poles(self) -> np.ndarray:
        _, p, _ = sps.sos2zpk(self.sos)
        return p

    def is_stable(self) -> bool:
        return bool(np.all(np.abs(self.poles()) < 1.0))


def design_bandpass(low_hz: float, high_hz: float, order: int = 4,
                    sampling_rate: float = 250.0) -> FilterSpec:
    """Design a stable Butterworth band-pass filter.

    Raises FilterDesignError when the band is invalid for the rate or the
    realized filter is unstable; never silently clips edges.
    """
    nyquist = sampling_rate / 2.0
    if not (0.0 <= low_hz < high_hz):
        raise FilterDesignError(f"band edges must satisfy 0 <= low < high, got [{low_hz}, {high_hz}]")
    if high_hz >= nyquist:
        raise FilterDesignError(
            f"high edge {high_hz} Hz reaches Nyquist ({nyquist} Hz at rate {sampling_rate})")
    if order < 2 or order % 2 != 0:
        raise FilterDesignError(f"order must be a positive even integer, got {order}")
    sos = sps.butter(order, [low_hz, high_hz], btype="bandpass",
                     fs=sampling_rate, output="sos")
    spec = FilterSpec(low_hz=low_hz, high_hz=high_hz, order=order,
                      sampling_rate=sampling_rate, sos=sos)
    if not spec.is_stable():
        raise FilterDesignError(
            f"unstable design for band [{low_hz}, {high_hz}] Hz at rate {sampling_rate}")
    return spec


def apply_filter(spec: FilterSpec, x: np.ndarray, zero_phase: bool = True) -> np.ndarray:
    """Apply a band-pass filter along the last axis.

    zero_phase=True runs forward-backward (offline analysis); False runs a
    single causal pass from zero initial state (real-time feature path).
    """
    x = np.asarray(x, dtype=np.float64)
    min_len = 3 * spec.order
    if x.shape[-1] < min_len:
        raise ValueError(f"signal length {x.shape[-1]} < 3x filter order ({min_len})")
    if zero_phase:
        return sps.sosfiltfilt(spec.sos, x, axis=-1)
    return sps.sosfilt(spec.sos, x, axis=-1)


# ---------------------------------------------------------------------------
# Filter bank
# ---------------------------------------------------------------------------

FILTER_BANK_SIZE = 35
FILTER_BANK_LOW_HZ = 0.1
FILTER_BANK_STEP_HZ = 2.0


def filter_bank_edges() -> list[tuple[float, float]]:
    """The 35 abutting 2 Hz bands: [0.1, 2.1], [2.1, 4.1], ..., [68.1, 70.1]."""
    return [(FILTER_BANK_LOW_HZ + FILTER_BANK_STEP_HZ * i,
             FILTER_BANK_LOW_HZ + FILTER_BANK_STEP_HZ * (i + 1))
            for i in range(FILTER_BANK_SIZE)]


class FilterBank:
    """Ordered bank of 35 band-pass filters spanning 0.1-70.1 Hz."""

    def __init__(self, sampling_rate: float, order: int = 4):
        if sampling_rate < 150.0:
            raise FilterDesignError(
                f"sampling rate {sampling_rate} Hz too low for the 70.1 Hz bank (need >= 150)")
        self.sampling_rate = float(sampling_rate)
        self.bands: list[FilterSpec] = []
        for i, (lo, hi) in enumerate(filter_bank_edges()):
            try:
                self.bands.append(design_bandpass(lo, hi, order, sampling_rate))
            except FilterDesignError as exc:
                raise FilterDesignError(f"band {i} [{lo}, {hi}] Hz: {exc}") from exc

    def __len__(self) -> int:
        return len(self.bands)

    def apply(self, x: np.ndarray, zero_phase: bool = False) -> np.ndarray:
        """Filter `x` through every band; returns shape (35, len(x)).

        Rows are ordered by ascending band frequency. The default is the
        causal mode used by the real-time feature path.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError("filter bank input must be one-dimensional")
        out = np.empty((len(self.bands), x.shape[-1]), dtype=np.float64)
        for i, spec in enumerate(self.bands):
            try:
                out[i] = apply_filter(spec, x, zero_phase=zero_phase)
            except ValueError as exc:
                raise ValueError(f"band {i}: {exc}") from exc
        return out


def filter_bank_apply(bank: FilterBank, samples: np.ndarray,
                      zero_phase: bool = False) -> np.ndarray:
    return bank.apply(samples, zero_phase=zero_phase)


# ---------------------------------------------------------------------------
# Envelope and spectra
# ---------------------------------------------------------------------------


def hilbert_envelope(x: np.ndarray) -> np.ndarray:
    """Magnitude of the analytic signal, computed in the frequency domain.

    The envelope dominates the signal: env >= |x| - 1e-9 pointwise.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < 16:
        raise ValueError(f"signal too short for envelope extraction ({x.shape[-1]} < 16)")
    return np.abs(sps.hilbert(x, axis=-1))


@dataclass(frozen=True)
class PsdEstimate:
    """One-sided Welch PSD in uV^2/Hz."""

    frequencies: np.ndarray
    power: np.ndarray
    resolution: float
    segment_seconds: float
    overlap_fraction: float
    taper: str = "hann"


def welch_psd(x: np.ndarray, sampling_rate: float, segment_seconds: float = 4.0,
              overlap_fraction: float = 0.5) -> PsdEstimate:
    """Averaged periodogram over Hann-tapered overlapping segments.

    Frequency resolution is 1/segment_seconds. Satisfies Parseval within a
    few percent for stationary inputs: sum(power) * df ~= var(x).
    """
    x = np.asarray(x, dtype=np.float64)
    nperseg = int(round(segment_seconds * sampling_rate))
    if x.shape[-1] < nperseg:
        raise ValueError(
            f"signal ({x.shape[-1]} samples) shorter than one segment ({nperseg})")
    noverlap = int(round(overlap_fraction * nperseg))
    # detrending off so a DC signal shows up at the 0 Hz bin
    freqs, power = sps.welch(x, fs=sampling_rate, window="hann",
                             nperseg=nperseg, noverlap=noverlap, detrend=False)
    return PsdEstimate(frequencies=freqs, power=power,
                       resolution=1.0 / segment_seconds,
                       segment_seconds=segment_seconds,
                       overlap_fraction=overlap_fraction)


def band_power(psd: PsdEstimate, low_hz: float, high_hz: float) -> float:
    """Rectangle-rule integral of the PSD over [low_hz, high_hz).

    Bins are assigned half-open and the integral is a difference of shared
    prefix sums, so adjacent bands are exactly additive in floating point.
    """
    f = psd.frequencies
    if low_hz < f[0] or high_hz > f[-1] + psd.resolution:
        raise ValueError(f"band [{low_hz}, {high_hz}] outside PSD range [{f[0]}, {f[-1]}]")
    i_lo = int(np.searchsorted(f, low_hz, side="left"))
    i_hi = int(np.searchsorted(f, high_hz, side="left"))
    if i_lo >= i_hi:
        raise ValueError(f"no PSD bins inside band [{low_hz}, {high_hz})")
    prefix = np.concatenate(([0.0], np.cumsum(psd.power * psd.resolution)))
    return float(prefix[i_hi] - prefix[i_lo])


@dataclass(frozen=True)
class BandPowers:
    """Absolute and relative band powers plus attention ratios for one PSD."""

    theta: float
    alpha: float
    beta: float
    total: float
    relative_theta: float
    relative_alpha: float
    relative_beta: float
    theta_beta_ratio: float
    theta_alpha_ratio: float


def compute_band_powers(psd: PsdEstimate) -> BandPowers:
    """Band powers for theta/alpha/beta over the 1-40 Hz total.

    Raises DegenerateDataError when total power is zero (relatives undefined).
    """
    theta = band_power(psd, *THETA_BAND)
    alpha = band_power(psd, *ALPHA_BAND)
    beta = band_power(psd, *BETA_BAND)
    total = band_power(psd, *TOTAL_BAND)
    if total <= 0.0:
        raise DegenerateDataError("total 1-40 Hz power is zero; relative powers undefined")
    return BandPowers(
        theta=theta, alpha=alpha, beta=beta, total=total,
        relative_theta=theta / total,
        relative_alpha=alpha / total,
        relative_beta=beta / total,
        theta_beta_ratio=theta / beta if beta > 0 else float("inf"),
        theta_alpha_ratio=theta / alpha if alpha > 0 else float("inf"),
    )


# ---------------------------------------------------------------------------
# Epoching and artifact rejection
# ---------------------------------------------------------------------------


@dataclass
class Epoch:
    samples: np.ndarray
    index: int
    accepted: bool = True
    rejection_reason: str | None = None


def split_epochs(x: np.ndarray, sampling_rate: float,
                 epoch_seconds: float = EPOCH_SECONDS) -> list[Epoch]:
    """Consecutive non-overlapping epochs; a trailing remainder is discarded."""
    x = np.asarray(x, dtype=np.float64)
    n = int(round(epoch_seconds * sampling_rate))
    count = len(x) // n
    return [Epoch(samples=x[i * n:(i + 1) * n], index=i) for i in range(count)]


def reject_artifacts(epoch: Epoch, high_uv: float = REJECT_HIGH_UV,
                     low_uv: float = REJECT_LOW_UV) -> Epoch:
    """Flag an epoch whose peak amplitude exceeds 300 uV (artifact) or stays
    below 10 uV (flat/disconnected). Thresholds are on max |sample|."""
    peak = float(np.max(np.abs(epoch.samples)))
    if peak > high_uv:
        epoch.accepted = False
        epoch.rejection_reason = "over-amplitude"
    elif peak < low_uv:
        epoch.accepted = False
        epoch.rejection_reason = "under-amplitude"
    else:
        epoch.accepted = True
        epoch.rejection_reason = None
    return epoch


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

_DEGENERATE_SD = 1e-12


def zscore_matrix(m: np.ndarray) -> tuple[np.ndarray, bool]:
    """Z-score over all elements (single global mean/sd).

    Returns (normalized, degenerate). A near-constant input yields all zeros
    with degenerate=True instead of dividing by ~0.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.size == 0:
        raise ValueError("cannot z-score an empty matrix")
    sd = float(np.std(m))
    if sd < _DEGENERATE_SD:
        return np.zeros_like(m), True
    return (m - float(np.mean(m))) / sd, False
