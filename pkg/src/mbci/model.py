"""Window -> 35x100 time-frequency feature matrix -> CNN forward -> score.

The network (inference only): stem conv 32@3x3/s1 same -> BN -> ReLU ->
maxpool 3x3/s2 -> four parallel branches (conv 32@kxk same, BN, ReLU,
k in {1,3,5,7}) -> concat 128ch -> maxpool 3x3/s2 -> flatten -> dense 100 +
ReLU -> dense 2 -> softmax. Score = 100 * P(mindful).

Weights live in a directory container: `manifest.json` (layer table, shapes,
byte offsets, blob SHA-256) plus `weights.bin` (row-major little-endian
float32 tensors). Pretrained weights are not distributed; the package ships a
seeded He initializer and a hand-built fixture network for closed-loop demos.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dsp import FilterBank, hilbert_envelope, zscore_matrix
from .errors import WeightsError
from .ingest import WindowBuffer

CONTAINER_VERSION = 1
INPUT_SHAPE = (35, 100, 1)
BRANCH_KERNELS = (1, 3, 5, 7)
STEM_CHANNELS = 32
BRANCH_CHANNELS = 32
DENSE_UNITS = 100
N_CLASSES = 2
MINDFUL_CLASS = 1
BN_EPSILON = 1e-5
ENVELOPE_RATE_HZ = 10.0  # feature-matrix time resolution


def _pool_hw(h: int, w: int) -> tuple[int, int]:
    return (h - 3) // 2 + 1, (w - 3) // 2 + 1


def shape_trace() -> list[tuple[int, ...]]:
    """Intermediate tensor shapes from the 35x100x1 input to the logits."""
    h, w, _ = INPUT_SHAPE
    trace = [INPUT_SHAPE, (h, w, STEM_CHANNELS)]
    h1, w1 = _pool_hw(h, w)
    trace.append((h1, w1, STEM_CHANNELS))
    trace.append((h1, w1, BRANCH_CHANNELS * len(BRANCH_KERNELS)))
    h2, w2 = _pool_hw(h1, w1)
    trace.append((h2, w2, BRANCH_CHANNELS * len(BRANCH_KERNELS)))
    trace.append((h2 * w2 * BRANCH_CHANNELS * len(BRANCH_KERNELS),))
    trace.append((DENSE_UNITS,))
    trace.append((N_CLASSES,))
    return trace


def arch_shapes() -> dict[str, tuple[int, ...]]:
    """Expected tensor name -> shape table for container validation."""
    flat = shape_trace()[-3][0]
    shapes: dict[str, tuple[int, ...]] = {
        "stem.conv.weight": (3, 3, 1, STEM_CHANNELS),
        "stem.conv.bias": (STEM_CHANNELS,),
    }
    for part in ("gamma", "beta", "mean", "var"):
        shapes[f"stem.bn.{part}"] = (STEM_CHANNELS,)
    for k in BRANCH_KERNELS:
        shapes[f"branch{k}.conv.weight"] = (k, k, STEM_CHANNELS, BRANCH_CHANNELS)
        shapes[f"branch{k}.conv.bias"] = (BRANCH_CHANNELS,)
        for part in ("gamma", "beta", "mean", "var"):
            shapes[f"branch{k}.bn.{part}"] = (BRANCH_CHANNELS,)
    shapes["dense1.weight"] = (flat, DENSE_UNITS)
    shapes["dense1.bias"] = (DENSE_UNITS,)
    shapes["dense2.weight"] = (DENSE_UNITS, N_CLASSES)
    shapes["dense2.bias"] = (N_CLASSES,)
    return shapes


# ---------------------------------------------------------------------------
# Feature extraction
# ---------------------------------------------------------------------------


@dataclass
class FeatureMatrix:
    values: np.ndarray  # (35, 100), z-scored
    window_start: float
    degenerate: bool = False


class FeatureExtractor:
    """Causal per-window feature path: 35-band filter, envelope, 10 Hz pooling."""

    def __init__(self, sampling_rate: float):
        if sampling_rate % ENVELOPE_RATE_HZ != 0:
            raise ValueError(
                f"sampling rate {sampling_rate} must be a multiple of {ENVELOPE_RATE_HZ} Hz "
                "for envelope pooling")
        self.sampling_rate = float(sampling_rate)
        self.bank = FilterBank(sampling_rate)
        self.block = int(sampling_rate // ENVELOPE_RATE_HZ)
        self.last_stage_ms: dict[str, float] = {}

    def extract(self, window: WindowBuffer) -> FeatureMatrix:
        t0 = time.perf_counter()
        rows = self.bank.apply(np.asarray(window.samples, dtype=np.float64),
                               zero_phase=False)
        t1 = time.perf_counter()
        env = hilbert_envelope(rows)
        t2 = time.perf_counter()
        n_cols = env.shape[1] // self.block
        pooled = env[:, : n_cols * self.block].reshape(env.shape[0], n_cols,
                                                       self.block).mean(axis=2)
        values, degenerate = zscore_matrix(pooled)
        self.last_stage_ms = {"filter_bank": (t1 - t0) * 1e3,
                              "envelope": (t2 - t1) * 1e3}
        return FeatureMatrix(values=values, window_start=window.start_time,
                             degenerate=degenerate)


def extract_features(window: WindowBuffer) -> FeatureMatrix:
    return FeatureExtractor(window.sampling_rate).extract(window)


# ---------------------------------------------------------------------------
# Weight container
# ---------------------------------------------------------------------------


@dataclass
class ModelWeights:
    tensors: dict[str, np.ndarray]  # float64 in memory, float32 on disk
    metadata: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]


def _validate_tensors(tensors: dict[str, np.ndarray]) -> None:
    expected = arch_shapes()
    for name, shape in expected.items():
        if name not in tensors:
            raise WeightsError(f"missing tensor {name!r}")
        got = tuple(tensors[name].shape)
        if got != shape:
            raise WeightsError(f"shape mismatch for {name!r}: got {got}, expected {shape}")
    extra = set(tensors) - set(expected)
    if extra:
        raise WeightsError(f"unknown tensors in container: {sorted(extra)}")
    for name in tensors:
        if name.endswith(".bn.var") and np.any(tensors[name] <= 0):
            raise WeightsError(f"batch-norm running variance must be positive in {name!r}")


def _default_metadata(seed: int | None = None) -> dict:
    meta = {
        "input_shape": list(INPUT_SHAPE),
        "branch_kernels": list(BRANCH_KERNELS),
        "bn_epsilon": BN_EPSILON,
        "classes": ["neutral", "mindful"],
        "flatten_order": "hwc",
    }
    if seed is not None:
        meta["created_seed"] = seed
    return meta


def save_weights(weights: ModelWeights, path: str | Path) -> None:
    """Write manifest.json + weights.bin; deterministic byte-for-byte."""
    _validate_tensors(weights.tensors)
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    order = list(arch_shapes())
    blob = bytearray()
    entries = []
    for name in order:
        raw = np.ascontiguousarray(weights.tensors[name], dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(weights.tensors[name].shape),
                        "offset": len(blob), "nbytes": len(raw)})
        blob.extend(raw)
    manifest = {
        "format_version": CONTAINER_VERSION,
        "dtype": "float32-le",
        "tensors": entries,
        "blob_sha256": hashlib.sha256(bytes(blob)).hexdigest(),
        "metadata": weights.metadata or _default_metadata(),
    }
    (path / "weights.bin").write_bytes(bytes(blob))
    (path / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_weights(path: str | Path) -> ModelWeights:
    """Load and validate a weight container; errors name the offending layer."""
    path = Path(path)
    manifest_path = path / "manifest.json"
    blob_path = path / "weights.bin"
    if not manifest_path.exists() or not blob_path.exists():
        raise WeightsError(f"not a weight container: {path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise WeightsError(f"corrupt manifest: {exc}") from exc
    if manifest.get("format_version") != CONTAINER_VERSION:
        raise WeightsError(f"unknown container version {manifest.get('format_version')}")
    blob = blob_path.read_bytes()
    digest = hashlib.sha256(blob).hexdigest()
    if digest != manifest.get("blob_sha256"):
        raise WeightsError("corrupt payload: blob SHA-256 does not match manifest")
    tensors: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        name, shape = entry["name"], tuple(entry["shape"])
        off, nbytes = entry["offset"], entry["nbytes"]
        if off + nbytes > len(blob):
            raise WeightsError(f"corrupt payload: tensor {name!r} extends past blob end")
        arr = np.frombuffer(blob[off:off + nbytes], dtype="<f4")
        if arr.size != int(np.prod(shape)):
            raise WeightsError(f"corrupt payload: tensor {name!r} size mismatch")
        tensors[name] = arr.reshape(shape).astype(np.float64)
    _validate_tensors(tensors)
    return ModelWeights(tensors=tensors, metadata=manifest.get("metadata", {}))


def init_random_weights(seed: int) -> ModelWeights:
    """He-style fan-in scaled normal initialization, deterministic per seed."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in arch_shapes().items():
        if name.endswith(".weight"):
            fan_in = int(np.prod(shape[:-1]))
            tensors[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        elif name.endswith(".bias") or name.endswith(".bn.beta") or name.endswith(".bn.mean"):
            tensors[name] = np.zeros(shape)
        elif name.endswith(".bn.gamma"):
            tensors[name] = np.ones(shape)
        elif name.endswith(".bn.var"):
            tensors[name] = np.ones(shape)
    return ModelWeights(tensors=tensors, metadata=_default_metadata(seed))


def zero_weights() -> ModelWeights:
    """All-zero weights and biases (BN variance 1); scores exactly 50."""
    tensors = {name: (np.ones(shape) if name.endswith(".bn.var") else np.zeros(shape))
               for name, shape in arch_shapes().items()}
    return ModelWeights(tensors=tensors, metadata=_default_metadata())


def fixture_weights() -> ModelWeights:
    """Hand-built demo network whose score rises with the synthetic latent.

    Channel 0 carries the feature matrix through identity taps (stem 3x3
    center tap, 1x1 branch); a +10 batch-norm shift keeps ReLU transparent.
    After both pools, grid row 0 aggregates the low bands (theta falls with
    the latent) and rows 2-3 the beta bands (rise with it), so a fixed
    row-contrast read out by the dense head is monotone in the latent. This
    is a test fixture, not a trained mindfulness classifier.
    """
    w = zero_weights()
    t = w.tensors
    t["stem.conv.weight"][1, 1, 0, 0] = 1.0
    t["stem.bn.gamma"][0] = 1.0
    t["stem.bn.beta"][0] = 10.0
    t["branch1.conv.weight"][0, 0, 0, 0] = 1.0
    t["branch1.bn.gamma"][0] = 1.0
    grid_h, grid_w, channels = shape_trace()[4]
    col = np.zeros((grid_h, grid_w, channels))
    col[0, :, 0] = -1.0          # low-band rows (theta-dominated)
    col[2:4, :, 0] = 0.5         # beta-dominated rows; weight mass matches row 0
    t["dense1.weight"][:, 0] = col.reshape(-1)
    t["dense1.bias"][0] = 250.0
    gain, center = 0.02, 175.0
    t["dense2.weight"][0, 0] = -gain
    t["dense2.weight"][0, MINDFUL_CLASS] = gain
    t["dense2.bias"][0] = gain * center
    t["dense2.bias"][MINDFUL_CLASS] = -gain * center
    meta = _default_metadata()
    meta["fixture"] = "row-contrast demo network"
    w.metadata = meta
    return w


def fixture_synth_control(latent: float | list[tuple[float, float]] = 0.5):
    """Generator settings tuned for the fixture network's row contrast."""
    from .ingest import SynthControl

    return SynthControl(latent_mindfulness=latent,
                        band_gains={"theta": 30.0, "alpha": 20.0, "beta": 25.0},
                        noise_exponent=1.0, background_rms=10.0)


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------


def _conv2d_same(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """x (H,W,Cin), w (k,k,Cin,Cout) -> (H,W,Cout); stride 1, zero same-padding."""
    k = w.shape[0]
    pad = (k - 1) // 2
    xp = np.pad(x, ((pad, pad), (pad, pad), (0, 0))) if pad else x
    patches = sliding_window_view(xp, (k, k), axis=(0, 1))  # (H, W, Cin, k, k)
    h, wd = x.shape[0], x.shape[1]
    cols = patches.reshape(h * wd, -1)                      # (Cin, k, k) order
    wmat = w.transpose(2, 0, 1, 3).reshape(-1, w.shape[3])
    return (cols @ wmat).reshape(h, wd, -1) + b


def _batch_norm(x: np.ndarray, w: ModelWeights, prefix: str) -> np.ndarray:
    gamma, beta = w[f"{prefix}.gamma"], w[f"{prefix}.beta"]
    mean, var = w[f"{prefix}.mean"], w[f"{prefix}.var"]
    eps = float(w.metadata.get("bn_epsilon", BN_EPSILON))
    return gamma * (x - mean) / np.sqrt(var + eps) + beta


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def _maxpool_3x3_s2(x: np.ndarray) -> np.ndarray:
    win = sliding_window_view(x, (3, 3), axis=(0, 1))
    return win[::2, ::2].max(axis=(-2, -1))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


@dataclass(frozen=True)
class MindfulnessScore:
    score: float        # 0-100
    probability: float  # P(mindful)
    window_start: float
    latency_ms: float = 0.0


@dataclass(frozen=True)
class GapMarker:
    window_start: float
    reason: str = "discontinuous-window"


def stem_forward(weights: ModelWeights, features: np.ndarray,
                 pre_activation: bool = False) -> np.ndarray:
    """Stem convolution output, optionally before BN/ReLU (for linearity checks)."""
    x = np.asarray(features, dtype=np.float64).reshape(INPUT_SHAPE)
    y = _conv2d_same(x, weights["stem.conv.weight"], weights["stem.conv.bias"])
    if pre_activation:
        return y
    return _relu(_batch_norm(y, weights, "stem.bn"))


def forward(weights: ModelWeights, features: FeatureMatrix | np.ndarray) -> MindfulnessScore:
    """Deterministic inference-mode forward pass (dropout = identity)."""
    if isinstance(features, FeatureMatrix):
        values, start = features.values, features.window_start
    else:
        values, start = np.asarray(features, dtype=np.float64), 0.0
    if values.shape != INPUT_SHAPE[:2]:
        raise WeightsError(
            f"feature matrix shape {values.shape} does not match input {INPUT_SHAPE[:2]}")
    t0 = time.perf_counter()
    x = stem_forward(weights, values)
    x = _maxpool_3x3_s2(x)
    branches = []
    for k in BRANCH_KERNELS:
        y = _conv2d_same(x, weights[f"branch{k}.conv.weight"],
                         weights[f"branch{k}.conv.bias"])
        branches.append(_relu(_batch_norm(y, weights, f"branch{k}.bn")))
    x = np.concatenate(branches, axis=-1)
    x = _maxpool_3x3_s2(x)
    flat = x.reshape(-1)
    hidden = _relu(flat @ weights["dense1.weight"] + weights["dense1.bias"])
    logits = hidden @ weights["dense2.weight"] + weights["dense2.bias"]
    prob = float(softmax(logits)[MINDFUL_CLASS])
    latency = (time.perf_counter() - t0) * 1e3
    return MindfulnessScore(score=100.0 * prob, probability=prob,
                            window_start=start, latency_ms=latency)


# ---------------------------------------------------------------------------
# Streaming scorer
# ---------------------------------------------------------------------------


class ScoringPipeline:
    """Owns the causal feature path and per-window timing for one stream."""

    def __init__(self, weights: ModelWeights, sampling_rate: float,
                 deadline_seconds: float = 1.0):
        self.weights = weights
        self.extractor = FeatureExtractor(sampling_rate)
        self.deadline_seconds = deadline_seconds
        self.overruns = 0
        self.stage_ms: list[dict[str, float]] = []

    def score_window(self, window: WindowBuffer) -> MindfulnessScore | GapMarker:
        if window.discontinuous:
            return GapMarker(window_start=window.start_time)
        t0 = time.perf_counter()
        features = self.extractor.extract(window)
        t1 = time.perf_counter()
        result = forward(self.weights, features)
        total_ms = (time.perf_counter() - t0) * 1e3
        stages = dict(self.extractor.last_stage_ms)
        stages["cnn"] = (time.perf_counter() - t1) * 1e3
        stages["total"] = total_ms
        self.stage_ms.append(stages)
        if total_ms > self.deadline_seconds * 1e3:
            self.overruns += 1
        return MindfulnessScore(score=result.score, probability=result.probability,
                                window_start=window.start_time, latency_ms=total_ms)


def score_stream(weights: ModelWeights, windows: Iterable[WindowBuffer],
                 sampling_rate: float | None = None) -> Iterator[MindfulnessScore | GapMarker]:
    """One score (or gap marker) per window, in order."""
    pipeline = None
    for window in windows:
        if pipeline is None:
            pipeline = ScoringPipeline(weights, sampling_rate or window.sampling_rate)
        yield pipeline.score_window(window)
