"""Binary EEG recording format (`eeg.raw`).

Layout: magic b"MBCI" | version u16 LE | sampling_rate f32 LE |
label length u16 LE | label UTF-8 bytes | samples f32 LE (microvolts).

Samples are stored as float32; the stored value is the source of truth, so
the live pipeline quantizes to float32 before scoring and replay reproduces
live scores bit-identically.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .errors import IngestError

MAGIC = b"MBCI"
FORMAT_VERSION = 1
_HEADER_FMT = "<4sHf"  # magic, version, sampling_rate


@dataclass(frozen=True)
class RecordingHeader:
    sampling_rate: float
    channel_label: str
    version: int = FORMAT_VERSION


def write_header(fh: BinaryIO, header: RecordingHeader) -> None:
    fh.write(struct.pack(_HEADER_FMT, MAGIC, header.version, header.sampling_rate))
    label = header.channel_label.encode("utf-8")
    fh.write(struct.pack("<H", len(label)))
    fh.write(label)


def append_samples(fh: BinaryIO, samples: np.ndarray) -> None:
    fh.write(np.asarray(samples, dtype="<f4").tobytes())


def read_header(fh: BinaryIO) -> RecordingHeader:
    head = fh.read(struct.calcsize(_HEADER_FMT))
    if len(head) < struct.calcsize(_HEADER_FMT):
        raise IngestError("recording truncated before header end")
    magic, version, rate = struct.unpack(_HEADER_FMT, head)
    if magic != MAGIC:
        raise IngestError(f"bad magic bytes {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise IngestError(f"unsupported recording version {version}")
    (label_len,) = struct.unpack("<H", fh.read(2))
    label = fh.read(label_len).decode("utf-8")
    if rate <= 0 or not np.isfinite(rate):
        raise IngestError(f"malformed sampling rate {rate}")
    return RecordingHeader(sampling_rate=float(rate), channel_label=label, version=version)


def write_recording(path: str | Path, samples: np.ndarray, sampling_rate: float,
                    channel_label: str = "Fp2") -> None:
    with open(path, "wb") as fh:
        write_header(fh, RecordingHeader(sampling_rate=sampling_rate,
                                         channel_label=channel_label))
        append_samples(fh, samples)


def read_recording(path: str | Path) -> tuple[RecordingHeader, np.ndarray]:
    """Returns the header and the float32 sample array (microvolts)."""
    path = Path(path)
    if not path.exists():
        raise IngestError(f"recording not found: {path}")
    with open(path, "rb") as fh:
        header = read_header(fh)
        payload = fh.read()
    if len(payload) % 4 != 0:
        raise IngestError(f"recording payload truncated mid-sample: {path}")
    samples = np.frombuffer(payload, dtype="<f4")
    return header, samples


class RecordingWriter:
    """Incremental writer used by the live session path."""

    def __init__(self, path: str | Path, sampling_rate: float, channel_label: str = "Fp2"):
        self.path = Path(path)
        self._fh = open(self.path, "wb")
        write_header(self._fh, RecordingHeader(sampling_rate=sampling_rate,
                                               channel_label=channel_label))
        self.n_samples = 0

    def append(self, samples: np.ndarray) -> None:
        append_samples(self._fh, samples)
        self.n_samples += len(samples)

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.flush()
            import os
            os.fsync(self._fh.fileno())
            self._fh.close()
