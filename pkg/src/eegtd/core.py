"""Domain types shared across the pipeline plus the EEGR recording format
and the schedule CSV format.

EEGR layout (little-endian throughout):
    magic "EEGR" | version u32 | sampling_rate f64 | n_channels u32 |
    n_samples u64 | per channel: name_len u16 + UTF-8 name |
    samples as f32, sample-major (all channels of t0, then t1, ...)

Schedule CSV: one metadata comment line, then header ``onset,class,duration``.
Target rows use class 1 (true target) or 2 (error target); dynamics rows use
100 (camera rotation) or 101 (weather shift).
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import BinaryIO, TextIO

import numpy as np

EEGR_MAGIC = b"EEGR"
EEGR_VERSION = 1

ROTATION_CSV_CODE = 100
WEATHER_CSV_CODE = 101


class FormatError(ValueError):
    """Serialized bytes or CSV rows violate a file format."""


class ClassId(IntEnum):
    NON_TARGET = 0
    TRUE_TARGET = 1
    ERROR_TARGET = 2


class DynamicsKind(IntEnum):
    CAMERA_ROTATION = 0
    WEATHER_SHIFT = 1


_KIND_TO_CSV = {
    DynamicsKind.CAMERA_ROTATION: ROTATION_CSV_CODE,
    DynamicsKind.WEATHER_SHIFT: WEATHER_CSV_CODE,
}
_CSV_TO_KIND = {v: k for k, v in _KIND_TO_CSV.items()}


@dataclass
class Recording:
    """Multichannel sampled EEG in microvolts, channel-major in memory."""

    sampling_rate: float
    channel_names: list[str]
    samples: np.ndarray  # (n_channels, n_samples) float32

    def __post_init__(self) -> None:
        self.samples = np.ascontiguousarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 2:
            raise ValueError("samples must be a 2-D [n_channels x n_samples] matrix")
        if not (np.isfinite(self.sampling_rate) and self.sampling_rate > 0):
            raise ValueError(f"sampling_rate must be positive, got {self.sampling_rate}")
        if len(set(self.channel_names)) != len(self.channel_names):
            raise ValueError("channel names must be unique")
        if len(self.channel_names) != self.samples.shape[0]:
            raise ValueError(
                f"{len(self.channel_names)} channel names for "
                f"{self.samples.shape[0]} sample rows"
            )
        if not np.isfinite(self.samples).all():
            raise ValueError("samples contain non-finite values")

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    def channel_index(self, name: str) -> int:
        try:
            return self.channel_names.index(name)
        except ValueError:
            raise ValueError(f"unknown channel label {name!r}") from None


@dataclass(frozen=True)
class Event:
    """One 1-second (by default) target appearance."""

    onset: int
    class_id: ClassId
    duration: int

    def __post_init__(self) -> None:
        if self.onset < 0:
            raise ValueError(f"event onset must be >= 0, got {self.onset}")
        if self.duration <= 0:
            raise ValueError(f"event duration must be > 0, got {self.duration}")
        if self.class_id == ClassId.NON_TARGET:
            raise ValueError("target events cannot carry the non-target class")

    @property
    def end(self) -> int:
        return self.onset + self.duration


@dataclass(frozen=True)
class DynamicsEvent:
    """A stimulus dynamics (confounder) span: camera rotation or weather shift."""

    onset: int
    kind: DynamicsKind
    duration: int

    def __post_init__(self) -> None:
        if self.onset < 0:
            raise ValueError(f"dynamics onset must be >= 0, got {self.onset}")
        if self.duration <= 0:
            raise ValueError(f"dynamics duration must be > 0, got {self.duration}")

    @property
    def end(self) -> int:
        return self.onset + self.duration


@dataclass
class EventSchedule:
    """Timed target events plus dynamics events for one stimulus video."""

    total_samples: int
    sampling_rate: float
    targets: list[Event] = field(default_factory=list)
    dynamics: list[DynamicsEvent] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.total_samples <= 0:
            raise ValueError("total_samples must be > 0")
        if not (np.isfinite(self.sampling_rate) and self.sampling_rate > 0):
            raise ValueError("sampling_rate must be positive")
        self.targets = sorted(self.targets, key=lambda e: e.onset)
        self.dynamics = sorted(self.dynamics, key=lambda e: e.onset)
        prev_end = 0
        for ev in self.targets:
            if ev.onset < prev_end:
                raise ValueError(
                    f"target spans overlap near sample {ev.onset} "
                    f"(previous span ends at {prev_end})"
                )
            prev_end = ev.end
        for ev in [*self.targets, *self.dynamics]:
            if ev.end > self.total_samples:
                raise ValueError(
                    f"event span [{ev.onset}, {ev.end}) exceeds "
                    f"total_samples {self.total_samples}"
                )


@dataclass
class LabelTrack:
    """Per-sample class labels, aligned with a recording of equal length."""

    labels: np.ndarray  # (n_samples,) int8 of ClassId values

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels, dtype=np.int8)
        if self.labels.ndim != 1:
            raise ValueError("labels must be a 1-D vector")

    def __len__(self) -> int:
        return int(self.labels.shape[0])


@dataclass
class Epoch:
    """A fixed-length channels x time window with its class label."""

    data: np.ndarray  # (n_channels, window_len) float32
    label: ClassId
    source_onset: int

    def __post_init__(self) -> None:
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise ValueError("epoch data must be 2-D")
        if not np.isfinite(self.data).all():
            raise ValueError("epoch data contains non-finite values")


def _read_exact(source: BinaryIO, n: int, what: str) -> bytes:
    buf = source.read(n)
    if buf is None or len(buf) != n:
        got = 0 if buf is None else len(buf)
        raise FormatError(f"truncated input reading {what}: wanted {n} bytes, got {got}")
    return buf


def write_recording(rec: Recording, destination: BinaryIO) -> int:
    """Serialize `rec` as EEGR; returns the number of bytes written."""
    header = EEGR_MAGIC + struct.pack(
        "<IdIQ", EEGR_VERSION, rec.sampling_rate, rec.n_channels, rec.n_samples
    )
    written = destination.write(header)
    for name in rec.channel_names:
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ValueError(f"channel name too long: {name!r}")
        written += destination.write(struct.pack("<H", len(encoded)) + encoded)
    payload = np.ascontiguousarray(rec.samples.T, dtype="<f4").tobytes()
    written += destination.write(payload)
    return written


def read_recording(source: BinaryIO) -> Recording:
    """Parse an EEGR byte stream, validating every header field."""
    magic = _read_exact(source, 4, "magic")
    if magic != EEGR_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {EEGR_MAGIC!r}")
    version, rate, n_channels, n_samples = struct.unpack(
        "<IdIQ", _read_exact(source, 24, "header")
    )
    if version != EEGR_VERSION:
        raise FormatError(f"unsupported EEGR version {version}")
    if not (np.isfinite(rate) and rate > 0):
        raise FormatError(f"invalid sampling rate {rate}")
    if n_channels == 0:
        raise FormatError("recording declares zero channels")
    names = []
    for i in range(n_channels):
        (name_len,) = struct.unpack("<H", _read_exact(source, 2, f"name length {i}"))
        raw = _read_exact(source, name_len, f"channel name {i}")
        try:
            names.append(raw.decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise FormatError(f"channel name {i} is not valid UTF-8") from exc
    payload = _read_exact(source, 4 * n_channels * n_samples, "sample payload")
    samples = (
        np.frombuffer(payload, dtype="<f4").reshape(n_samples, n_channels).T.copy()
    )
    try:
        return Recording(rate, names, samples)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def write_schedule(schedule: EventSchedule, destination: TextIO) -> None:
    """Write the schedule CSV (metadata comment, header, then event rows)."""
    destination.write(
        f"# total_samples={schedule.total_samples} "
        f"sampling_rate={schedule.sampling_rate!r}\n"
    )
    destination.write("onset,class,duration\n")
    for ev in schedule.targets:
        destination.write(f"{ev.onset},{int(ev.class_id)},{ev.duration}\n")
    for dyn in schedule.dynamics:
        destination.write(f"{dyn.onset},{_KIND_TO_CSV[dyn.kind]},{dyn.duration}\n")


def read_schedule(
    source: TextIO,
    total_samples: int | None = None,
    sampling_rate: float | None = None,
) -> EventSchedule:
    """Parse a schedule CSV.

    The file's metadata comment supplies total_samples/sampling_rate; the
    keyword arguments serve as fallbacks for files without the comment.
    """
    lines = iter(source)
    header = None
    for raw in lines:
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            for token in line[1:].split():
                key, _, value = token.partition("=")
                if key == "total_samples":
                    total_samples = int(value)
                elif key == "sampling_rate":
                    sampling_rate = float(value)
            continue
        header = line
        break
    if header != "onset,class,duration":
        raise FormatError(f"bad schedule header {header!r}")
    if total_samples is None or sampling_rate is None:
        raise FormatError(
            "schedule metadata missing: provide total_samples and sampling_rate "
            "via the '#' comment line or as arguments"
        )
    targets: list[Event] = []
    dynamics: list[DynamicsEvent] = []
    for row_no, row in enumerate(csv.reader(lines), start=1):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        try:
            onset, code, duration = (int(cell) for cell in row)
        except (ValueError, TypeError) as exc:
            raise FormatError(f"unparsable schedule row {row_no}: {row!r}") from exc
        if code in (int(ClassId.TRUE_TARGET), int(ClassId.ERROR_TARGET)):
            targets.append(Event(onset, ClassId(code), duration))
        elif code in _CSV_TO_KIND:
            dynamics.append(DynamicsEvent(onset, _CSV_TO_KIND[code], duration))
        else:
            raise FormatError(f"row {row_no}: class code {code} not in {{1,2,100,101}}")
    return EventSchedule(total_samples, sampling_rate, targets, dynamics)


def load_recording(path) -> Recording:
    with open(path, "rb") as fh:
        return read_recording(fh)


def save_recording(rec: Recording, path) -> int:
    with open(path, "wb") as fh:
        return write_recording(rec, fh)


def load_schedule(path) -> EventSchedule:
    with open(path, "r", encoding="utf-8") as fh:
        return read_schedule(fh)


def save_schedule(schedule: EventSchedule, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        write_schedule(schedule, fh)
