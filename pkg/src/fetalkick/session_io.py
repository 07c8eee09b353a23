"""Session file format: parsing, serialization and Z-channel extraction.

A session file is UTF-8 CSV with LF line endings:

    #FKS1,mother_id=<str>,age=<int>,ga_weeks=<int>,gender=<m|f|u>,parity=<int>,fs=<float>
    S,<t>,<ax>,<ay>,<az>
    E,<t>,<mb|mm|us>,<fm|ml|mr|mo>

The header line is mandatory and must come first.  ``S`` rows carry one
tri-axial accelerometer sample each; times and accelerations are printed
with six fractional digits.  ``E`` rows carry annotation events and may be
interleaved with samples or trail them.  An optional ``notes=<text>``
header key (percent-encoded) carries free-text metadata.  Unknown trailing
header keys are ignored with a warning.

Parsing is total: a byte stream either yields a valid recording or raises
:class:`SessionParseError` with the offending line number.  Writing is
canonical (samples first, annotations trailing, sorted) so that
``parse_session(write_session(rec)) == rec`` for any recording whose
numeric fields are representable at six decimal places.
"""

from __future__ import annotations

import math
import urllib.parse
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

HEADER_MAGIC = "#FKS1"
TIME_RESOLUTION_S = 1e-6  # six fractional digits in the file format


class Gender(str, Enum):
    MALE = "m"
    FEMALE = "f"
    UNSTATED = "u"


class AnnotationSource(str, Enum):
    MOTHER_BUTTON = "mb"
    MATERNAL_MOVEMENT_BUTTON = "mm"
    ULTRASOUND = "us"


class AnnotationKind(str, Enum):
    FETAL_MOVEMENT = "fm"
    MATERNAL_LAUGH = "ml"
    MATERNAL_RESPIRATORY = "mr"
    MATERNAL_OTHER = "mo"


class SessionParseError(ValueError):
    """Raised when a session file is rejected; carries the 1-based line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"{message} at line {line}")
        self.line = line


@dataclass(frozen=True)
class SessionMetadata:
    mother_id: str
    maternal_age: int
    gestational_age_weeks: int
    fetal_gender: Gender
    parity: int
    notes: str = ""

    def validate(self) -> None:
        if not self.mother_id:
            raise ValueError("mother_id must be non-empty")
        if "," in self.mother_id or "\n" in self.mother_id:
            raise ValueError("mother_id must not contain ',' or newlines")
        if not 20 <= self.gestational_age_weeks <= 45:
            raise ValueError(
                f"gestational_age_weeks {self.gestational_age_weeks} outside [20, 45]"
            )
        if self.parity < 0:
            raise ValueError("parity must be >= 0")


@dataclass(frozen=True)
class AccelSample:
    t: float
    ax: float
    ay: float
    az: float


@dataclass(frozen=True)
class AnnotationEvent:
    t: float
    source: AnnotationSource
    kind: AnnotationKind

    def validate(self) -> None:
        if self.t < 0:
            raise ValueError("annotation time must be non-negative")
        if (
            self.source is AnnotationSource.MOTHER_BUTTON
            and self.kind is not AnnotationKind.FETAL_MOVEMENT
        ):
            raise ValueError("mother_button events must have kind fetal_movement")


@dataclass
class SessionRecording:
    """One recording session: metadata, samples and annotation events.

    Samples are stored as a float64 array of shape ``(n, 4)`` with columns
    ``t, ax, ay, az`` in time order.
    """

    metadata: SessionMetadata
    sample_rate_hz: float
    samples: np.ndarray
    annotations: list[AnnotationEvent] = field(default_factory=list)

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def t(self) -> np.ndarray:
        return self.samples[:, 0]

    @property
    def az(self) -> np.ndarray:
        return self.samples[:, 3]

    @property
    def duration_s(self) -> float:
        return float(self.samples[-1, 0]) if self.n_samples else 0.0

    def sample(self, i: int) -> AccelSample:
        t, ax, ay, az = self.samples[i]
        return AccelSample(float(t), float(ax), float(ay), float(az))

    @classmethod
    def from_samples(
        cls,
        metadata: SessionMetadata,
        sample_rate_hz: float,
        samples: list[AccelSample] | np.ndarray,
        annotations: list[AnnotationEvent] | None = None,
    ) -> "SessionRecording":
        if isinstance(samples, np.ndarray):
            arr = np.asarray(samples, dtype=np.float64)
        else:
            arr = np.array([(s.t, s.ax, s.ay, s.az) for s in samples], dtype=np.float64)
        rec = cls(metadata, float(sample_rate_hz), arr, list(annotations or []))
        rec.validate()
        return rec

    def validate(self) -> None:
        """Check type invariants; raises ValueError on the first violation.

        Session length is not enforced here: short recordings are valid as
        parse/write payloads and are rejected only when segmented.
        """
        self.metadata.validate()
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        if self.samples.ndim != 2 or self.samples.shape[1] != 4:
            raise ValueError("samples must have shape (n, 4)")
        if self.n_samples == 0:
            raise ValueError("recording has no samples")
        t = self.t
        dt = np.diff(t)
        if np.any(dt <= 0):
            bad = int(np.argmax(dt <= 0))
            raise ValueError(f"non-monotonic timestamp at sample index {bad + 1}")
        expected = 1.0 / self.sample_rate_hz
        if np.any(np.abs(dt - expected) > TIME_RESOLUTION_S + 1e-12):
            bad = int(np.argmax(np.abs(dt - expected) > TIME_RESOLUTION_S + 1e-12))
            raise ValueError(
                f"sample spacing {dt[bad]:.9f}s deviates from 1/fs at index {bad + 1}"
            )
        if t[0] < 0:
            raise ValueError("timestamps must be non-negative")
        last_t = float(t[-1])
        prev = -math.inf
        for ev in self.annotations:
            ev.validate()
            if ev.t < prev:
                raise ValueError("annotations must be sorted by time")
            if ev.t > last_t + TIME_RESOLUTION_S:
                raise ValueError(f"annotation at t={ev.t} beyond last sample t={last_t}")
            prev = ev.t


_HEADER_KEYS = ("mother_id", "age", "ga_weeks", "gender", "parity", "fs")


def _parse_header(line: str, lineno: int) -> tuple[SessionMetadata, float]:
    parts = line.split(",")
    if parts[0] != HEADER_MAGIC:
        raise SessionParseError(f"malformed header: expected '{HEADER_MAGIC}'", lineno)
    pairs: dict[str, str] = {}
    for tok in parts[1:]:
        if "=" not in tok:
            raise SessionParseError(f"malformed header field {tok!r}", lineno)
        key, value = tok.split("=", 1)
        if key in pairs:
            raise SessionParseError(f"duplicate header key {key!r}", lineno)
        pairs[key] = value
    for key in _HEADER_KEYS:
        if key not in pairs:
            raise SessionParseError(f"missing header key {key!r}", lineno)
    unknown = [k for k in pairs if k not in _HEADER_KEYS and k != "notes"]
    if unknown:
        warnings.warn(f"ignoring unknown header keys: {', '.join(sorted(unknown))}")
    try:
        gender = Gender(pairs["gender"])
    except ValueError:
        raise SessionParseError(f"unknown gender token {pairs['gender']!r}", lineno) from None
    try:
        meta = SessionMetadata(
            mother_id=pairs["mother_id"],
            maternal_age=int(pairs["age"]),
            gestational_age_weeks=int(pairs["ga_weeks"]),
            fetal_gender=gender,
            parity=int(pairs["parity"]),
            notes=urllib.parse.unquote(pairs.get("notes", "")),
        )
        fs = float(pairs["fs"])
        meta.validate()
        if not (fs > 0 and math.isfinite(fs)):
            raise ValueError("fs must be positive and finite")
    except ValueError as exc:
        raise SessionParseError(f"malformed header: {exc}", lineno) from None
    return meta, fs


def parse_session(data: bytes | str) -> SessionRecording:
    """Parse a session byte stream into a :class:`SessionRecording`.

    Any malformed input rejects the whole file with a positioned error;
    no partially parsed recording is ever returned.
    """
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise SessionParseError("empty file", 1)

    meta, fs = _parse_header(lines[0], 1)
    expected_dt = 1.0 / fs

    sample_rows: list[tuple[float, float, float, float]] = []
    events: list[tuple[int, AnnotationEvent]] = []
    prev_t: float | None = None
    prev_ev_t = -math.inf
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            raise SessionParseError("blank line", lineno)
        fields = line.split(",")
        tag = fields[0]
        if tag == "S":
            if len(fields) != 5:
                raise SessionParseError(
                    f"row arity mismatch: expected 5 fields, got {len(fields)}", lineno
                )
            try:
                t, ax, ay, az = (float(v) for v in fields[1:])
            except ValueError:
                raise SessionParseError("malformed numeric field", lineno) from None
            if prev_t is not None:
                if t <= prev_t:
                    raise SessionParseError("non-monotonic timestamp", lineno)
                if abs((t - prev_t) - expected_dt) > TIME_RESOLUTION_S + 1e-12:
                    raise SessionParseError(
                        f"sample spacing {t - prev_t:.9f}s deviates from 1/fs={expected_dt:.9f}s",
                        lineno,
                    )
            elif t < 0:
                raise SessionParseError("negative timestamp", lineno)
            prev_t = t
            sample_rows.append((t, ax, ay, az))
        elif tag == "E":
            if len(fields) != 4:
                raise SessionParseError(
                    f"row arity mismatch: expected 4 fields, got {len(fields)}", lineno
                )
            try:
                ev_t = float(fields[1])
            except ValueError:
                raise SessionParseError("malformed numeric field", lineno) from None
            try:
                source = AnnotationSource(fields[2])
                kind = AnnotationKind(fields[3])
            except ValueError:
                raise SessionParseError(
                    f"unknown enum token {fields[2]!r}/{fields[3]!r}", lineno
                ) from None
            ev = AnnotationEvent(ev_t, source, kind)
            try:
                ev.validate()
            except ValueError as exc:
                raise SessionParseError(str(exc), lineno) from None
            if ev_t < prev_ev_t:
                raise SessionParseError("annotations out of order", lineno)
            prev_ev_t = ev_t
            events.append((lineno, ev))
        else:
            raise SessionParseError(f"unknown row type {tag!r}", lineno)

    if not sample_rows:
        raise SessionParseError("file contains no samples", len(lines))
    last_t = sample_rows[-1][0]
    for lineno, ev in events:
        if ev.t > last_t + TIME_RESOLUTION_S:
            raise SessionParseError(
                f"annotation t={ev.t} beyond last sample t={last_t}", lineno
            )

    rec = SessionRecording(
        metadata=meta,
        sample_rate_hz=fs,
        samples=np.array(sample_rows, dtype=np.float64),
        annotations=[ev for _, ev in events],
    )
    rec.validate()
    return rec


def write_session(rec: SessionRecording) -> bytes:
    """Serialize a recording to canonical CSV bytes (samples, then events)."""
    rec.validate()
    meta = rec.metadata
    header = (
        f"{HEADER_MAGIC},mother_id={meta.mother_id},age={meta.maternal_age},"
        f"ga_weeks={meta.gestational_age_weeks},gender={meta.fetal_gender.value},"
        f"parity={meta.parity},fs={rec.sample_rate_hz!r}"
    )
    if meta.notes:
        header += f",notes={urllib.parse.quote(meta.notes)}"
    out = [header]
    for t, ax, ay, az in rec.samples:
        out.append(f"S,{t:.6f},{ax:.6f},{ay:.6f},{az:.6f}")
    for ev in rec.annotations:
        out.append(f"E,{ev.t:.6f},{ev.source.value},{ev.kind.value}")
    out.append("")
    return "\n".join(out).encode("utf-8")


def load_session(path) -> SessionRecording:
    with open(path, "rb") as fh:
        return parse_session(fh.read())


def save_session(rec: SessionRecording, path) -> None:
    with open(path, "wb") as fh:
        fh.write(write_session(rec))


def extract_z(rec: SessionRecording) -> tuple[np.ndarray, float]:
    """Return the Z-axis signal (time order, copy) and its sample rate.

    Only the axis normal to the abdomen is analyzed downstream; the in-plane
    channels are carried through I/O but never enter the processing chain.
    """
    return rec.samples[:, 3].copy(), rec.sample_rate_hz


def relabel(rec: SessionRecording, **meta_changes) -> SessionRecording:
    """Return a copy of the recording with updated metadata fields."""
    return SessionRecording(
        metadata=replace(rec.metadata, **meta_changes),
        sample_rate_hz=rec.sample_rate_hz,
        samples=rec.samples,
        annotations=list(rec.annotations),
    )
