"""Seeded synthetic session generator with exact ground-truth labels.

Generates tri-axial recordings whose Z channel is a sum of slow drift,
a respiratory sinusoid, Gaussian noise, and two kinds of transient events:

* fetal movements: exponentially damped oscillations, 0.5-2 s, in a
  configurable burst band (default 5-15 Hz);
* maternal laughs: amplitude-modulated oscillations, 2-5 s, in a lower
  band (default 3-6 Hz).

Everything else is respiratory background (class 3).  Event supports never
overlap and never cross the session boundary.  Identical configs produce
bit-identical output, which makes the generator usable as a test oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .seeds import subseed
from .session_io import (
    AnnotationEvent,
    AnnotationKind,
    AnnotationSource,
    Gender,
    SessionMetadata,
    SessionRecording,
)

DRIFT_CUTOFF_HZ = 0.05


class PackingError(ValueError):
    """Requested events cannot be placed disjointly within the session."""


@dataclass(frozen=True)
class SynthConfig:
    duration_s: float = 1200.0
    fs: float = 50.0
    n_fetal: int = 96
    n_laugh: int = 26
    respiratory_freq_hz: float = 0.3
    respiratory_amp: float = 0.2
    burst_freq_band_hz: tuple[float, float] = (5.0, 15.0)
    laugh_freq_band_hz: tuple[float, float] = (3.0, 6.0)
    burst_amp: float = 0.35
    laugh_amp: float = 0.25
    burst_duration_s: tuple[float, float] = (0.5, 2.0)
    laugh_duration_s: tuple[float, float] = (2.0, 5.0)
    drift_amp: float = 0.05
    noise_sigma: float = 0.02
    perception_rate: float = 0.8
    min_gap_s: float = 2.0
    seed: int = 0
    mother_id: str = "m00"

    def validate(self) -> None:
        if self.duration_s <= 0 or self.fs <= 0:
            raise ValueError("duration_s and fs must be positive")
        if not 0.2 <= self.respiratory_freq_hz <= 0.4:
            raise ValueError("respiratory_freq_hz must lie in [0.2, 0.4]")
        for name in ("respiratory_amp", "burst_amp", "laugh_amp", "drift_amp", "noise_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.fs <= 2 * self.burst_freq_band_hz[1]:
            raise ValueError("fs must exceed twice the burst band upper edge")
        if not 0 <= self.perception_rate <= 1:
            raise ValueError("perception_rate must lie in [0, 1]")
        if self.n_fetal < 0 or self.n_laugh < 0:
            raise ValueError("event counts must be non-negative")


@dataclass(frozen=True)
class GroundTruth:
    """Disjoint, sorted event intervals ``(t_start, t_end, cls)`` with cls in {1, 2}.

    Time outside every interval is respiratory background (class 3).
    """

    intervals: tuple[tuple[float, float, int], ...] = field(default_factory=tuple)

    def validate(self) -> None:
        prev_end = -np.inf
        for t0, t1, cls in self.intervals:
            if cls not in (1, 2):
                raise ValueError(f"interval class {cls} not in {{1, 2}}")
            if t1 <= t0:
                raise ValueError("interval must have positive length")
            if t0 < prev_end:
                raise ValueError("intervals must be disjoint and sorted")
            prev_end = t1

    def of_class(self, cls: int) -> list[tuple[float, float]]:
        return [(t0, t1) for t0, t1, c in self.intervals if c == cls]


def _place_events(rng: np.random.Generator, cfg: SynthConfig) -> list[tuple[float, float, int]]:
    """Place event supports disjointly with at least ``min_gap_s`` separation."""
    durations = np.concatenate(
        [
            rng.uniform(*cfg.burst_duration_s, size=cfg.n_fetal),
            rng.uniform(*cfg.laugh_duration_s, size=cfg.n_laugh),
        ]
    )
    classes = np.concatenate(
        [np.ones(cfg.n_fetal, dtype=int), np.full(cfg.n_laugh, 2, dtype=int)]
    )
    k = len(durations)
    if k == 0:
        return []
    order = rng.permutation(k)
    durations, classes = durations[order], classes[order]

    budget = cfg.duration_s - float(durations.sum()) - cfg.min_gap_s * (k + 1)
    if budget < 0:
        raise PackingError(
            f"cannot place {cfg.n_fetal} fetal + {cfg.n_laugh} laugh events "
            f"in {cfg.duration_s:.0f}s (short by {-budget:.1f}s)"
        )
    slack = rng.dirichlet(np.ones(k + 1)) * budget
    events = []
    cursor = 0.0
    for i in range(k):
        cursor += cfg.min_gap_s + slack[i]
        t0 = cursor
        t1 = t0 + durations[i]
        events.append((t0, t1, int(classes[i])))
        cursor = t1
    return events


def _drift(rng: np.random.Generator, n: int, fs: float, amp: float) -> np.ndarray:
    """Band-limited (<= 0.05 Hz) random walk scaled to peak amplitude ``amp``."""
    n_bins = int(DRIFT_CUTOFF_HZ * n / fs)
    if amp == 0 or n_bins < 1:
        # keep the rng stream position independent of amp
        rng.normal(size=2 * max(n_bins, 1))
        return np.zeros(n)
    spectrum = np.zeros(n // 2 + 1, dtype=complex)
    coeffs = rng.normal(size=n_bins) + 1j * rng.normal(size=n_bins)
    spectrum[1 : n_bins + 1] = coeffs / np.arange(1, n_bins + 1)
    x = np.fft.irfft(spectrum, n=n)
    peak = np.max(np.abs(x))
    return x * (amp / peak) if peak > 0 else x


def _burst(rng: np.random.Generator, t_local: np.ndarray, duration: float, cfg: SynthConfig) -> np.ndarray:
    freq = rng.uniform(*cfg.burst_freq_band_hz)
    phase = rng.uniform(0, 2 * np.pi)
    amp = cfg.burst_amp * rng.uniform(0.7, 1.3)
    tau = duration / 3.0
    return amp * np.exp(-t_local / tau) * np.sin(2 * np.pi * freq * t_local + phase)


def _laugh(rng: np.random.Generator, t_local: np.ndarray, duration: float, cfg: SynthConfig) -> np.ndarray:
    freq = rng.uniform(*cfg.laugh_freq_band_hz)
    phase = rng.uniform(0, 2 * np.pi)
    mod_freq = rng.uniform(0.8, 1.6)
    amp = cfg.laugh_amp * rng.uniform(0.7, 1.3)
    support = np.sin(np.pi * t_local / duration) ** 2  # smooth onset/offset
    am = 0.6 + 0.4 * np.sin(2 * np.pi * mod_freq * t_local)
    return amp * support * am * np.sin(2 * np.pi * freq * t_local + phase)


def generate_session(
    cfg: SynthConfig, metadata: SessionMetadata | None = None
) -> tuple[SessionRecording, GroundTruth]:
    """Generate one session and its exact ground truth, deterministically."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n = int(round(cfg.duration_s * cfg.fs))
    t = np.arange(n) / cfg.fs

    events = _place_events(rng, cfg)
    z = _drift(rng, n, cfg.fs, cfg.drift_amp)
    phase = rng.uniform(0, 2 * np.pi)
    z += cfg.respiratory_amp * np.sin(2 * np.pi * cfg.respiratory_freq_hz * t + phase)
    if cfg.noise_sigma > 0:
        z += rng.normal(0, cfg.noise_sigma, n)
    else:
        rng.normal(0, 1.0, n)  # keep stream position stable

    annotations: list[AnnotationEvent] = []
    last_t = t[-1] if n else 0.0
    for t0, t1, cls in events:
        i0, i1 = int(np.ceil(t0 * cfg.fs)), int(np.floor(t1 * cfg.fs))
        t_local = t[i0:i1] - t0
        center = (t0 + t1) / 2.0
        if cls == 1:
            z[i0:i1] += _burst(rng, t_local, t1 - t0, cfg)
            annotations.append(
                AnnotationEvent(center, AnnotationSource.ULTRASOUND, AnnotationKind.FETAL_MOVEMENT)
            )
            felt = rng.uniform() < cfg.perception_rate
            offset = rng.uniform(-1.0, 1.0)
            if felt:
                t_mb = float(np.clip(center + offset, 0.0, last_t))
                annotations.append(
                    AnnotationEvent(t_mb, AnnotationSource.MOTHER_BUTTON, AnnotationKind.FETAL_MOVEMENT)
                )
        else:
            z[i0:i1] += _laugh(rng, t_local, t1 - t0, cfg)
            annotations.append(
                AnnotationEvent(
                    center, AnnotationSource.MATERNAL_MOVEMENT_BUTTON, AnnotationKind.MATERNAL_LAUGH
                )
            )

    # small in-plane channels so the X/Y axes are present but uninformative
    ax = 0.3 * rng.normal(0, max(cfg.noise_sigma, 1e-3), n)
    ay = 0.3 * rng.normal(0, max(cfg.noise_sigma, 1e-3), n)

    if metadata is None:
        metadata = SessionMetadata(
            mother_id=cfg.mother_id,
            maternal_age=int(rng.integers(22, 40)),
            gestational_age_weeks=int(rng.integers(28, 43)),
            fetal_gender=Gender(rng.choice(["m", "f", "u"], p=[0.45, 0.45, 0.10])),
            parity=int(rng.integers(0, 4)),
        )

    # quantize to the file format resolution so disk round-trips are exact
    samples = np.column_stack(
        [np.round(t, 6), np.round(ax, 6), np.round(ay, 6), np.round(z, 6)]
    )
    annotations.sort(key=lambda ev: ev.t)
    annotations = [replace(ev, t=round(ev.t, 6)) for ev in annotations]
    rec = SessionRecording(metadata, cfg.fs, samples, annotations)
    rec.validate()
    truth = GroundTruth(tuple((round(a, 6), round(b, 6), c) for a, b, c in events))
    truth.validate()
    return rec, truth


def generate_corpus(
    n_mothers: int, cfg_template: SynthConfig | None = None, seed: int = 0
) -> list[tuple[SessionRecording, GroundTruth]]:
    """Generate one session per mother with jittered physiology.

    Respiratory frequency and all amplitudes vary across mothers; event
    counts follow the template so the aggregate class mix stays stable.
    """
    if n_mothers < 1:
        raise ValueError("n_mothers must be >= 1")
    base = cfg_template or SynthConfig()
    out = []
    for i in range(n_mothers):
        jrng = np.random.default_rng(subseed(seed, f"jitter:{i}"))
        cfg = replace(
            base,
            respiratory_freq_hz=float(jrng.uniform(0.22, 0.38)),
            respiratory_amp=base.respiratory_amp * float(jrng.uniform(0.7, 1.4)),
            burst_amp=base.burst_amp * float(jrng.uniform(0.8, 1.25)),
            laugh_amp=base.laugh_amp * float(jrng.uniform(0.8, 1.25)),
            drift_amp=base.drift_amp * float(jrng.uniform(0.5, 1.5)),
            noise_sigma=base.noise_sigma * float(jrng.uniform(0.8, 1.2)),
            seed=subseed(seed, f"session:{i}"),
            mother_id=f"m{i:02d}",
        )
        out.append(generate_session(cfg))
    return out


def write_truth(truth: GroundTruth, path) -> None:
    """Write the ground-truth sidecar: one ``t_start,t_end,class`` row per event."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t0, t1, cls in truth.intervals:
            fh.write(f"{t0:.6f},{t1:.6f},{cls}\n")


def read_truth(path) -> GroundTruth:
    intervals = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            t0, t1, cls = line.split(",")
            intervals.append((float(t0), float(t1), int(cls)))
    truth = GroundTruth(tuple(intervals))
    truth.validate()
    return truth
