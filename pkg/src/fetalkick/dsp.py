"""Shared signal front end: high-pass filter, segmentation, labels, STFT.

The chain is: high-pass filter the Z channel (optional for algorithm 1),
cut it into non-overlapping 200-sample segments, label each segment from
ground truth or annotations, and render a magnitude spectrogram per
segment.  Default STFT parameters (window 48, hop 6, fft 126, Hann) give
exactly a 64x26 image per 200-sample segment.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import IntEnum
from typing import Iterable, Sequence

import numpy as np

from .session_io import AnnotationEvent, AnnotationSource
from .synth import GroundTruth

SEGMENT_LEN = 200


class SegmentClass(IntEnum):
    FETAL = 1
    LAUGH = 2
    RESPIRATORY = 3


@dataclass(frozen=True)
class FilterKernel:
    """Linear-phase FIR high-pass kernel (odd length, symmetric taps)."""

    taps: np.ndarray
    fs: float
    cutoff_hz: float

    def validate(self) -> None:
        taps = self.taps
        if taps.ndim != 1 or len(taps) % 2 == 0:
            raise ValueError("taps must be a 1-D odd-length vector")
        if np.max(np.abs(taps - taps[::-1])) > 1e-12:
            raise ValueError("taps must be symmetric (linear phase)")
        if abs(taps.sum()) > 1e-3:
            raise ValueError("DC gain too large for a high-pass kernel")


def _kaiser_beta(atten_db: float) -> float:
    if atten_db > 50:
        return 0.1102 * (atten_db - 8.7)
    if atten_db >= 21:
        return 0.5842 * (atten_db - 21) ** 0.4 + 0.07886 * (atten_db - 21)
    return 0.0


def design_highpass(fs: float, cutoff_hz: float, n_taps: int = 101) -> FilterKernel:
    """Design a windowed-sinc high-pass via spectral inversion.

    The transition band spans [0.5*cutoff, 2*cutoff]; a Kaiser window is
    sized to the attenuation achievable with ``n_taps`` over that band, so
    with 101 taps at fs=50 / cutoff=1 the stopband sits near -50 dB.
    DC gain is exactly zero by construction.
    """
    if not 0 < cutoff_hz < fs / 2:
        raise ValueError(f"cutoff {cutoff_hz} Hz must lie in (0, fs/2)")
    if n_taps % 2 == 0 or n_taps < 11:
        raise ValueError("n_taps must be odd and >= 11")
    width_hz = 1.5 * cutoff_hz
    centre_hz = 1.25 * cutoff_hz  # low-pass prototype cutoff
    delta_omega = 2 * np.pi * width_hz / fs
    atten_db = 2.285 * delta_omega * (n_taps - 1) + 7.95
    beta = _kaiser_beta(atten_db)

    m = np.arange(n_taps) - (n_taps - 1) / 2
    lowpass = (2 * centre_hz / fs) * np.sinc(2 * centre_hz / fs * m)
    lowpass *= np.kaiser(n_taps, beta)
    lowpass /= lowpass.sum()  # unity DC gain before inversion
    taps = -lowpass
    taps[(n_taps - 1) // 2] += 1.0
    kernel = FilterKernel(taps=taps, fs=float(fs), cutoff_hz=float(cutoff_hz))
    kernel.validate()
    return kernel


def apply_filter(signal: np.ndarray, kernel: FilterKernel) -> np.ndarray:
    """Zero-phase filtering with reflection padding; output length = input length."""
    x = np.asarray(signal, dtype=np.float64)
    taps = kernel.taps
    if len(x) < len(taps):
        raise ValueError(f"signal length {len(x)} shorter than kernel length {len(taps)}")
    pad = len(taps) // 2
    padded = np.pad(x, pad, mode="reflect")
    return np.convolve(padded, taps, mode="valid")


@dataclass(frozen=True)
class Segment:
    """One 200-sample window of the Z signal, the unit of classification."""

    values: np.ndarray
    t_start: float
    duration_s: float
    label: SegmentClass | None = None
    mother_id: str = ""

    @property
    def t_end(self) -> float:
        return self.t_start + self.duration_s

    def validate(self) -> None:
        if len(self.values) != SEGMENT_LEN:
            raise ValueError(f"segment length must be {SEGMENT_LEN}, got {len(self.values)}")


def segment(signal: np.ndarray, fs: float, mother_id: str = "") -> list[Segment]:
    """Cut the signal into consecutive non-overlapping 200-sample segments.

    The trailing remainder (< 200 samples) is discarded, never padded.
    """
    x = np.asarray(signal, dtype=np.float64)
    if len(x) < SEGMENT_LEN:
        raise ValueError(f"signal too short to segment: {len(x)} < {SEGMENT_LEN}")
    n_seg = len(x) // SEGMENT_LEN
    duration = SEGMENT_LEN / fs
    return [
        Segment(
            values=x[i * SEGMENT_LEN : (i + 1) * SEGMENT_LEN],
            t_start=i * SEGMENT_LEN / fs,
            duration_s=duration,
            mother_id=mother_id,
        )
        for i in range(n_seg)
    ]


def _event_intervals(
    truth: GroundTruth | Iterable[AnnotationEvent], tol_s: float
) -> tuple[list[tuple[float, float]], list[tuple[float, float]]]:
    """Class-1 and class-2 intervals from either truth or annotation events."""
    if isinstance(truth, GroundTruth):
        return truth.of_class(1), truth.of_class(2)
    class1, class2 = [], []
    for ev in truth:
        if ev.source is AnnotationSource.ULTRASOUND:
            class1.append((ev.t - tol_s, ev.t + tol_s))
        elif ev.source is AnnotationSource.MATERNAL_MOVEMENT_BUTTON:
            class2.append((ev.t - tol_s, ev.t + tol_s))
    return class1, class2


def _intersects(intervals: Sequence[tuple[float, float]], lo: float, hi: float) -> bool:
    return any(a < hi and b > lo for a, b in intervals)


def label_segments(
    segments: Sequence[Segment],
    truth: GroundTruth | Iterable[AnnotationEvent],
    tol_s: float = 1.0,
) -> list[Segment]:
    """Assign a class to each segment by interval intersection.

    Class 1 wins over class 2 when both intersect a segment (missing a
    movement is the costlier error); anything untouched is class 3.
    Annotation-driven labeling treats an ultrasound event as a class-1
    interval of +-``tol_s`` around the event, and a maternal-movement
    button press likewise for class 2.
    """
    if tol_s < 0:
        raise ValueError("tol_s must be >= 0")
    class1, class2 = _event_intervals(truth, tol_s)
    out = []
    for seg in segments:
        lo, hi = seg.t_start, seg.t_end
        if _intersects(class1, lo, hi):
            label = SegmentClass.FETAL
        elif _intersects(class2, lo, hi):
            label = SegmentClass.LAUGH
        else:
            label = SegmentClass.RESPIRATORY
        out.append(replace(seg, label=label))
    return out


@dataclass(frozen=True)
class StftParams:
    window_len: int = 48
    hop: int = 6
    fft_len: int = 126
    window: str = "hann"

    def validate(self) -> None:
        if self.fft_len < self.window_len:
            raise ValueError("fft_len must be >= window_len")
        if self.window_len < 1 or self.hop < 1:
            raise ValueError("window_len and hop must be positive")
        if self.window not in ("hann", "hamming", "rect"):
            raise ValueError(f"unknown window {self.window!r}")

    @property
    def n_bins(self) -> int:
        return self.fft_len // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.window_len:
            raise ValueError(f"input length {n_samples} shorter than window {self.window_len}")
        return (n_samples - self.window_len) // self.hop + 1

    def window_values(self) -> np.ndarray:
        if self.window == "hann":
            return np.hanning(self.window_len)
        if self.window == "hamming":
            return np.hamming(self.window_len)
        return np.ones(self.window_len)


@dataclass(frozen=True)
class Spectrogram:
    """Non-negative magnitude matrix, frequency (rows) by time (columns)."""

    magnitudes: np.ndarray
    freq_axis: np.ndarray
    time_axis: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.magnitudes.shape

    def validate(self) -> None:
        if self.magnitudes.ndim != 2:
            raise ValueError("magnitudes must be 2-D")
        if np.any(self.magnitudes < 0):
            raise ValueError("magnitudes must be non-negative")


def stft_magnitude(
    seg: Segment | np.ndarray, params: StftParams | None = None, fs: float = 50.0
) -> Spectrogram:
    """One-sided magnitude STFT of a segment.

    Column ``j`` is ``|rfft(window * values[j*hop : j*hop + window_len],
    n=fft_len)|``.  With default parameters a 200-sample segment maps to
    exactly 64 bins x 26 frames.
    """
    p = params or StftParams()
    p.validate()
    if isinstance(seg, Segment):
        values, t0 = seg.values, seg.t_start
    else:
        values, t0 = np.asarray(seg, dtype=np.float64), 0.0
    n_frames = p.n_frames(len(values))
    win = p.window_values()
    frames = np.lib.stride_tricks.sliding_window_view(values, p.window_len)[:: p.hop][:n_frames]
    spectrum = np.fft.rfft(frames * win, n=p.fft_len, axis=1)
    mags = np.abs(spectrum).T
    freq_axis = np.arange(p.n_bins) * fs / p.fft_len
    offsets = np.arange(n_frames) * p.hop
    time_axis = t0 + (offsets + p.window_len / 2) / fs
    return Spectrogram(magnitudes=mags, freq_axis=freq_axis, time_axis=time_axis)


def matrix_to_image(matrix: np.ndarray, mode: str = "log_gray") -> np.ndarray:
    """log1p + per-matrix min-max normalization to [0, 1], channel-first.

    A constant matrix maps to all zeros by convention.  ``log_rgb_replicate``
    tiles the single channel three times.
    """
    if mode not in ("log_gray", "log_rgb_replicate"):
        raise ValueError(f"unknown image mode {mode!r}")
    x = np.log1p(np.asarray(matrix, dtype=np.float64))
    lo, hi = x.min(), x.max()
    img = np.zeros_like(x) if hi == lo else (x - lo) / (hi - lo)
    img = img[np.newaxis, :, :]
    if mode == "log_rgb_replicate":
        img = np.tile(img, (3, 1, 1))
    return img


def to_image(sp: Spectrogram, mode: str = "log_gray") -> np.ndarray:
    sp.validate()
    return matrix_to_image(sp.magnitudes, mode)


def write_pgm(path, image: np.ndarray) -> None:
    """Write a single-channel [0,1] image as plain (ASCII) PGM."""
    img = np.asarray(image)
    if img.ndim == 3:
        if img.shape[0] != 1:
            raise ValueError("write_pgm expects a single-channel image")
        img = img[0]
    pixels = np.clip(np.rint(img * 255), 0, 255).astype(int)
    rows = [" ".join(str(v) for v in row) for row in pixels]
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"P2\n{img.shape[1]} {img.shape[0]}\n255\n")
        fh.write("\n".join(rows) + "\n")


def write_ppm(path, image: np.ndarray) -> None:
    """Write a 3-channel channel-first [0,1] image as plain (ASCII) PPM."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError("write_ppm expects a (3, H, W) image")
    pixels = np.clip(np.rint(img * 255), 0, 255).astype(int)
    interleaved = np.transpose(pixels, (1, 2, 0))
    rows = [" ".join(str(v) for v in row.ravel()) for row in interleaved]
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"P3\n{img.shape[2]} {img.shape[1]}\n255\n")
        fh.write("\n".join(rows) + "\n")


def read_pgm(path) -> np.ndarray:
    """Read a plain PGM back into a [0,1] float image (H, W)."""
    with open(path, encoding="ascii") as fh:
        tokens = fh.read().split()
    if tokens[0] != "P2":
        raise ValueError("not a plain PGM file")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    data = np.array([int(v) for v in tokens[4 : 4 + w * h]], dtype=np.float64)
    return data.reshape(h, w) / maxval
