"""Fourier processing and peak picking for simulated time signals.

Processing chain (per axis): mean removal, optional Hann window, zero padding
by ``pad_factor``, FFT, ``fftshift``. The 2D transform removes row and
column means (axial ridges) before windowing. Frequency resolution is one bin
of the padded axis, ``1 / (n_padded * dt)``.

Peak tables keep only positive frequencies and are sorted by descending
amplitude; 2D peaks are labelled ``diagonal``, ``cross`` or ``other``.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any, Union

import numpy as np
from scipy import ndimage, signal
from scipy.cluster import hierarchy

from nanonmr2d.experiments import TimeSignal1D, TimeSignal2D
from nanonmr2d.spins import ComplexArray, FloatArray

logger = logging.getLogger(__name__)

WINDOWS = ("hann", "none")
MODES = ("magnitude", "real")
MIN_SAMPLES = 8
CLASSIFY_TOLERANCE_BINS = 1.5


# -----------------------------
# Models
# -----------------------------
@dataclass(frozen=True, eq=False)
class Spectrum1D:
    """Complex spectrum on an ascending frequency axis (Hz).

    Attributes:
        frequencies: Padded axis, ``fftshift`` order.
        values: Complex amplitudes.
        resolution: Bin width in Hz.
        n_samples: Time samples before padding.
    """

    frequencies: FloatArray
    values: ComplexArray
    resolution: float
    n_samples: int
    metadata: Mapping[str, Any] = field(default_factory=dict)

    @property
    def magnitude(self) -> FloatArray:
        return np.abs(self.values)

    @property
    def sampling_rate(self) -> float:
        return self.resolution * self.frequencies.size


@dataclass(frozen=True, eq=False)
class Spectrum2D:
    """Complex 2D spectrum; ``values[i, j]`` sits at ``(frequencies1[i], frequencies2[j])``."""

    frequencies1: FloatArray
    frequencies2: FloatArray
    values: ComplexArray
    resolution: tuple[float, float]
    n_samples: tuple[int, int]
    metadata: Mapping[str, Any] = field(default_factory=dict)

    @property
    def magnitude(self) -> FloatArray:
        return np.abs(self.values)


@dataclass(frozen=True)
class Peak:
    """One picked peak.

    Attributes:
        frequency: ``(f,)`` for 1D or ``(f1, f2)`` for 2D, Hz.
        amplitude: Refined height (positive).
        width: FWHM per axis, Hz.
        kind: ``peak`` (1D), ``diagonal``, ``cross`` or ``other``.
    """

    frequency: tuple[float, ...]
    amplitude: float
    width: tuple[float, ...]
    kind: str = "peak"

    @property
    def is_cross_peak(self) -> bool:
        return self.kind == "cross"


@dataclass(frozen=True)
class PeakTable:
    """Peaks sorted by descending amplitude.

    Attributes:
        resolution: Bin width per axis, Hz.
        mode: ``magnitude`` or ``real``.
    """

    peaks: tuple[Peak, ...]
    resolution: tuple[float, ...]
    mode: str = "magnitude"

    def __len__(self) -> int:
        return len(self.peaks)

    def of_kind(self, kind: str) -> list[Peak]:
        return [p for p in self.peaks if p.kind == kind]

    def frequencies(self) -> list[tuple[float, ...]]:
        return [p.frequency for p in self.peaks]


# -----------------------------
# Transforms
# -----------------------------
def _uniform_step(axis: FloatArray, name: str) -> float:
    if axis.size < MIN_SAMPLES:
        raise ValueError(f"{name} needs at least {MIN_SAMPLES} samples (got {axis.size})")
    steps = np.diff(axis)
    dt = float(steps.mean())
    if np.abs(steps - dt).max() > 1e-9 * dt:
        raise ValueError(f"{name} is not uniformly sampled")
    return dt


def _window(n: int, window: str) -> FloatArray:
    if window not in WINDOWS:
        raise ValueError(f"Invalid window '{window}' (expected hann or none)")
    return np.hanning(n) if window == "hann" else np.ones(n)


def _check_pad(pad_factor: int) -> None:
    if pad_factor < 1:
        raise ValueError("pad_factor must be >= 1")


def fft_1d(sig: TimeSignal1D, window: str = "hann", pad_factor: int = 4) -> Spectrum1D:
    """Mean-subtracted, windowed, zero-padded FFT of a 1D signal.

    Raises:
        ValueError: On fewer than 8 samples or non-uniform sampling.
    """
    _check_pad(pad_factor)
    dt = _uniform_step(sig.axis, "axis")
    n = sig.values.size
    x = (sig.values - sig.values.mean()) * _window(n, window)
    n_pad = n * pad_factor
    values = np.fft.fftshift(np.fft.fft(x, n=n_pad))
    freqs = np.fft.fftshift(np.fft.fftfreq(n_pad, d=dt))
    return Spectrum1D(freqs, values, 1.0 / (n_pad * dt), n, dict(sig.metadata))


def fft_2d(sig: TimeSignal2D, window: str = "hann", pad_factor: int = 4) -> Spectrum2D:
    """2D counterpart of ``fft_1d``; row and column means are removed first."""
    _check_pad(pad_factor)
    dt1 = _uniform_step(sig.axis1, "axis1")
    dt2 = _uniform_step(sig.axis2, "axis2")
    v = sig.values
    centered = v - v.mean(axis=1, keepdims=True) - v.mean(axis=0, keepdims=True) + v.mean()
    n1, n2 = v.shape
    x = centered * np.outer(_window(n1, window), _window(n2, window))
    shape = (n1 * pad_factor, n2 * pad_factor)
    values = np.fft.fftshift(np.fft.fft2(x, s=shape))
    f1 = np.fft.fftshift(np.fft.fftfreq(shape[0], d=dt1))
    f2 = np.fft.fftshift(np.fft.fftfreq(shape[1], d=dt2))
    res = (1.0 / (shape[0] * dt1), 1.0 / (shape[1] * dt2))
    return Spectrum2D(f1, f2, values, res, (n1, n2), dict(sig.metadata))


def fold_frequency(frequency: float, sampling_rate: float) -> float:
    """Apparent position in ``[0, fs/2]`` of a line sampled at ``sampling_rate``."""
    if sampling_rate <= 0:
        raise ValueError("sampling_rate must be > 0")
    r = math.fmod(abs(frequency), sampling_rate)
    return min(r, sampling_rate - r)


def unfold_frequency(folded: float, sampling_rate: float, hint: float) -> float:
    """The alias of ``folded`` closest to ``hint``."""
    if sampling_rate <= 0:
        raise ValueError("sampling_rate must be > 0")
    k = round(hint / sampling_rate)
    candidates = [m * sampling_rate + s * folded for m in (k - 1, k, k + 1) for s in (1, -1)]
    return min(candidates, key=lambda c: (abs(c - hint), c))


# -----------------------------
# Peak picking
# -----------------------------
def _picking_data(values: np.ndarray, mode: str) -> np.ndarray:
    if mode not in MODES:
        raise ValueError(f"Invalid mode '{mode}' (expected magnitude or real)")
    return np.abs(values) if mode == "magnitude" else np.real(values)


def _parabolic(a: float, b: float, c: float) -> tuple[float, float]:
    """Vertex offset (bins) and height of the parabola through three samples."""
    denom = a - 2.0 * b + c
    if denom >= 0:
        return 0.0, b
    p = 0.5 * (a - c) / denom
    return p, b - 0.25 * (a - c) * p


def _check_threshold(threshold_rel: float) -> None:
    if not 0.0 < threshold_rel < 1.0:
        raise ValueError("threshold_rel must lie in (0, 1)")


def _pick_1d(spec: Spectrum1D, threshold_rel: float, min_separation: float, mode: str) -> PeakTable:
    positive = spec.frequencies > 0
    freqs = spec.frequencies[positive]
    data = _picking_data(spec.values[positive], mode)
    top = data.max(initial=0.0)
    if top <= 0:
        return PeakTable((), (spec.resolution,), mode)
    idx, _ = signal.find_peaks(data, height=threshold_rel * top, distance=max(1, math.ceil(min_separation)))
    widths = signal.peak_widths(data, idx, rel_height=0.5)[0] if idx.size else np.array([])
    peaks = []
    for i, w in zip(idx, widths):
        p, amp = _parabolic(data[i - 1], data[i], data[i + 1])
        peaks.append(Peak((float(freqs[i] + p * spec.resolution),), float(amp), (float(w * spec.resolution),)))
    peaks.sort(key=lambda pk: (-pk.amplitude, pk.frequency))
    return PeakTable(tuple(peaks), (spec.resolution,), mode)


def _drops_below(side: np.ndarray, height: float) -> bool:
    """True if ``side`` dips below ``height`` before rising above it."""
    higher = np.flatnonzero(side > height)
    stop = int(higher[0]) if higher.size else side.size
    return stop > 0 and float(side[:stop].min()) < height


def _fwhm(line: np.ndarray, i: int) -> float:
    # a 2D maximum can sit on a shoulder or an end of its row or column; no width there
    peak = float(line[i])
    if peak <= 0 or not (_drops_below(line[:i][::-1], peak) and _drops_below(line[i + 1 :], peak)):
        return 0.0
    return float(signal.peak_widths(line, [i], rel_height=0.5)[0][0])


def multiplet_centers(positions: Sequence[float], width: float) -> list[float]:
    """Cluster positions so no cluster is wider than ``width``; one center each, ascending.

    Complete linkage merges the closest components first, so neighbouring
    multiplets are not chained together. The center is the midpoint of the
    cluster's ends: a symmetric multiplet maps to its unsplit line even when
    the middle component is missing.
    """
    x = np.sort(np.asarray(positions, dtype=float))
    if x.size < 2:
        return x.tolist()
    labels = hierarchy.fcluster(hierarchy.linkage(x[:, None], method="complete"), t=width, criterion="distance")
    return sorted(float(0.5 * (x[labels == k].min() + x[labels == k].max())) for k in np.unique(labels))


def _classify(peaks: list[tuple[float, float, float, float, float]], tol: float, multiplet: float = 0.0) -> list[str]:
    reach = tol + multiplet
    diagonal = multiplet_centers([(f1 + f2) / 2 for f1, f2, *_ in peaks if abs(f1 - f2) <= reach], reach)
    half = tol + multiplet / 2
    kinds = []
    for f1, f2, *_ in peaks:
        if abs(f1 - f2) <= reach:
            kinds.append("diagonal")
            continue
        rows = [k for k, d in enumerate(diagonal) if abs(f1 - d) <= half]
        cols = [k for k, d in enumerate(diagonal) if abs(f2 - d) <= half]
        linked = any(a != b for a in rows for b in cols)
        kinds.append("cross" if linked else "other")
    return kinds


def diagonal_lines(table: PeakTable, multiplet_hz: float = 0.0) -> list[float]:
    """Line positions behind the diagonal peaks of a 2D table, one per multiplet."""
    reach = CLASSIFY_TOLERANCE_BINS * max(table.resolution) + multiplet_hz
    return multiplet_centers([sum(p.frequency) / 2 for p in table.of_kind("diagonal")], reach)


def _pick_2d(spec: Spectrum2D, threshold_rel: float, min_separation: float, mode: str, multiplet_hz: float) -> PeakTable:
    rows = np.flatnonzero(spec.frequencies1 > 0)
    cols = np.flatnonzero(spec.frequencies2 > 0)
    f1, f2 = spec.frequencies1[rows], spec.frequencies2[cols]
    data = _picking_data(spec.values[np.ix_(rows, cols)], mode)
    top = data.max(initial=0.0)
    r1, r2 = spec.resolution
    if top <= 0:
        return PeakTable((), (r1, r2), mode)
    local_max = ndimage.maximum_filter(data, size=3, mode="nearest") == data
    above_mean = data > ndimage.uniform_filter(data, size=3, mode="nearest")
    candidates = np.argwhere(local_max & above_mean & (data >= threshold_rel * top))
    order = sorted(candidates.tolist(), key=lambda ij: (-data[ij[0], ij[1]], ij[0], ij[1]))
    kept: list[tuple[int, int]] = []
    for i, j in order:
        if all(math.hypot(i - a, j - b) >= min_separation for a, b in kept):
            kept.append((i, j))
    found = []
    for i, j in kept:
        p1 = _parabolic(data[i - 1, j], data[i, j], data[i + 1, j])[0] if 0 < i < data.shape[0] - 1 else 0.0
        p2 = _parabolic(data[i, j - 1], data[i, j], data[i, j + 1])[0] if 0 < j < data.shape[1] - 1 else 0.0
        found.append(
            (
                float(f1[i] + p1 * r1),
                float(f2[j] + p2 * r2),
                float(data[i, j]),
                _fwhm(data[:, j], i) * r1,
                _fwhm(data[i, :], j) * r2,
            )
        )
    kinds = _classify(found, CLASSIFY_TOLERANCE_BINS * max(r1, r2), multiplet_hz)
    peaks = [Peak((a, b), amp, (w1, w2), kind) for (a, b, amp, w1, w2), kind in zip(found, kinds)]
    peaks.sort(key=lambda pk: (-pk.amplitude, pk.frequency))
    logger.debug("picked %d 2D peaks (%d cross)", len(peaks), sum(pk.is_cross_peak for pk in peaks))
    return PeakTable(tuple(peaks), (r1, r2), mode)


def pick_peaks(
    spectrum: Union[Spectrum1D, Spectrum2D],
    threshold_rel: float = 0.1,
    min_separation: float = 2.0,
    mode: str = "magnitude",
    multiplet_hz: float = 0.0,
) -> PeakTable:
    """Local maxima above ``threshold_rel`` of the maximum, merged within ``min_separation`` bins.

    Frequencies are refined by 3-point parabolic interpolation. Only positive
    frequencies are considered. An empty table is a valid result.

    In 2D, ``multiplet_hz`` is the widest coupling pattern expected around a
    line: off-diagonal components within it still count as diagonal, and a
    cross peak must link two distinct multiplets.

    Raises:
        ValueError: If ``threshold_rel`` is outside (0, 1), ``mode`` is unknown
            or ``multiplet_hz`` is negative.
    """
    _check_threshold(threshold_rel)
    if multiplet_hz < 0:
        raise ValueError("multiplet_hz must be >= 0")
    if isinstance(spectrum, Spectrum2D):
        return _pick_2d(spectrum, threshold_rel, min_separation, mode, multiplet_hz)
    return _pick_1d(spectrum, threshold_rel, min_separation, mode)


def _index(axis: FloatArray, frequency: float) -> int:
    return int(np.argmin(np.abs(axis - frequency)))


def cross_peak_ratio(spectrum: Spectrum2D, frequencies: Sequence[float], search_bins: int = 2) -> float:
    """Largest off-diagonal magnitude among ``frequencies`` over the largest diagonal one.

    Each magnitude is the maximum within ``search_bins`` of the nominal point.
    """
    if len(frequencies) < 2:
        raise ValueError("need at least two frequencies")
    mag = spectrum.magnitude

    def local(fa: float, fb: float) -> float:
        i, j = _index(spectrum.frequencies1, fa), _index(spectrum.frequencies2, fb)
        return float(mag[max(i - search_bins, 0) : i + search_bins + 1, max(j - search_bins, 0) : j + search_bins + 1].max())

    diagonal = max(local(f, f) for f in frequencies)
    cross = max(local(fa, fb) for fa in frequencies for fb in frequencies if fa != fb)
    return cross / diagonal if diagonal > 0 else 0.0


def pick_dips(sig: TimeSignal1D, threshold_rel: float = 0.1, min_separation: float = 2.0) -> PeakTable:
    """Coherence dips of a DD spacing scan as a peak table.

    Each dip is reported at its resonance frequency ``1 / (2 tau)`` with the
    dip depth ``1 - value`` as amplitude. Resolution is the largest frequency
    step of the scan.
    """
    _check_threshold(threshold_rel)
    spacing = sig.axis
    if spacing.size < 3 or np.any(spacing <= 0):
        raise ValueError("a dip scan needs at least 3 positive spacings")
    depth = 1.0 - sig.values
    resolution = float(np.abs(np.diff(0.5 / spacing)).max())
    top = depth.max(initial=0.0)
    if top <= 0:
        return PeakTable((), (resolution,), "dip")
    idx, _ = signal.find_peaks(depth, height=threshold_rel * top, distance=max(1, math.ceil(min_separation)))
    widths = signal.peak_widths(depth, idx, rel_height=0.5)[0] if idx.size else np.array([])
    step = float(np.mean(np.diff(spacing)))
    peaks = []
    for i, w in zip(idx, widths):
        p, amp = _parabolic(depth[i - 1], depth[i], depth[i + 1])
        tau = spacing[i] + p * step
        width = 0.5 * w * step / tau**2
        peaks.append(Peak((float(0.5 / tau),), float(amp), (float(width),)))
    peaks.sort(key=lambda pk: (-pk.amplitude, pk.frequency))
    return PeakTable(tuple(peaks), (resolution,), "dip")
