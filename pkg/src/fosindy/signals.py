"""Derivative estimation, amplitude spectra and candidate-frequency detection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import get_window

from .dynamics import Trajectory
from .errors import ConfigError, InsufficientDataError

DEFAULT_BAND = (0.388, 0.775)


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    X: np.ndarray
    Xdot: np.ndarray
    dt: float
    t0: float

    def __post_init__(self):
        if self.X.shape != self.Xdot.shape:
            raise ConfigError(f"X {self.X.shape} and Xdot {self.Xdot.shape} differ in shape")
        if not self.dt > 0:
            raise ConfigError("dt must be > 0")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.Xdot))):
            raise ConfigError("measurement matrices contain non-finite values")

    @property
    def m(self) -> int:
        return self.X.shape[0]

    @property
    def r(self) -> int:
        return self.X.shape[1] // 2

    @property
    def t(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.m)


@dataclass(frozen=True, eq=False)
class Spectrum:
    freqs: np.ndarray
    amps: np.ndarray
    channel_label: str = ""

    @property
    def df(self) -> float:
        return float(self.freqs[1] - self.freqs[0])


@dataclass(frozen=True)
class CandidateFrequencies:
    freqs: tuple[float, ...] = ()
    provenance: tuple[frozenset, ...] = ()

    def __post_init__(self):
        if len(self.freqs) != len(self.provenance):
            raise ConfigError("one provenance set is required per frequency")
        if any(b <= a for a, b in zip(self.freqs, self.freqs[1:])):
            raise ConfigError("candidate frequencies must be strictly increasing")

    def __len__(self):
        return len(self.freqs)

    def __iter__(self):
        return iter(self.freqs)


def finite_difference(traj: Trajectory) -> MeasurementSet:
    """Second-order finite differences: central inside, three-point one-sided at the ends."""
    if traj.m < 3:
        raise InsufficientDataError(f"finite differences need at least 3 samples, got {traj.m}")
    xdot = np.gradient(traj.states, traj.dt, axis=0, edge_order=2)
    return MeasurementSet(traj.states.copy(), xdot, traj.dt, traj.t0)


def _windowed(x: np.ndarray) -> np.ndarray:
    return (x - x.mean()) * get_window("hann", x.size)


def _spectrum_from_signal(x: np.ndarray, dt: float, label: str = "") -> Spectrum:
    m = x.size
    w = get_window("hann", m)
    coeffs = np.fft.rfft(_windowed(x))
    amps = np.abs(coeffs) * (2.0 / w.sum())
    amps[0] /= 2.0
    if m % 2 == 0:
        amps[-1] /= 2.0
    return Spectrum(np.fft.rfftfreq(m, dt), amps, label)


def parseval_residual(x: np.ndarray) -> float:
    """Relative mismatch between windowed-signal energy and its one-sided DFT energy."""
    xw = _windowed(np.asarray(x, dtype=float))
    c = np.abs(np.fft.rfft(xw)) ** 2
    m = xw.size
    tail = c[-1] if m % 2 == 0 else 0.0
    spec_energy = (c[0] + 2.0 * c[1:].sum() - tail) / m
    time_energy = float(np.dot(xw, xw))
    if time_energy == 0.0:
        return abs(spec_energy)
    return abs(spec_energy - time_energy) / time_energy


def amplitude_spectrum(traj: Trajectory, channel: int) -> Spectrum:
    """Hann-windowed one-sided amplitude spectrum of one state column.

    Scaled by the window's coherent gain, so a sinusoid of amplitude ``A``
    falling on a bin reads ``A``.
    """
    if not 0 <= channel < traj.states.shape[1]:
        raise ConfigError(f"channel {channel} out of range for {traj.states.shape[1]} columns")
    if traj.m < 16:
        raise InsufficientDataError(f"spectrum needs at least 16 samples, got {traj.m}")
    return _spectrum_from_signal(traj.states[:, channel], traj.dt, traj.column_names()[channel])


def _band_bins(freqs, band):
    lo, hi = band
    if not (0 < lo < hi):
        raise ConfigError(f"band must satisfy 0 < lo < hi, got {band}")
    if hi > freqs[-1] + 1e-12:
        raise ConfigError(f"band upper edge {hi} Hz exceeds Nyquist {freqs[-1]} Hz")
    idx = np.flatnonzero((freqs >= lo) & (freqs <= hi))
    if idx.size == 0:
        raise ConfigError(f"band {band} contains no spectral bins")
    return idx[0], idx[-1]


def _smoothed_zscore(y: np.ndarray, lag: int, threshold: float, influence: float) -> np.ndarray:
    """Positive-side smoothed z-score signal; the first ``lag`` samples only seed the window."""
    flags = np.zeros(y.size, dtype=bool)
    if y.size <= lag:
        return flags
    filtered = y.astype(float).copy()
    win = filtered[:lag]
    avg, std = win.mean(), win.std()
    for i in range(lag, y.size):
        scale = max(abs(avg), np.abs(win).max(initial=0.0))
        if std > 1e-12 * scale and y[i] - avg > threshold * std:
            flags[i] = True
            filtered[i] = influence * y[i] + (1.0 - influence) * filtered[i - 1]
        win = filtered[i - lag + 1 : i + 1]
        avg, std = win.mean(), win.std()
    return flags


def zscore_peak_bins(spec: Spectrum, lag=30, threshold=3.5, influence=0.1, band=DEFAULT_BAND) -> list[int]:
    """Bin indices of z-score peaks inside ``band``.

    The detector is run from ``lag`` bins below the band so its trailing
    window is already populated when the band starts; DC is never used.
    """
    if lag < 3:
        raise ConfigError(f"lag must be >= 3, got {lag}")
    if not threshold > 0:
        raise ConfigError(f"threshold must be > 0, got {threshold}")
    if not 0 <= influence <= 1:
        raise ConfigError(f"influence must lie in [0, 1], got {influence}")
    lo_bin, hi_bin = _band_bins(spec.freqs, band)
    start = max(1, lo_bin - lag)
    seg = spec.amps[start : hi_bin + 1]
    flags = _smoothed_zscore(seg, lag, threshold, influence)
    peaks = []
    i = 0
    while i < flags.size:
        if not flags[i]:
            i += 1
            continue
        j = i
        while j + 1 < flags.size and flags[j + 1]:
            j += 1
        k = start + i + int(np.argmax(seg[i : j + 1]))
        if lo_bin <= k <= hi_bin:
            peaks.append(k)
        i = j + 1
    return peaks


def zscore_peaks(spec: Spectrum, lag=30, threshold=3.5, influence=0.1, band=DEFAULT_BAND) -> list[float]:
    """Peak frequencies in ``band``, rounded to 0.01 Hz."""
    out = []
    for k in zscore_peak_bins(spec, lag, threshold, influence, band):
        f = round(float(spec.freqs[k]), 2)
        if band[0] <= f <= band[1] and f not in out:
            out.append(f)
    return out


_EPS = 1e-9


def dedup_frequencies(peak_lists, tol: float = 0.015) -> CandidateFrequencies:
    """Merge per-channel peak lists into one candidate set.

    ``peak_lists`` items are ``(channel, freqs)`` or ``(channel, freqs, amps)``.
    Peaks are clustered greedily in ascending order (a cluster spans at most
    ``tol``); each cluster is represented by its amplitude-weighted mean
    frequency rounded to 0.01 Hz.  Adjacent representatives closer than
    ``tol`` are merged again until none are, which makes the operation
    idempotent.
    """
    if not tol > 0:
        raise ConfigError(f"tol must be > 0, got {tol}")
    items = []
    for entry in peak_lists:
        channel, freqs = entry[0], list(entry[1])
        amps = list(entry[2]) if len(entry) > 2 else [1.0] * len(freqs)
        if len(amps) != len(freqs):
            raise ConfigError(f"channel {channel}: {len(freqs)} peaks but {len(amps)} amplitudes")
        items.extend((float(f), max(float(a), 0.0), channel) for f, a in zip(freqs, amps))
    if not items:
        return CandidateFrequencies()
    items.sort(key=lambda it: it[0])

    clusters = []
    for f, a, ch in items:
        if clusters and f - clusters[-1][0][0] <= tol + _EPS:
            clusters[-1].append((f, a, ch))
        else:
            clusters.append([(f, a, ch)])

    def summarize(members):
        w = np.array([a for _, a, _ in members])
        f = np.array([f for f, _, _ in members])
        rep = float(np.average(f, weights=w)) if w.sum() > 0 else float(f.mean())
        return round(rep, 2), members

    reps = [summarize(c) for c in clusters]
    merged = True
    while merged and len(reps) > 1:
        merged = False
        for i in range(len(reps) - 1):
            if reps[i + 1][0] - reps[i][0] <= tol + _EPS:
                reps[i] = summarize(reps[i][1] + reps[i + 1][1])
                del reps[i + 1]
                merged = True
                break
    freqs = tuple(f for f, _ in reps)
    prov = tuple(frozenset(ch for _, _, ch in members) for _, members in reps)
    return CandidateFrequencies(freqs, prov)
