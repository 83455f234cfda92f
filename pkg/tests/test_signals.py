import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fosindy.dynamics import Trajectory
from fosindy.errors import ConfigError, InsufficientDataError
from fosindy.signals import (
    CandidateFrequencies,
    Spectrum,
    amplitude_spectrum,
    dedup_frequencies,
    finite_difference,
    parseval_residual,
    zscore_peak_bins,
    zscore_peaks,
)


def traj_of(x, dt, t0=0.0):
    x = np.asarray(x, dtype=float)
    return Trajectory(dt, t0, x.reshape(x.shape[0], -1))


def tone(freq, amp, duration, dt=0.01, phase=0.0):
    t = np.arange(int(round(duration / dt))) * dt
    return t, amp * np.sin(2 * np.pi * freq * t + phase)


# ---------------------------------------------------------------- finite differences

def test_fd_constant_is_zero():
    ms = finite_difference(traj_of(np.full((50, 2), 3.7), 0.01))
    assert np.all(ms.Xdot == 0)
    assert np.array_equal(ms.X, np.full((50, 2), 3.7))


def test_fd_exact_for_quadratics():
    dt = 0.1
    t = np.arange(40) * dt
    ms = finite_difference(traj_of(np.column_stack([t**2, t**2]), dt))
    # interior central differences are exact for quadratics; so are the one-sided 3-point ends
    assert np.allclose(ms.Xdot[:, 0], 2 * t, rtol=0, atol=1e-12)


def test_fd_taylor_bound():
    dt = 0.01
    w = 2 * np.pi * 0.71
    t, x = tone(0.71, 1.0, 20.0, dt)
    ms = finite_difference(traj_of(np.column_stack([x, x]), dt))
    err = np.abs(ms.Xdot[1:-1, 0] - w * np.cos(w * t[1:-1])).max()
    # leading-order central-difference error is (dt^2 / 6) max|x'''|
    assert err <= dt**2 / 6 * w**3 * 1.001


def test_fd_second_order_convergence():
    def max_err(dt):
        t = np.arange(int(round(10 / dt)) + 1) * dt
        x = np.sin(2.3 * t) + 0.4 * np.cos(5.1 * t)
        exact = 2.3 * np.cos(2.3 * t) - 0.4 * 5.1 * np.sin(5.1 * t)
        ms = finite_difference(traj_of(np.column_stack([x, x]), dt))
        return np.abs(ms.Xdot[:, 0] - exact).max()

    ratio = max_err(0.02) / max_err(0.01)
    assert 3.5 <= ratio <= 4.5


def test_fd_needs_three_samples():
    with pytest.raises(InsufficientDataError):
        finite_difference(traj_of(np.zeros((2, 2)), 0.1))


# ---------------------------------------------------------------- spectrum

def test_spectrum_of_zero_signal():
    spec = amplitude_spectrum(traj_of(np.zeros((100, 2)), 0.01), 1)
    assert np.all(spec.amps == 0)
    assert spec.freqs[0] == 0 and np.all(np.diff(spec.freqs) > 0)


def test_spectrum_tone_amplitude_and_bin():
    t, x = tone(0.71, 0.37, 80.0)
    spec = amplitude_spectrum(traj_of(np.column_stack([x, x]), 0.01), 0)
    k = int(np.argmax(spec.amps))
    assert spec.df == pytest.approx(1 / 80.0)
    assert abs(spec.freqs[k] - 0.71) <= spec.df
    assert spec.amps[k] == pytest.approx(0.37, rel=0.05)


def test_spectrum_preconditions():
    with pytest.raises(ConfigError):
        amplitude_spectrum(traj_of(np.zeros((100, 2)), 0.01), 2)
    with pytest.raises(InsufficientDataError):
        amplitude_spectrum(traj_of(np.zeros((10, 2)), 0.01), 0)


@pytest.mark.parametrize("m", [1000, 1001])
def test_parseval(m):
    x = np.random.default_rng(0).normal(size=m) + np.sin(np.arange(m) * 0.3)
    assert parseval_residual(x) < 1e-9


def test_spectrum_is_scale_covariant():
    t, x = tone(0.53, 1.0, 100.0)
    a = amplitude_spectrum(traj_of(np.column_stack([x, x]), 0.01), 0)
    b = amplitude_spectrum(traj_of(np.column_stack([3 * x, x]), 0.01), 0)
    assert np.allclose(b.amps, 3 * a.amps, rtol=1e-12, atol=1e-15)


# ---------------------------------------------------------------- z-score peaks

def noisy_tone_spectrum(freq=0.71, seed=0, floor_db=-40.0):
    rng = np.random.default_rng(seed)
    t, x = tone(freq, 1.0, 100.0)
    x = x + 10 ** (floor_db / 20) * rng.normal(size=x.size)
    return amplitude_spectrum(traj_of(np.column_stack([x, x]), 0.01), 0)


def test_flat_spectrum_has_no_peaks():
    freqs = np.arange(0, 50.01, 0.01)
    assert zscore_peaks(Spectrum(freqs, np.ones_like(freqs), "flat")) == []


def test_single_tone_over_floor():
    # a Rayleigh-distributed floor gives the 3.5-sigma detector occasional false alarms
    found = [zscore_peaks(noisy_tone_spectrum(seed=s)) for s in range(100)]
    assert all(0.71 in p for p in found)
    assert sum(p == [0.71] for p in found) >= 75


def test_peaks_stay_in_band():
    spec = noisy_tone_spectrum(0.9)
    inside = zscore_peaks(spec)
    assert 0.9 not in inside and all(0.388 <= f <= 0.775 for f in inside)
    assert 0.9 in zscore_peaks(spec, band=(0.388, 1.0))


@settings(max_examples=30, deadline=None)
@given(exponent=st.integers(-30, 30), seed=st.integers(0, 50))
def test_peaks_invariant_to_power_of_two_scaling(exponent, seed):
    spec = noisy_tone_spectrum(0.61, seed, floor_db=-30.0)
    scaled = Spectrum(spec.freqs, spec.amps * 2.0**exponent, spec.channel_label)
    assert zscore_peak_bins(scaled) == zscore_peak_bins(spec)


@pytest.mark.parametrize("c", [1e-6, 0.37, 3.0, 1234.5])
def test_peaks_invariant_to_scaling(c):
    spec = noisy_tone_spectrum(0.53, 3, floor_db=-30.0)
    assert zscore_peaks(Spectrum(spec.freqs, spec.amps * c, "")) == zscore_peaks(spec)


def test_peak_parameter_validation():
    spec = noisy_tone_spectrum()
    with pytest.raises(ConfigError):
        zscore_peaks(spec, lag=2)
    with pytest.raises(ConfigError):
        zscore_peaks(spec, threshold=0)
    with pytest.raises(ConfigError):
        zscore_peaks(spec, influence=1.5)
    with pytest.raises(ConfigError):
        zscore_peaks(spec, band=(0.701, 0.705))  # between bins at df = 0.01
    with pytest.raises(ConfigError):
        zscore_peaks(spec, band=(10.0, 80.0))  # beyond Nyquist


# ---------------------------------------------------------------- dedup

def test_dedup_identity():
    c = dedup_frequencies([("omega_1", [0.71])])
    assert c.freqs == (0.71,) and c.provenance == (frozenset({"omega_1"}),)


def test_dedup_hand_trace():
    assert dedup_frequencies([("a", [0.71, 0.712, 0.53])], tol=0.02).freqs == (0.53, 0.71)


def test_dedup_three_channels():
    c = dedup_frequencies([("omega_1", [0.71], [1.0]), ("omega_2", [0.71], [0.1]), ("omega_3", [0.72], [0.05])])
    assert c.freqs == (0.71,)
    assert c.provenance == (frozenset({"omega_1", "omega_2", "omega_3"}),)


def test_dedup_amplitude_weighting():
    c = dedup_frequencies([("a", [0.70], [1.0]), ("b", [0.71], [9.0])], tol=0.015)
    assert c.freqs == (0.71,)


def test_dedup_empty_and_validation():
    assert len(dedup_frequencies([])) == 0
    with pytest.raises(ConfigError):
        dedup_frequencies([("a", [0.7])], tol=0)
    with pytest.raises(ConfigError):
        CandidateFrequencies((0.7, 0.6), (frozenset(), frozenset()))


peak_list = st.lists(st.floats(0.39, 0.77).map(lambda f: round(f, 3)), max_size=12)


@settings(max_examples=200, deadline=None)
@given(lists=st.lists(peak_list, min_size=1, max_size=4), tol=st.sampled_from([0.005, 0.015, 0.02, 0.05]))
def test_dedup_idempotent(lists, tol):
    once = dedup_frequencies([(f"ch{i}", fs) for i, fs in enumerate(lists)], tol)
    twice = dedup_frequencies([("merged", list(once.freqs))], tol)
    assert twice.freqs == once.freqs
    assert all(b - a > tol for a, b in zip(once.freqs, once.freqs[1:]))


def test_case1_spectra_and_candidates(noise_free_case1):
    window, _ = noise_free_case1
    peak_lists = []
    for j in range(3):
        spec = amplitude_spectrum(window, 3 + j)
        near = (spec.freqs > 0.69) & (spec.freqs < 0.73)
        band = (spec.freqs > 0.388) & (spec.freqs < 0.775)
        assert spec.amps[near].max() == spec.amps[band].max()
        peak_lists.append((spec.channel_label, zscore_peaks(spec)))
    cands = dedup_frequencies(peak_lists)
    assert 0.71 in cands.freqs
    assert all(0.388 <= f <= 0.775 for f in cands.freqs)
    assert math.isclose(len(cands.provenance[cands.freqs.index(0.71)]), 3)
