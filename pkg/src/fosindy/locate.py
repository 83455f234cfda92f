"""Forcing amplitudes per (frequency, turbine) and robust outlier flagging."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ConsistencyError
from .library import ForcedCos, ForcedSin

MAD_SCALE = 1.4826


@dataclass(eq=False)
class ForcingAmplitudeTable:
    """``entries[i, j]`` is sqrt(a^2 + b^2) for candidate ``freqs[i]`` in turbine ``j``'s speed equation.

    Units are acceleration (torque / inertia).  :meth:`to_torque` rescales by
    assumed inertias, which makes the numbers model-dependent.
    """

    entries: np.ndarray
    freqs: tuple[float, ...]
    turbine_labels: tuple[str, ...]
    cos_coef: np.ndarray = None
    sin_coef: np.ndarray = None
    units: str = "acceleration"

    def to_torque(self, inertias) -> "ForcingAmplitudeTable":
        m = np.asarray(inertias, dtype=float)
        if m.shape != (len(self.turbine_labels),):
            raise ConfigError("one inertia per turbine is required")
        scale = m[None, :]
        return ForcingAmplitudeTable(
            self.entries * scale, self.freqs, self.turbine_labels,
            None if self.cos_coef is None else self.cos_coef * scale,
            None if self.sin_coef is None else self.sin_coef * scale,
            units="torque (model-dependent)",
        )


@dataclass(frozen=True)
class Detection:
    turbine_label: str
    turbine_index: int
    frequency: float
    amplitude: float
    robust_z: float


@dataclass(eq=False)
class LocalizationReport:
    detected: list[Detection]
    table: ForcingAmplitudeTable
    method: str
    thresholds: dict = field(default_factory=dict)

    @property
    def sources(self) -> set[tuple[str, float]]:
        return {(d.turbine_label, d.frequency) for d in self.detected}


def extract_amplitudes(model, turbine_labels=None) -> ForcingAmplitudeTable:
    """Read the forced-sinusoid block of the aggregated coefficients.

    Only the speed-derivative targets (the second half of the target columns)
    are used; the angle equations carry no forcing.
    """
    xi = np.asarray(model.aggregated_xi)
    n_t = xi.shape[1]
    if n_t % 2:
        raise ConsistencyError(f"expected 2r target columns, got {n_t}")
    r = n_t // 2
    labels = tuple(turbine_labels or (f"WT{j + 1}" for j in range(r)))
    index = {term: k for k, term in enumerate(model.terms)}
    freqs = tuple(model.freqs)
    cos_c = np.zeros((len(freqs), r))
    sin_c = np.zeros((len(freqs), r))
    for i, f in enumerate(freqs):
        ks, kc = index.get(ForcedSin(f)), index.get(ForcedCos(f))
        if ks is None or kc is None:
            raise ConsistencyError(f"library lacks the sin/cos pair for {f} Hz")
        sin_c[i] = xi[ks, r:]
        cos_c[i] = xi[kc, r:]
    return ForcingAmplitudeTable(np.hypot(cos_c, sin_c), freqs, labels, cos_c, sin_c)


def robust_z(values: np.ndarray) -> np.ndarray:
    """Median/MAD z-scores; with zero MAD, entries above the median score +inf."""
    v = np.asarray(values, dtype=float)
    med = np.median(v)
    mad = np.median(np.abs(v - med))
    if mad > 0:
        return (v - med) / (MAD_SCALE * mad)
    z = np.zeros_like(v)
    z[v > med] = np.inf
    z[v < med] = -np.inf
    return z


def flag_sources(table: ForcingAmplitudeTable, z_cutoff=3.0, floor=None, floor_fraction=0.05) -> LocalizationReport:
    """Flag (frequency, turbine) entries that are robust outliers.

    An entry is flagged when its robust z-score is at least ``z_cutoff`` and
    its amplitude at least ``floor`` (default ``floor_fraction`` of the table
    maximum).  When the MAD is zero every entry above the median is an
    infinite outlier, so only the floor decides.
    """
    a = np.asarray(table.entries, dtype=float)
    if a.size == 0:
        raise ConfigError("amplitude table is empty")
    if not z_cutoff > 0:
        raise ConfigError(f"z_cutoff must be > 0, got {z_cutoff}")
    if floor is None:
        floor = floor_fraction * float(a.max())
    if not floor >= 0:
        raise ConfigError(f"floor must be >= 0, got {floor}")
    z = robust_z(a.ravel()).reshape(a.shape)
    hits = np.argwhere((z >= z_cutoff) & (a >= floor) & (a > 0))
    detected = [
        Detection(table.turbine_labels[j], int(j), float(table.freqs[i]), float(a[i, j]), float(z[i, j]))
        for i, j in hits
    ]
    detected.sort(key=lambda d: (-d.amplitude, d.frequency, d.turbine_index))
    med = float(np.median(a))
    mad = float(np.median(np.abs(a - med)))
    thresholds = {"z_cutoff": float(z_cutoff), "floor": float(floor), "median": med, "mad": mad}
    method = "robust z-score (median/MAD, 1.4826) over all frequency x turbine amplitudes"
    if mad == 0:
        method += "; zero-MAD fallback"
    return LocalizationReport(detected, table, method, thresholds)
