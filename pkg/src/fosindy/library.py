"""Candidate-function library: constant, state monomials and forced sinusoids."""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ConfigError, DegenerateLibraryError
from .signals import CandidateFrequencies, MeasurementSet


@dataclass(frozen=True)
class Constant:
    def name(self, state_names) -> str:
        return "1"

    def evaluate(self, X, t):
        return np.ones(np.shape(t))


@dataclass(frozen=True)
class Monomial:
    """Product of states; ``powers`` is a sorted tuple of ``(state_index, exponent)``."""

    powers: tuple[tuple[int, int], ...]

    @property
    def degree(self) -> int:
        return sum(e for _, e in self.powers)

    def name(self, state_names) -> str:
        return "*".join(state_names[i] if e == 1 else f"{state_names[i]}^{e}" for i, e in self.powers)

    def evaluate(self, X, t):
        X = np.asarray(X, dtype=float)
        out = np.ones(X.shape[:-1])
        for i, e in self.powers:
            out = out * X[..., i] ** e
        return out


@dataclass(frozen=True)
class ForcedSin:
    freq: float

    def name(self, state_names) -> str:
        return f"sin({self.freq:g}Hz)"

    def evaluate(self, X, t):
        return np.sin(2 * math.pi * self.freq * np.asarray(t, dtype=float))


@dataclass(frozen=True)
class ForcedCos:
    freq: float

    def name(self, state_names) -> str:
        return f"cos({self.freq:g}Hz)"

    def evaluate(self, X, t):
        return np.cos(2 * math.pi * self.freq * np.asarray(t, dtype=float))


Term = Union[Constant, Monomial, ForcedSin, ForcedCos]


def state_names(r: int) -> list[str]:
    return [f"delta_{i + 1}" for i in range(r)] + [f"omega_{i + 1}" for i in range(r)]


def monomial_terms(n_states: int, degree: int) -> list[Monomial]:
    """All monomials of total degree 1..degree, graded, lexicographic within a degree."""
    out = []
    for d in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(range(n_states), d):
            counts: dict[int, int] = {}
            for i in combo:
                counts[i] = counts.get(i, 0) + 1
            out.append(Monomial(tuple(sorted(counts.items()))))
    return out


@dataclass(frozen=True, eq=False)
class FeatureLibrary:
    theta: np.ndarray
    terms: tuple
    freqs: CandidateFrequencies
    state_names: tuple[str, ...] = ()
    degree: int = 1

    @property
    def p(self) -> int:
        return self.theta.shape[1]

    @property
    def names(self) -> list[str]:
        return [term.name(self.state_names) for term in self.terms]

    def column_index(self, term) -> int | None:
        return column_index(self, term)


def build_library(ms: MeasurementSet, cands: CandidateFrequencies, degree: int = 1) -> FeatureLibrary:
    """Evaluate the candidate functions along the measurement rows.

    Column order: constant, monomials up to ``degree`` over the 2r states,
    then ``sin``/``cos`` at each candidate frequency (ascending).  The
    sinusoids use the measurement clock ``t0 + k*dt``, so their phase is
    tied to the global simulation time rather than to the window start.
    """
    if int(degree) != degree or degree < 0:
        raise ConfigError(f"degree must be a nonnegative integer, got {degree}")
    freqs = sorted(cands.freqs)
    if degree == 0 and not freqs:
        raise DegenerateLibraryError("degree 0 with no candidate frequencies leaves only the constant column")
    n_states = ms.X.shape[1]
    terms: list = [Constant()]
    terms.extend(monomial_terms(n_states, degree))
    for f in freqs:
        terms.extend((ForcedSin(f), ForcedCos(f)))

    t = ms.t
    theta = np.empty((ms.m, len(terms)))
    for k, term in enumerate(terms):
        theta[:, k] = term.evaluate(ms.X, t)
    if not np.all(np.isfinite(theta)):
        raise ConfigError("library evaluation produced non-finite values")
    if ms.m < len(terms):
        warnings.warn(f"library has {len(terms)} columns but only {ms.m} rows", RuntimeWarning, stacklevel=2)
    return FeatureLibrary(theta, tuple(terms), cands, tuple(state_names(n_states // 2)), int(degree))


def column_index(lib: FeatureLibrary, term) -> int | None:
    """Column of ``term`` in ``lib``, or ``None`` when absent."""
    for k, existing in enumerate(lib.terms):
        if existing == term:
            return k
    return None
