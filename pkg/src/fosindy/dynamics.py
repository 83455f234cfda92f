"""Small-signal rotor dynamics of a coupled wind farm with forced torque.

Each turbine obeys the linearized swing equation in deviation variables::

    d(delta_i)/dt = omega_i
    M_i d(omega_i)/dt = dTm_i - K_i delta_i - D_i omega_i
                        - sum_j C_ij (delta_i - delta_j) + Tf_i(t) - TL_i(t)

``Tf`` is a Fourier series of sinusoidal torques and ``TL`` a stochastic load
torque (white or Ornstein-Uhlenbeck).  The deterministic part is integrated
with fixed-step RK4; the load torque is drawn once per step and held constant
across the RK4 stages (Euler-Maruyama).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, InsufficientDataError, SimulationDiverged

LOAD_MODELS = ("white", "ou")


@dataclass(frozen=True)
class TurbineParams:
    inertia: float
    damping: float
    sync_stiffness: float
    mech_torque_offset: float = 0.0

    def __post_init__(self):
        if not self.inertia > 0:
            raise ConfigError(f"inertia must be > 0, got {self.inertia}")
        if not self.damping >= 0:
            raise ConfigError(f"damping must be >= 0, got {self.damping}")
        if not self.sync_stiffness >= 0:
            raise ConfigError(f"sync_stiffness must be >= 0, got {self.sync_stiffness}")
        if not math.isfinite(self.mech_torque_offset):
            raise ConfigError("mech_torque_offset must be finite")

    @property
    def natural_frequency(self) -> float:
        """Undamped, uncoupled natural frequency in Hz."""
        return math.sqrt(self.sync_stiffness / self.inertia) / (2 * math.pi)

    @classmethod
    def from_natural_frequency(cls, freq_hz, inertia=1.0, damping_ratio=0.1, mech_torque_offset=0.0):
        wn = 2 * math.pi * freq_hz
        k = inertia * wn**2
        return cls(inertia, 2 * damping_ratio * math.sqrt(k * inertia), k, mech_torque_offset)


def default_coupling(turbines: Sequence[TurbineParams], factor: float = 0.1) -> np.ndarray:
    """Weak feeder coupling ``C_ij = factor * min(K_i, K_j)`` with zero diagonal."""
    k = np.array([t.sync_stiffness for t in turbines], dtype=float)
    c = factor * np.minimum.outer(k, k)
    np.fill_diagonal(c, 0.0)
    return c


@dataclass(frozen=True, eq=False)
class FarmModel:
    """Turbines plus the symmetric inter-turbine coupling matrix.

    ``sync_speed`` (rad/s) is carried for reporting only; the simulation runs
    in deviation variables where it cancels.
    """

    turbines: tuple[TurbineParams, ...]
    coupling: np.ndarray = None
    sync_speed: float = 2 * math.pi * 50.0

    def __post_init__(self):
        turbines = tuple(self.turbines)
        if len(turbines) < 1:
            raise ConfigError("a farm needs at least one turbine")
        object.__setattr__(self, "turbines", turbines)
        r = len(turbines)
        c = default_coupling(turbines) if self.coupling is None else np.array(self.coupling, dtype=float)
        if c.shape != (r, r):
            raise ConfigError(f"coupling must be {r}x{r}, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ConfigError("coupling entries must be finite")
        if not np.array_equal(c, c.T):
            raise ConfigError("coupling matrix must be symmetric")
        if np.any(np.diag(c) != 0):
            raise ConfigError("coupling matrix must have a zero diagonal")
        if np.any(c < 0):
            raise ConfigError("coupling entries must be nonnegative")
        c.setflags(write=False)
        object.__setattr__(self, "coupling", c)

    @property
    def r(self) -> int:
        return len(self.turbines)

    @classmethod
    def default(cls, natural_freqs=(1.1, 1.2, 1.3), inertias=None, damping_ratio=0.1, coupling_factor=0.1):
        """Three-turbine farm with natural frequencies above the 0.388-0.775 Hz band."""
        inertias = inertias or (1.0,) * len(natural_freqs)
        turbines = tuple(
            TurbineParams.from_natural_frequency(f, m, damping_ratio)
            for f, m in zip(natural_freqs, inertias)
        )
        return cls(turbines, default_coupling(turbines, coupling_factor))

    def state_matrix(self) -> np.ndarray:
        """Continuous-time system matrix for the state [delta_1..r, omega_1..r]."""
        r = self.r
        m = np.array([t.inertia for t in self.turbines])
        k = np.array([t.sync_stiffness for t in self.turbines])
        d = np.array([t.damping for t in self.turbines])
        lap = np.diag(self.coupling.sum(axis=1)) - self.coupling
        a = np.zeros((2 * r, 2 * r))
        a[:r, r:] = np.eye(r)
        a[r:, :r] = -(np.diag(k) + lap) / m[:, None]
        a[r:, r:] = -np.diag(d / m)
        return a

    def modal_frequencies(self) -> np.ndarray:
        """Damped oscillation frequencies (Hz) of the coupled system, ascending."""
        ev = np.linalg.eigvals(self.state_matrix())
        f = np.abs(ev.imag[ev.imag > 0]) / (2 * np.pi)
        return np.sort(f)


@dataclass(frozen=True)
class ForcingSpec:
    """Fourier-series forced torque on one turbine.

    ``components`` holds ``(freq_hz, cos_amp, sin_amp)`` triples; the torque is
    ``dc/2 + sum(a cos(2 pi f t) + b sin(2 pi f t))``.
    """

    turbine_index: int
    components: tuple[tuple[float, float, float], ...] = ()
    dc: float = 0.0

    def __post_init__(self):
        comps = tuple((float(f), float(a), float(b)) for f, a, b in self.components)
        object.__setattr__(self, "components", comps)
        if not isinstance(self.turbine_index, (int, np.integer)) or self.turbine_index < 0:
            raise ConfigError(f"turbine_index must be a nonnegative integer, got {self.turbine_index!r}")
        for f, a, b in comps:
            if not (math.isfinite(f) and f > 0):
                raise ConfigError(f"forcing frequency must be positive and finite, got {f}")
            if not (math.isfinite(a) and math.isfinite(b)):
                raise ConfigError("forcing amplitudes must be finite")
        if not math.isfinite(self.dc):
            raise ConfigError("forcing dc term must be finite")

    @classmethod
    def sinusoid(cls, turbine_index, freq_hz, amplitude, phase=0.0):
        """``amplitude * sin(2 pi f t + phase)`` expressed as a cos/sin pair."""
        return cls(turbine_index, ((freq_hz, amplitude * math.sin(phase), amplitude * math.cos(phase)),))

    def torque(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.full(t.shape, self.dc / 2.0)
        for f, a, b in self.components:
            w = 2 * math.pi * f
            out += a * np.cos(w * t) + b * np.sin(w * t)
        return out

    def scaled(self, c: float) -> "ForcingSpec":
        return ForcingSpec(self.turbine_index, tuple((f, c * a, c * b) for f, a, b in self.components), c * self.dc)


@dataclass(frozen=True)
class NoiseSpec:
    load_sigma: float = 0.0
    load_model: str = "white"
    theta: float = 1.0
    meas_sigma_delta: float = 0.0
    meas_sigma_omega: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("load_sigma", "meas_sigma_delta", "meas_sigma_omega"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be finite and >= 0, got {v}")
        if self.load_model not in LOAD_MODELS:
            raise ConfigError(f"load_model must be one of {LOAD_MODELS}, got {self.load_model!r}")
        if self.load_model == "ou" and not self.theta > 0:
            raise ConfigError("theta must be > 0 for the Ornstein-Uhlenbeck load model")
        if int(self.rng_seed) != self.rng_seed or self.rng_seed < 0:
            raise ConfigError("rng_seed must be a nonnegative integer")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Uniformly sampled states, columns ``[delta_1..delta_r, omega_1..omega_r]``."""

    dt: float
    t0: float
    states: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.states, dtype=float)
        if s.ndim != 2 or s.shape[1] % 2 or s.shape[1] == 0:
            raise ConfigError(f"states must be m x 2r, got shape {s.shape}")
        if s.shape[0] < 2:
            raise InsufficientDataError("a trajectory needs at least 2 samples")
        if not self.dt > 0:
            raise ConfigError(f"dt must be > 0, got {self.dt}")
        object.__setattr__(self, "states", s)

    @property
    def m(self) -> int:
        return self.states.shape[0]

    @property
    def r(self) -> int:
        return self.states.shape[1] // 2

    @property
    def t(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.m)

    @property
    def delta(self) -> np.ndarray:
        return self.states[:, : self.r]

    @property
    def omega(self) -> np.ndarray:
        return self.states[:, self.r :]

    @property
    def duration(self) -> float:
        return self.dt * (self.m - 1)

    def column_names(self) -> list[str]:
        r = self.r
        return [f"delta_{i + 1}" for i in range(r)] + [f"omega_{i + 1}" for i in range(r)]


def _load_torque(noise: NoiseSpec, r: int, n_steps: int, dt: float, rng) -> np.ndarray:
    if noise.load_sigma == 0:
        return np.zeros((n_steps, r))
    xi = rng.standard_normal((n_steps, r))
    if noise.load_model == "white":
        # piecewise-constant white torque: integrated impulse per step has std sigma*sqrt(dt)
        return noise.load_sigma * xi / math.sqrt(dt)
    out = np.empty((n_steps, r))
    tl = np.zeros(r)
    decay = noise.theta * dt
    kick = noise.load_sigma * math.sqrt(2 * noise.theta * dt)
    for k in range(n_steps):
        out[k] = tl
        tl = tl - decay * tl + kick * xi[k]
    return out


def simulate(
    farm: FarmModel,
    forcings: Sequence[ForcingSpec] = (),
    noise: NoiseSpec | None = None,
    dt: float = 0.01,
    duration: float = 120.0,
    x0=None,
    t0: float = 0.0,
) -> Trajectory:
    """Integrate the forced small-signal farm model.

    Parameters
    ----------
    farm : FarmModel
    forcings : sequence of ForcingSpec
        Several specs may target the same turbine; their torques add.
    noise : NoiseSpec, optional
        Load-torque process noise and post-integration measurement noise.
    dt, duration : float
        Fixed step and total simulated time in seconds.
    x0 : array_like, optional
        Initial state of length 2r; zero by default.
    t0 : float
        Clock value of the first sample; forcing is evaluated on this clock.

    Returns
    -------
    Trajectory
        ``round(duration / dt) + 1`` samples.
    """
    noise = noise or NoiseSpec()
    if not (dt > 0 and math.isfinite(dt)):
        raise ConfigError(f"dt must be positive, got {dt}")
    if not duration >= 10 * dt:
        raise ConfigError(f"duration must be at least 10*dt, got {duration}")
    r = farm.r
    for fs in forcings:
        if fs.turbine_index >= r:
            raise ConfigError(f"forcing references turbine {fs.turbine_index} but the farm has {r}")
    n_steps = int(round(duration / dt))
    x = np.zeros(2 * r) if x0 is None else np.array(x0, dtype=float).reshape(-1)
    if x.shape != (2 * r,) or not np.all(np.isfinite(x)):
        raise ConfigError(f"x0 must be a finite vector of length {2 * r}")

    load_rng, meas_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(int(noise.rng_seed)).spawn(2))

    inv_m = 1.0 / np.array([t.inertia for t in farm.turbines])
    offset = np.array([t.mech_torque_offset for t in farm.turbines])
    t_full = t0 + dt * np.arange(n_steps + 1)
    t_half = t_full[:-1] + 0.5 * dt
    # input accelerations at step starts and midpoints
    acc_full = np.tile(offset, (n_steps + 1, 1))
    acc_half = np.tile(offset, (n_steps, 1))
    for fs in forcings:
        acc_full[:, fs.turbine_index] += fs.torque(t_full)
        acc_half[:, fs.turbine_index] += fs.torque(t_half)
    acc_full *= inv_m
    acc_half *= inv_m
    load_acc = _load_torque(noise, r, n_steps, dt, load_rng) * inv_m

    a = farm.state_matrix()
    h = dt
    states = np.empty((n_steps + 1, 2 * r))
    states[0] = x
    u = np.zeros(2 * r)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n_steps):
            u0 = acc_full[k] - load_acc[k]
            uh = acc_half[k] - load_acc[k]
            u1 = acc_full[k + 1] - load_acc[k]
            u[r:] = u0
            k1 = a @ x + u
            u[r:] = uh
            k2 = a @ (x + 0.5 * h * k1) + u
            k3 = a @ (x + 0.5 * h * k2) + u
            u[r:] = u1
            k4 = a @ (x + h * k3) + u
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            states[k + 1] = x

    finite = np.isfinite(states).all(axis=1)
    if not finite.all():
        step = int(np.argmin(finite))
        raise SimulationDiverged(step, float(t_full[step]))

    if noise.meas_sigma_delta > 0 or noise.meas_sigma_omega > 0:
        sig = np.concatenate([np.full(r, noise.meas_sigma_delta), np.full(r, noise.meas_sigma_omega)])
        states = states + meas_rng.standard_normal(states.shape) * sig
    return Trajectory(dt, t0, states)


def steady_state_window(traj: Trajectory, settle: float) -> Trajectory:
    """Drop samples earlier than ``traj.t0 + settle``.

    The returned trajectory keeps the global clock: its ``t0`` is the time of
    its first retained sample.
    """
    if settle < 0:
        raise ConfigError(f"settle must be >= 0, got {settle}")
    start = max(0, math.ceil(settle / traj.dt - 1e-9))
    if traj.m - 1 - start < 10:
        raise InsufficientDataError(
            f"settle={settle} s leaves {max(traj.m - start, 0)} samples; need a span of at least 10*dt"
        )
    if start == 0:
        return traj
    return Trajectory(traj.dt, traj.t0 + start * traj.dt, traj.states[start:].copy())
