"""Scenario configuration: JSON schema, parsing into model objects, built-in cases."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .dynamics import FarmModel, ForcingSpec, NoiseSpec, TurbineParams, default_coupling
from .ensemble import EnsembleConfig
from .errors import ConfigError

RESONANCE_MARGIN = 0.1  # relative distance between a forcing and a modal frequency

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}

SCENARIO_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "fosindy scenario",
    "type": "object",
    "additionalProperties": False,
    "required": ["farm"],
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "farm": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "natural_freqs": {"type": "array", "items": _pos, "minItems": 1},
                "inertias": {"type": "array", "items": _pos, "minItems": 1},
                "damping_ratio": _nonneg,
                "coupling_factor": _nonneg,
                "turbines": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["inertia", "damping", "sync_stiffness"],
                        "properties": {
                            "inertia": _pos,
                            "damping": _nonneg,
                            "sync_stiffness": _nonneg,
                            "mech_torque_offset": _num,
                        },
                    },
                },
                "coupling": {"type": "array", "items": {"type": "array", "items": _nonneg}},
                "sync_speed": _pos,
            },
            "oneOf": [{"required": ["natural_freqs"]}, {"required": ["turbines"]}],
        },
        "forcings": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["turbine"],
                "properties": {
                    "turbine": {"type": "integer", "minimum": 0},
                    "freq": _pos,
                    "amplitude": _num,
                    "phase": _num,
                    "components": {
                        "type": "array",
                        "items": {"type": "array", "items": _num, "minItems": 3, "maxItems": 3},
                    },
                    "dc": _num,
                },
                "oneOf": [{"required": ["freq", "amplitude"]}, {"required": ["components"]}],
            },
        },
        "noise": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "load_sigma": _nonneg,
                "load_model": {"enum": ["white", "ou"]},
                "theta": _pos,
                "meas_sigma_delta": _nonneg,
                "meas_sigma_omega": _nonneg,
                "rng_seed": {"type": "integer", "minimum": 0},
            },
        },
        "initial_state": {"type": "array", "items": _num},
        "sim": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dt": _pos, "duration": _pos, "settle": _nonneg},
        },
        "signal": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "band": {"type": "array", "items": _pos, "minItems": 2, "maxItems": 2},
                "lag": {"type": "integer", "minimum": 3},
                "threshold": _pos,
                "influence": {"type": "number", "minimum": 0, "maximum": 1},
                "dedup_tol": _pos,
                "channels": {"enum": ["omega", "delta", "both"]},
            },
        },
        "library": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"degree": {"type": "integer", "minimum": 1}, "dump": {"type": "boolean"}},
        },
        "regression": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "solver": {"enum": ["lasso", "stlsq"]},
                "lam": {"type": ["number", "null"], "minimum": 0},
                "refit": {"type": "boolean"},
                "threshold": _nonneg,
                "folds": {"type": "integer", "minimum": 2},
                "n_lambda": {"type": "integer", "minimum": 1},
                "lambda_min_ratio": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            },
        },
        "ensemble": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_models": {"type": "integer", "minimum": 1},
                "sample_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "p_min": {"type": "number", "minimum": 0, "maximum": 1},
                "aggregation": {"enum": ["median_inclusion", "best_by_cv"]},
                "bootstrap": {"type": "boolean"},
                "n_threads": {"type": ["integer", "null"], "minimum": 0},
            },
        },
        "locate": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "z_cutoff": _pos,
                "floor": {"type": ["number", "null"], "minimum": 0},
                "floor_fraction": {"type": "number", "minimum": 0, "maximum": 1},
                "report_torque": {"type": "boolean"},
            },
        },
        "allow_resonance": {"type": "boolean"},
        "seed": {"type": "integer", "minimum": 0},
    },
}


@dataclass(frozen=True)
class SimSettings:
    dt: float = 0.01
    duration: float = 120.0
    settle: float = 20.0


@dataclass(frozen=True)
class SignalSettings:
    band: tuple[float, float] = (0.388, 0.775)
    lag: int = 30
    threshold: float = 3.5
    influence: float = 0.1
    dedup_tol: float = 0.015
    channels: str = "omega"


@dataclass(frozen=True)
class LibrarySettings:
    degree: int = 1
    dump: bool = False


@dataclass(frozen=True)
class LocateSettings:
    z_cutoff: float = 3.0
    floor: float | None = None
    floor_fraction: float = 0.05
    report_torque: bool = False


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    """A fully resolved scenario.  ``source`` is the validated JSON document it came from."""

    name: str
    farm: FarmModel
    forcings: tuple[ForcingSpec, ...]
    noise: NoiseSpec
    sim: SimSettings
    signal: SignalSettings
    library: LibrarySettings
    ensemble: EnsembleConfig
    locate: LocateSettings
    seed: int
    x0: np.ndarray | None
    allow_resonance: bool
    source: dict

    def to_dict(self) -> dict:
        return copy.deepcopy(self.source)

    def with_overrides(self, seed=None, solver=None, no_forcing=False) -> "ScenarioConfig":
        d = self.to_dict()
        if seed is not None:
            d["seed"] = int(seed)
        if solver is not None:
            d.setdefault("regression", {})["solver"] = solver
        if no_forcing:
            d["forcings"] = []
        return from_dict(d)


def _farm(d: dict) -> FarmModel:
    if "turbines" in d:
        turbines = [TurbineParams(**t) for t in d["turbines"]]
        if "natural_freqs" in d or "inertias" in d or "damping_ratio" in d:
            raise ConfigError("farm: give either explicit turbines or natural_freqs, not both")
    else:
        freqs = d["natural_freqs"]
        inertias = d.get("inertias", [1.0] * len(freqs))
        if len(inertias) != len(freqs):
            raise ConfigError(f"farm: {len(freqs)} natural frequencies but {len(inertias)} inertias")
        zeta = d.get("damping_ratio", 0.03)
        turbines = [TurbineParams.from_natural_frequency(f, m, zeta) for f, m in zip(freqs, inertias)]
    if "coupling" in d:
        coupling = np.array(d["coupling"], dtype=float)
        if coupling.shape != (len(turbines), len(turbines)):
            raise ConfigError(f"farm: coupling must be {len(turbines)}x{len(turbines)}")
    else:
        coupling = default_coupling(turbines, d.get("coupling_factor", 0.1))
    kw = {"sync_speed": d["sync_speed"]} if "sync_speed" in d else {}
    return FarmModel(tuple(turbines), coupling, **kw)


def _forcing(d: dict) -> ForcingSpec:
    if "components" in d:
        return ForcingSpec(d["turbine"], tuple(tuple(c) for c in d["components"]), d.get("dc", 0.0))
    return ForcingSpec.sinusoid(d["turbine"], d["freq"], d["amplitude"], d.get("phase", 0.0))


def _check_resonance(farm: FarmModel, forcings) -> None:
    modes = farm.modal_frequencies()
    modes = modes[modes > 0]
    for fs in forcings:
        for f, _, _ in fs.components:
            near = modes[np.abs(modes - f) < RESONANCE_MARGIN * modes]
            if near.size:
                raise ConfigError(
                    f"forcing at {f} Hz is within {RESONANCE_MARGIN:.0%} of the modal frequency "
                    f"{near[0]:.3f} Hz; set allow_resonance to run it anyway"
                )


def from_dict(d: dict) -> ScenarioConfig:
    """Validate a scenario document against :data:`SCENARIO_SCHEMA` and build its model objects.

    ``seed`` overrides the noise and ensemble seeds.
    """
    try:
        jsonschema.validate(d, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"scenario invalid at {where}: {exc.message}") from None
    d = copy.deepcopy(d)
    seed = int(d.get("seed", 0))
    farm = _farm(d["farm"])
    forcings = tuple(_forcing(f) for f in d.get("forcings", []))
    for fs in forcings:
        if fs.turbine_index >= farm.r:
            raise ConfigError(f"forcing references turbine {fs.turbine_index} but the farm has {farm.r}")
    allow_resonance = bool(d.get("allow_resonance", False))
    if not allow_resonance:
        _check_resonance(farm, forcings)
    noise = NoiseSpec(**{**d.get("noise", {}), "rng_seed": seed})
    sim = SimSettings(**d.get("sim", {}))
    sig = dict(d.get("signal", {}))
    if "band" in sig:
        sig["band"] = tuple(sig["band"])
    signal = SignalSettings(**sig)
    if not signal.band[0] < signal.band[1]:
        raise ConfigError(f"signal band must be increasing, got {signal.band}")
    if not sim.settle < sim.duration:
        raise ConfigError(f"settle ({sim.settle} s) must be shorter than duration ({sim.duration} s)")
    x0 = None
    if "initial_state" in d:
        x0 = np.array(d["initial_state"], dtype=float)
        if x0.shape != (2 * farm.r,):
            raise ConfigError(f"initial_state needs {2 * farm.r} entries, got {x0.size}")
    reg = d.get("regression", {})
    ens = d.get("ensemble", {})
    ensemble = EnsembleConfig(**ens, **reg, rng_seed=seed)
    return ScenarioConfig(
        name=d.get("name", "custom"),
        farm=farm,
        forcings=forcings,
        noise=noise,
        sim=sim,
        signal=signal,
        library=LibrarySettings(**d.get("library", {})),
        ensemble=ensemble,
        locate=LocateSettings(**d.get("locate", {})),
        seed=seed,
        x0=x0,
        allow_resonance=allow_resonance,
        source=d,
    )


def builtin_names() -> list[str]:
    files = resources.files("fosindy").joinpath("builtin").iterdir()
    return sorted(p.name[:-5] for p in files if p.name.endswith(".json"))


def builtin_document(name: str) -> dict:
    if name not in builtin_names():
        raise ConfigError(f"unknown built-in scenario {name!r}; choose from {builtin_names()}")
    text = resources.files("fosindy").joinpath("builtin", f"{name}.json").read_text(encoding="utf-8")
    return json.loads(text)


def load_config(name_or_path: str | Path) -> ScenarioConfig:
    """Load a scenario from a JSON file path or a built-in name such as ``case1``."""
    path = Path(name_or_path)
    if path.suffix == ".json" or path.exists():
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return from_dict(doc)
    return from_dict(builtin_document(str(name_or_path)))

