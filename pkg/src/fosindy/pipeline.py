"""End-to-end localization: simulate or ingest, identify, flag, and persist every artifact."""

from __future__ import annotations

import platform
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

from . import io
from .dynamics import Trajectory, simulate, steady_state_window
from .ensemble import EnsembleModel, fit_ensemble
from .errors import StageError
from .library import FeatureLibrary, build_library
from .locate import ForcingAmplitudeTable, LocalizationReport, extract_amplitudes, flag_sources
from .scenarios import ScenarioConfig
from .signals import CandidateFrequencies, amplitude_spectrum, dedup_frequencies, finite_difference, zscore_peak_bins

MANIFEST = "manifest.json"
REPORT = "report.json"
TL_NOTE = (
    "Wind-speed driven mechanical torque variation is not modeled as a measured series; "
    "it is approximated by the stochastic load torque channel."
)


@dataclass(eq=False)
class RunArtifacts:
    outdir: Path
    manifest: Path
    trajectory: Path | None = None
    spectra: list[Path] = field(default_factory=list)
    candidates: Path | None = None
    library: Path | None = None
    ensemble: Path | None = None
    coefficients: Path | None = None
    amplitudes: Path | None = None
    report: Path | None = None
    localization: LocalizationReport | None = None
    model: EnsembleModel | None = None
    candidate_set: CandidateFrequencies | None = None


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for dist in ("artifact", "numpy", "scipy", "numba", "jsonschema"):
        try:
            out[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            out[dist] = None
    return out


class _Recorder:
    """Times stages and writes the manifest, including on failure."""

    def __init__(self, cfg: ScenarioConfig, outdir: Path, mode: str, extra=None):
        self.cfg = cfg
        self.outdir = outdir
        self.mode = mode
        self.extra = extra or {}
        self.timings: dict[str, float] = {}
        outdir.mkdir(parents=True, exist_ok=True)

    @contextmanager
    def stage(self, name: str):
        start = time.perf_counter()
        try:
            yield
        except Exception as exc:
            self.timings[name] = time.perf_counter() - start
            self.write_manifest("failed", failed_stage=name, error=f"{type(exc).__name__}: {exc}")
            raise StageError(name, exc) from exc
        self.timings[name] = time.perf_counter() - start

    def write_manifest(self, status: str, failed_stage=None, error=None) -> Path:
        files = {}
        for p in sorted(self.outdir.rglob("*")):
            rel = p.relative_to(self.outdir).as_posix()
            if p.is_file() and rel != MANIFEST:
                files[rel] = io.sha256(p)
        doc = {
            "status": status,
            "failed_stage": failed_stage,
            "error": error,
            "mode": self.mode,
            "seed": self.cfg.seed,
            **self.extra,
            "config": self.cfg.to_dict(),
            "versions": _versions(),
            "timings_s": self.timings,
            "files": files,
            "notes": [TL_NOTE],
        }
        return io.write_json(self.outdir / MANIFEST, doc)


def _channels(cfg: ScenarioConfig, r: int) -> list[int]:
    return {
        "omega": list(range(r, 2 * r)),
        "delta": list(range(r)),
        "both": list(range(2 * r)),
    }[cfg.signal.channels]


def _report_doc(cfg: ScenarioConfig, rep: LocalizationReport) -> dict:
    t = rep.table
    doc = {
        "scenario": cfg.name,
        "seed": cfg.seed,
        "method": rep.method,
        "thresholds": rep.thresholds,
        "detected": [
            {
                "turbine": d.turbine_label,
                "turbine_index": d.turbine_index,
                "frequency_hz": d.frequency,
                "amplitude": d.amplitude,
                "robust_z": d.robust_z,
            }
            for d in rep.detected
        ],
        "amplitude_table": {
            "units": t.units,
            "freqs_hz": list(t.freqs),
            "turbines": list(t.turbine_labels),
            "entries": t.entries,
        },
    }
    if cfg.locate.report_torque:
        tq = t.to_torque([tp.inertia for tp in cfg.farm.turbines])
        doc["torque_table"] = {"units": tq.units, "entries": tq.entries}
    return doc


def _write_amplitudes(path: Path, table: ForcingAmplitudeTable) -> Path:
    rows = ([f] + [float(v) for v in table.entries[i]] for i, f in enumerate(table.freqs))
    return io.write_table(path, ["freq_hz", *table.turbine_labels], rows)


def _write_coefficients(path: Path, model: EnsembleModel) -> Path:
    rows = ([name] + [float(v) for v in model.aggregated_xi[k]] for k, name in enumerate(model.term_names))
    return io.write_table(path, ["term", *model.target_names], rows)


def _ensemble_doc(model: EnsembleModel) -> dict:
    doc = {
        "terms": model.term_names,
        "targets": model.target_names,
        "inclusion_prob": model.inclusion_prob,
        "aggregated_xi": model.aggregated_xi,
        "model_mse": model.model_mse,
        "lambda_used": model.lambda_used,
        "failures": {str(k): v for k, v in sorted(model.failures.items())},
    }
    if model.cv is not None:
        doc["cv"] = {
            "folds": model.cv.folds,
            "lambda_grid": model.cv.lambda_grid,
            "mse_mean": model.cv.mse_mean,
            "chosen": model.cv.chosen,
        }
    return doc


def _identify(cfg: ScenarioConfig, window: Trajectory, rec: _Recorder, art: RunArtifacts) -> RunArtifacts:
    out = rec.outdir
    with rec.stage("finite_difference"):
        ms = finite_difference(window)
    with rec.stage("spectra"):
        names = window.column_names()
        spectra = {ch: amplitude_spectrum(window, ch) for ch in _channels(cfg, window.r)}
        (out / "spectra").mkdir(exist_ok=True)
        for ch, sp in spectra.items():
            path = out / "spectra" / f"{names[ch]}.csv"
            io.write_table(path, ["freq_hz", "amplitude"], zip(map(float, sp.freqs), map(float, sp.amps)))
            art.spectra.append(path)
    with rec.stage("peaks"):
        s = cfg.signal
        peak_lists = []
        for ch, sp in spectra.items():
            bins = zscore_peak_bins(sp, s.lag, s.threshold, s.influence, s.band)
            peak_lists.append((names[ch], [round(float(sp.freqs[b]), 2) for b in bins], [sp.amps[b] for b in bins]))
    with rec.stage("dedup"):
        cands = dedup_frequencies(peak_lists, s.dedup_tol)
        art.candidate_set = cands
        art.candidates = io.write_json(
            out / "candidates.json",
            {
                "band_hz": list(s.band),
                "freqs_hz": list(cands.freqs),
                "provenance": [sorted(p) for p in cands.provenance],
                "per_channel": {ch: freqs for ch, freqs, _ in peak_lists},
            },
        )
    with rec.stage("library"):
        lib: FeatureLibrary = build_library(ms, cands, cfg.library.degree)
        if cfg.library.dump:
            art.library = io.write_table(out / "library.csv", lib.names, (list(map(float, row)) for row in lib.theta))
    with rec.stage("ensemble"):
        model = fit_ensemble(lib, ms, cfg.ensemble)
        art.model = model
        art.ensemble = io.write_json(out / "ensemble.json", _ensemble_doc(model))
        art.coefficients = _write_coefficients(out / "coefficients.csv", model)
    with rec.stage("amplitudes"):
        labels = tuple(f"WT{j + 1}" for j in range(window.r))
        table = extract_amplitudes(model, labels)
        art.amplitudes = _write_amplitudes(out / "amplitudes.csv", table)
    with rec.stage("flag"):
        loc = cfg.locate
        if table.entries.size:
            rep = flag_sources(table, loc.z_cutoff, loc.floor, loc.floor_fraction)
        else:
            rep = LocalizationReport([], table, "no candidate frequencies in band; nothing to flag", {})
        art.localization = rep
        art.report = io.write_json(out / REPORT, _report_doc(cfg, rep))
    art.manifest = rec.write_manifest("ok")
    return art


def simulate_scenario(cfg: ScenarioConfig) -> Trajectory:
    return simulate(cfg.farm, cfg.forcings, cfg.noise, cfg.sim.dt, cfg.sim.duration, x0=cfg.x0)


def run_simulation(cfg: ScenarioConfig, outdir) -> RunArtifacts:
    """Simulate only and write ``trajectory.csv`` plus the manifest."""
    outdir = Path(outdir)
    rec = _Recorder(cfg, outdir, "simulate")
    art = RunArtifacts(outdir, outdir / MANIFEST)
    with rec.stage("simulate"):
        traj = simulate_scenario(cfg)
        art.trajectory = io.write_trajectory_csv(traj, outdir / "trajectory.csv")
    art.manifest = rec.write_manifest("ok")
    return art


def run_pipeline(cfg: ScenarioConfig, outdir) -> RunArtifacts:
    """Simulate the scenario and localize its forcing sources.

    Stages: simulate, window, finite_difference, spectra, peaks, dedup,
    library, ensemble, amplitudes, flag.  A failing stage raises
    :class:`StageError` after writing a manifest that names it.
    """
    outdir = Path(outdir)
    rec = _Recorder(cfg, outdir, "run")
    art = RunArtifacts(outdir, outdir / MANIFEST)
    with rec.stage("simulate"):
        traj = simulate_scenario(cfg)
        art.trajectory = io.write_trajectory_csv(traj, outdir / "trajectory.csv")
    with rec.stage("window"):
        window = steady_state_window(traj, cfg.sim.settle)
    return _identify(cfg, window, rec, art)


def analyze_external(csv_path, cfg: ScenarioConfig, outdir) -> RunArtifacts:
    """Localize sources in a measured trajectory CSV.

    The scenario supplies the settle time and every identification setting;
    its farm, forcing and noise sections are ignored.  Ingestion problems raise
    :class:`~fosindy.errors.IngestionError` before any artifact is written.
    """
    csv_path = Path(csv_path)
    traj = io.read_trajectory_csv(csv_path)
    outdir = Path(outdir)
    rec = _Recorder(cfg, outdir, "analyze", {"input": {"path": str(csv_path), "sha256": io.sha256(csv_path)}})
    art = RunArtifacts(outdir, outdir / MANIFEST)
    with rec.stage("window"):
        window = steady_state_window(traj, cfg.sim.settle)
    return _identify(cfg, window, rec, art)


def report_sources(art: RunArtifacts) -> list[tuple[str, float]]:
    return sorted(art.localization.sources) if art.localization else []

