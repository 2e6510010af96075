"""Scenario presets, configuration files, Gamma_phi sweeps and reports.

Configuration files are TOML. A file may start from a preset with
``base = "degenerate"`` and override individual keys; every key is checked
against the schema below so typos fail loudly.
"""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import tomli
import tomli_w
from scipy.optimize import curve_fit

from .dressed import (DIAGONAL_MODES, EMISSION_MODELS, build_channels,
                      build_drive_operator, diagonalize, emission_model)
from .dynamics import DriveConfig, SimGrid, build_generator, propagate
from .model import (ConfigError, SystemConfig, build_hamiltonian, build_operators, parity_operator,
                    truncation_error)
from .spectra import (default_tau_step, device_efficiency, emission_spectrum, energy_balance_residual,
                      injected_photons, stick_spectrum, sticks_csv, t_grid_for, two_time_correlator)
from .trajectories import classify_photons, jumps_csv, pair_statistics, prepare_unraveling, run_ensemble

log = logging.getLogger(__name__)

EXIT_OK, EXIT_POINT_FAILED, EXIT_CONFIG = 0, 1, 2
DEFAULT_SWEEP = tuple(float(x) for x in np.linspace(0.0, 0.094, 13))
N_IN_DEFINITIONS = ("energy-balance", "quanta")
POINT_FILES = ("spectrum.csv", "sticks.csv", "timeseries.csv", "jumps.csv", "yield.kv")


@dataclass(frozen=True)
class TrajectorySettings:
    n_traj: int = 2000
    seed: int = 20240601
    emission_model: str = "default"
    step: float = 0.05
    workers: int = 1

    def __post_init__(self):
        if self.n_traj < 1:
            raise ConfigError("trajectories.n_traj must be >= 1")
        if self.step <= 0:
            raise ConfigError("trajectories.step must be > 0")
        if self.workers < 1:
            raise ConfigError("trajectories.workers must be >= 1")
        if self.seed < 0:
            raise ConfigError("trajectories.seed must be >= 0")
        emission_model(self.emission_model)


@dataclass(frozen=True)
class SpectrumSettings:
    enabled: bool = True
    n_t: int = 64
    pad: int = 4
    window: str = "none"
    mode: str = "full"

    def __post_init__(self):
        if self.window not in ("none", "cosine"):
            raise ConfigError("spectrum.window must be 'none' or 'cosine'")
        if self.mode not in ("full", "post-pulse"):
            raise ConfigError("spectrum.mode must be 'full' or 'post-pulse'")
        if self.n_t < 2 or self.pad < 1:
            raise ConfigError("spectrum.n_t must be >= 2 and spectrum.pad >= 1")


@dataclass(frozen=True)
class ChannelSettings:
    diagonal_mode: str = "grouped"
    cutoff: float = 1e-12
    ceiling_factor: float = 3.0
    energy_tol: float = 0.05

    def __post_init__(self):
        if self.diagonal_mode not in DIAGONAL_MODES:
            raise ConfigError(f"channels.diagonal_mode must be one of {DIAGONAL_MODES}")
        if self.cutoff < 0 or self.ceiling_factor <= 0 or self.energy_tol < 0:
            raise ConfigError("channels: cutoff >= 0, ceiling_factor > 0, energy_tol >= 0 required")


@dataclass(frozen=True)
class ObservableSettings:
    n_in_definition: str = "energy-balance"
    epsilon: float = 0.1
    truncation_tol: float = 1e-6

    def __post_init__(self):
        if self.n_in_definition not in N_IN_DEFINITIONS:
            raise ConfigError(f"observables.n_in_definition must be one of {N_IN_DEFINITIONS}")
        if not 0 < self.epsilon <= 1:
            raise ConfigError("observables.epsilon must lie in (0, 1]")


@dataclass(frozen=True)
class SweepSpec:
    gamma_phi: tuple = DEFAULT_SWEEP
    workers: int = 1

    def __post_init__(self):
        if len(self.gamma_phi) == 0:
            raise ConfigError("sweep.gamma_phi must not be empty")
        if any((not math.isfinite(g)) or g < 0 for g in self.gamma_phi):
            raise ConfigError("sweep.gamma_phi values must be finite and >= 0")
        if self.workers < 1:
            raise ConfigError("sweep.workers must be >= 1")


@dataclass(frozen=True)
class ScenarioPreset:
    name: str
    system: SystemConfig
    drive: DriveConfig
    grid: SimGrid = SimGrid()
    trajectories: TrajectorySettings = TrajectorySettings()
    spectrum: SpectrumSettings = SpectrumSettings()
    channels: ChannelSettings = ChannelSettings()
    observables: ObservableSettings = ObservableSettings()
    sweep: SweepSpec = SweepSpec()

    def with_gamma_phi(self, gamma_phi: float) -> "ScenarioPreset":
        return replace(self, system=self.system.with_(gamma_phi=float(gamma_phi)))


_PRESET_RATES = dict(gamma_m=0.075, gamma_e=0.00066, gamma_phi=0.0, r_m=0.5)

PRESETS = {
    "degenerate": ScenarioPreset(
        "degenerate",
        SystemConfig(omega_m=1.6, omega_e=2.9, eta=0.233, **_PRESET_RATES),
        DriveConfig(kappa=0.26),
    ),
    "nondegenerate": ScenarioPreset(
        "nondegenerate",
        SystemConfig(omega_m=1.4, omega_e=1.62, eta=0.275, **_PRESET_RATES),
        DriveConfig(kappa=0.12),
    ),
}


# --- configuration text -------------------------------------------------------

SCHEMA = {
    "system": ("omega_m", "omega_e", "g", "eta", "gamma_m", "gamma_e", "gamma_phi", "r_m", "n_max"),
    "drive": ("kappa", "fwhm_intensity", "carrier", "t_center", "cep"),
    "grid": ("t_start", "t_end", "dt_out", "rtol", "atol", "max_step", "auto_extend", "t_end_cap"),
    "trajectories": ("n_traj", "seed", "emission_model", "step", "workers"),
    "spectrum": ("enabled", "n_t", "pad", "window", "mode"),
    "channels": ("diagonal_mode", "cutoff", "ceiling_factor", "energy_tol"),
    "observables": ("n_in_definition", "epsilon", "truncation_tol"),
    "sweep": ("gamma_phi", "workers"),
}
TOP_LEVEL = ("base", "name")
REQUIRED = ("system.omega_m", "system.omega_e", "system.eta|system.g", "system.gamma_m", "system.gamma_e",
            "system.gamma_phi", "system.r_m", "drive.kappa")
_TYPES = {
    "n_max": int, "n_traj": int, "seed": int, "workers": int, "n_t": int, "pad": int,
    "auto_extend": bool, "enabled": bool,
    "emission_model": str, "window": str, "mode": str, "diagonal_mode": str, "n_in_definition": str,
}


def _line_of(text: str, section: str | None, key: str) -> int | None:
    current = None
    for n, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        header = re.match(r"^\[\s*([^\]]+?)\s*\]", stripped)
        if header:
            current = header.group(1)
            continue
        if re.match(rf"^{re.escape(key)}\s*=", stripped) and current == section:
            return n
    return None


def _where(text: str | None, section: str | None, key: str) -> str:
    n = _line_of(text, section, key) if text else None
    return f" (line {n})" if n else ""


def _check_value(section: str, key: str, value, text: str | None):
    want = _TYPES.get(key)
    name = f"{section}.{key}"
    if want is bool:
        ok = isinstance(value, bool)
    elif want is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif want is str:
        ok = isinstance(value, str)
    elif key == "carrier":
        ok = value == "auto" or (isinstance(value, (int, float)) and not isinstance(value, bool))
    elif key == "gamma_phi" and section == "sweep":
        ok = isinstance(value, list) and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
    else:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    if not ok:
        raise ConfigError(f"{name}{_where(text, section, key)}: invalid value {value!r}")


def _validate_keys(data: dict, text: str | None):
    for key, value in data.items():
        if key in TOP_LEVEL:
            if not isinstance(value, str):
                raise ConfigError(f"{key}{_where(text, None, key)} must be a string")
            continue
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}{_where(text, None, key)}; allowed: "
                              f"{sorted(TOP_LEVEL + tuple(SCHEMA))}")
        if not isinstance(value, dict):
            raise ConfigError(f"{key!r} must be a table")
        for sub, v in value.items():
            if sub not in SCHEMA[key]:
                raise ConfigError(f"unknown key '{key}.{sub}'{_where(text, key, sub)}; allowed in [{key}]: "
                                  f"{', '.join(SCHEMA[key])}")
            _check_value(key, sub, v, text)


def preset_to_dict(p: ScenarioPreset) -> dict:
    sysd = {k: v for k, v in asdict(p.system).items() if v is not None}
    grid = asdict(p.grid)
    if math.isinf(grid["max_step"]):
        del grid["max_step"]
    return {
        "name": p.name,
        "system": sysd,
        "drive": asdict(p.drive),
        "grid": grid,
        "trajectories": asdict(p.trajectories),
        "spectrum": asdict(p.spectrum),
        "channels": asdict(p.channels),
        "observables": asdict(p.observables),
        "sweep": {"gamma_phi": list(p.sweep.gamma_phi), "workers": p.sweep.workers},
    }


def dumps_config(p: ScenarioPreset) -> str:
    """Canonical TOML text; ``loads_config(dumps_config(p)) == p``."""
    return tomli_w.dumps(preset_to_dict(p))


def preset_digest(p: ScenarioPreset) -> str:
    return hashlib.sha256(dumps_config(p).encode()).hexdigest()


def _merge(base: dict, over: dict) -> dict:
    out = {k: (dict(v) if isinstance(v, dict) else v) for k, v in base.items()}
    for key, value in over.items():
        if isinstance(value, dict):
            sect = out.setdefault(key, {})
            if key == "system" and ("g" in value or "eta" in value):
                # a new coupling replaces both forms of the inherited one
                sect.pop("g", None)
                sect.pop("eta", None)
            sect.update(value)
        else:
            out[key] = value
    return out


def preset_from_dict(data: dict, text: str | None = None) -> ScenarioPreset:
    _validate_keys(data, text)
    if "base" in data:
        if data["base"] not in PRESETS:
            raise ConfigError(f"base{_where(text, None, 'base')}: unknown preset {data['base']!r}; "
                              f"choose from {sorted(PRESETS)}")
        data = _merge(preset_to_dict(PRESETS[data["base"]]), {k: v for k, v in data.items() if k != "base"})
    missing = []
    for req in REQUIRED:
        opts = req.split("|")
        if not any(o.split(".")[1] in data.get(o.split(".")[0], {}) for o in opts):
            missing.append(req.replace("|", " or "))
    if missing:
        raise ConfigError("missing required keys: " + ", ".join(missing))

    def build(section, cls, convert=None):
        values = dict(data.get(section, {}))
        if convert:
            values = convert(values)
        try:
            return cls(**values)
        except ConfigError as exc:
            raise ConfigError(f"[{section}] {exc}") from None

    def sweep_conv(v):
        if "gamma_phi" in v:
            v["gamma_phi"] = tuple(float(x) for x in v["gamma_phi"])
        return v

    def float_conv(v):
        return {k: (float(x) if isinstance(x, int) and not isinstance(x, bool) and _TYPES.get(k) is not int else x)
                for k, x in v.items()}

    return ScenarioPreset(
        name=data.get("name", data.get("base", "custom")),
        system=build("system", SystemConfig, float_conv),
        drive=build("drive", DriveConfig, float_conv),
        grid=build("grid", SimGrid, float_conv),
        trajectories=build("trajectories", TrajectorySettings, float_conv),
        spectrum=build("spectrum", SpectrumSettings),
        channels=build("channels", ChannelSettings, float_conv),
        observables=build("observables", ObservableSettings, float_conv),
        sweep=build("sweep", SweepSpec, sweep_conv),
    )


def loads_config(text: str) -> ScenarioPreset:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"parse error: {exc}") from None
    return preset_from_dict(data, text)


def load_config(path) -> ScenarioPreset:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"configuration file {path} does not exist")
    return loads_config(path.read_text())


def resolve_preset(name_or_path) -> ScenarioPreset:
    if str(name_or_path) in PRESETS:
        return PRESETS[str(name_or_path)]
    return load_config(name_or_path)


# --- pipeline -------------------------------------------------------------------

@dataclass
class PointResult:
    gamma_phi: float
    ok: bool
    report: dict = field(default_factory=dict)
    error: str = ""
    files: dict = field(default_factory=dict)
    variants: dict = field(default_factory=dict)


@dataclass
class Pipeline:
    """Deterministic model pieces for one parameter point."""

    preset: ScenarioPreset
    basis: object
    table: object
    X: object
    gen: object
    drive: DriveConfig
    truncation: float


def build_pipeline(preset: ScenarioPreset) -> Pipeline:
    cfg = preset.system
    ops = build_operators(cfg.n_max)
    ham = build_hamiltonian(cfg, ops)
    basis = diagonalize(ham, parity_operator(ops))
    ch = preset.channels
    table = build_channels(basis, cfg, ops, cutoff=ch.cutoff, ceiling_factor=ch.ceiling_factor,
                           diagonal_mode=ch.diagonal_mode, energy_tol=ch.energy_tol)
    X = build_drive_operator(basis, ops)
    return Pipeline(preset, basis, table, X, build_generator(table), preset.drive.resolve(basis),
                    truncation_error(cfg))


def _clean(d: dict) -> dict:
    """Drop None values (TOML has no null), recursively."""
    return {k: (_clean(v) if isinstance(v, dict) else v) for k, v in d.items() if v is not None}


def _kv(d: dict) -> str:
    return tomli_w.dumps(_clean(d))


def run_point(preset: ScenarioPreset, out_dir=None, emission_variants=(), workers: int | None = None) -> PointResult:
    """Full pipeline for one parameter set; writes the per-point files if ``out_dir`` is given."""
    gphi = preset.system.gamma_phi
    files = {}
    pipe = build_pipeline(preset)
    converged = pipe.truncation < preset.observables.truncation_tol
    if not converged:
        log.warning("Fock truncation n_max=%d not converged (shift %.2e eV)", preset.system.n_max, pipe.truncation)
    basis, table = pipe.basis, pipe.table
    drive = pipe.drive
    grid = preset.grid
    sp = preset.spectrum
    tau = default_tau_step(basis)
    w1 = drive.window()[1] if drive.kappa > 0 else grid.t_start
    pulse_grid = t_grid_for(drive, w1, grid.t_start, grid.t_end_cap, table, tau, sp.n_t)
    pulse_grid = pulse_grid[pulse_grid < w1] if sp.enabled else np.empty(0)
    prop = propagate(None, pipe.gen, drive, pipe.X, grid, sample_times=pulse_grid, truncation_converged=converged)
    files["timeseries.csv"] = prop.to_csv()
    n_in = injected_photons(prop, table, definition=preset.observables.n_in_definition)
    n_in_alt = injected_photons(prop, table, definition="quanta" if preset.observables.n_in_definition
                                == "energy-balance" else "energy-balance")
    balance = energy_balance_residual(prop, table)

    ts = preset.trajectories
    model = emission_model(ts.emission_model)
    files["sticks.csv"] = sticks_csv(stick_spectrum(table, prop.population_integrals, model))
    spectrum_meta = {}
    if sp.enabled:
        tg = t_grid_for(drive, prop.window[1], grid.t_start, prop.t_end, table, tau, sp.n_t)
        full = prop.with_samples(tg[tg >= prop.window[1]], pipe.gen)
        corr = two_time_correlator(full, pipe.gen, pipe.X, tg, tau, table=table, mode=sp.mode)
        spec = emission_spectrum(corr, preset.system.r_m, preset.system.gamma_m, pad=sp.pad,
                                 window=None if sp.window == "none" else sp.window)
        files["spectrum.csv"] = spec.to_csv()
        lp, up = basis.energies[basis.lp] - basis.energies[basis.gs], basis.pump_energy
        spectrum_meta = {"share_lp_band": spec.band_fraction(lp, 0.15), "share_pump_band": spec.band_fraction(up, 0.15),
                         "peak_energy": spec.peak_energy()}

    setup = prepare_unraveling(table, pipe.X, drive, grid.t_start, prop.t_end, step=ts.step)
    n_workers = ts.workers if workers is None else workers

    def yields(model_):
        ens = run_ensemble(setup, ts.n_traj, ts.seed, model_, workers=n_workers)
        recs = classify_photons(ens.records, table, preset.channels.energy_tol)
        return recs, pair_statistics(recs, n_in, model_)

    records, rep = yields(model)
    files["jumps.csv"] = jumps_csv(records)
    variants = {}
    for name in emission_variants:
        if name != model.name:
            variants[name] = yields(emission_model(name))[1].as_dict()

    e = basis.energies - basis.energies[basis.gs]
    report = rep.as_dict()
    errors = report.pop("errors")
    report.update({f"{k}_err": v for k, v in errors.items()})
    report.update({
        "gamma_phi": gphi,
        "n_in_definition": preset.observables.n_in_definition,
        "n_in_alternative": n_in_alt,
        "energy_balance_residual": balance,
        "e_lp": float(e[basis.lp]), "e_up": float(e[basis.up]),
        "t_end": prop.t_end,
        "truncation_shift": pipe.truncation,
        "truncation_converged": converged,
        "device_efficiency": device_efficiency(rep.y_pair, preset.observables.epsilon),
        "epsilon": preset.observables.epsilon,
    })
    report.update(spectrum_meta)
    doc = dict(report)
    for name, v in variants.items():
        doc[f"variant.{name}"] = {k: x for k, x in v.items() if k != "errors"}
    files["yield.kv"] = _kv(doc)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for fname, text in files.items():
            (out_dir / fname).write_text(text)
    return PointResult(gphi, True, report, files=files, variants=variants)


def point_dir_name(i: int, gphi: float) -> str:
    return f"point_{i:02d}_gphi_{gphi * 1000:.2f}meV"


def _point_job(args):
    preset, out_dir, variants, workers = args
    t0 = time.perf_counter()
    try:
        res = run_point(preset, out_dir, variants, workers=workers)
    except Exception as exc:  # record and continue the sweep
        log.error("point gamma_phi=%g failed: %s", preset.system.gamma_phi, exc)
        if out_dir is not None:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            (Path(out_dir) / "error.txt").write_text(f"{type(exc).__name__}: {exc}\n")
        res = PointResult(preset.system.gamma_phi, False, error=f"{type(exc).__name__}: {exc}")
    log.info("gamma_phi=%.4f eV done in %.1f s", preset.system.gamma_phi, time.perf_counter() - t0)
    return res


AGGREGATE_COLUMNS = ("gamma_phi_eV", "status", "y_pair", "y_pair_err", "n_signal", "n_signal_err", "n_idler",
                     "n_idler_err", "c_idler_given_signal", "c_idler_given_signal_err", "c_signal_given_idler",
                     "c_signal_given_idler_err", "n_in", "emission_model", "n_traj")


def aggregate_csv(points) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(AGGREGATE_COLUMNS)
    for p in points:
        r = p.report
        row = [repr(float(p.gamma_phi)), "ok" if p.ok else "failed"]
        for col in AGGREGATE_COLUMNS[2:]:
            v = r.get(col)
            row.append("" if v is None else (repr(float(v)) if isinstance(v, float) else v))
        w.writerow(row)
    return buf.getvalue()


def logistic4(x, lower, upper, x0, width):
    return lower + (upper - lower) / (1.0 + np.exp(-(x - x0) / width))


def sigmoid_fit(x, y) -> dict:
    """Least-squares 4-parameter logistic fit with coefficient of determination."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 4:
        return {"status": "too-few-points"}
    span = max(np.ptp(x), 1e-12)
    p0 = [float(y.min()), float(y.max()), float(np.median(x)), span / 8.0]
    try:
        popt, _ = curve_fit(logistic4, x, y, p0=p0, maxfev=20000,
                            bounds=([-1.0, -1.0, -span, span * 1e-3], [2.0, 2.0, 2.0 * x.max() + span, 10 * span]))
    except (RuntimeError, ValueError) as exc:
        return {"status": f"failed: {exc}"}
    resid = y - logistic4(x, *popt)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else float("nan")
    return {"status": "ok", "lower": float(popt[0]), "upper": float(popt[1]), "x0": float(popt[2]),
            "width": float(popt[3]), "r_squared": r2}


@dataclass
class SweepResult:
    points: list
    fit: dict
    exit_code: int
    table: str


def run_sweep(preset: ScenarioPreset, out_dir=None, gamma_phi=None, emission_variants=(),
              workers: int | None = None) -> SweepResult:
    """Run the pipeline at every Gamma_phi; failures are recorded and the sweep continues.

    Each point uses the same master seed, so neighbouring points share random
    numbers and their differences are less noisy.
    """
    values = tuple(float(g) for g in (preset.sweep.gamma_phi if gamma_phi is None else gamma_phi))
    workers = preset.sweep.workers if workers is None else workers
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.toml").write_text(dumps_config(replace(preset, sweep=replace(preset.sweep, gamma_phi=values))))
    jobs = [(preset.with_gamma_phi(g), out / point_dir_name(i, g) if out else None, tuple(emission_variants),
             1 if workers > 1 else None) for i, g in enumerate(values)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            points = list(pool.map(_point_job, jobs))
    else:
        points = [_point_job(j) for j in jobs]
    good = [p for p in points if p.ok]
    fit = sigmoid_fit([p.gamma_phi for p in good], [p.report["y_pair"] for p in good])
    table = aggregate_csv(points)
    if out is not None:
        (out / "sweep.csv").write_text(table)
        (out / "fit.kv").write_text(_kv({k: v for k, v in fit.items() if not (isinstance(v, float) and math.isnan(v))}))
    code = EXIT_OK if all(p.ok for p in points) else EXIT_POINT_FAILED
    return SweepResult(points, fit, code, table)


# --- report ---------------------------------------------------------------------

TOL = 0.15
ENERGY_RTOL = 0.02
REFERENCE_TARGETS = {
    "degenerate": {
        "energies": {"e_up": 3.1, "e_lp": 1.55},
        "n_in": {0.0: 0.97, 0.094: 0.77},
        "y_pair_threshold": (0.040, 0.5),
        "device_photons_per_pair": 15.0,
    },
    "nondegenerate": {
        "energies": {"e_up": 1.94, "e_lp": 1.14},
        "n_in": {0.0: 1.15, 0.094: 0.75},
        "yields_at": 0.094,
        "yields": {"y_pair": 0.61, "n_signal": 0.57, "n_idler": 0.34, "c_idler_given_signal": 0.91,
                   "c_signal_given_idler": 0.53},
        "device_photons_per_pair": 24.0,
    },
}


def _read_kv(path: Path) -> dict:
    return tomli.loads(path.read_text())


def _identify(preset: ScenarioPreset) -> str | None:
    for name, p in PRESETS.items():
        if (p.system.omega_m, p.system.omega_e, p.system.eta, p.drive.kappa) == (
                preset.system.omega_m, preset.system.omega_e, preset.system.eta, preset.drive.kappa):
            return name
    return None


def _status(ok: bool) -> str:
    return "pass" if ok else "flag"


def build_report(out_dir) -> dict:
    out = Path(out_dir)
    if not (out / "sweep.csv").exists() or not (out / "config.toml").exists():
        raise ConfigError(f"{out} holds no completed sweep (sweep.csv and config.toml are required)")
    preset = load_config(out / "config.toml")
    rows = list(csv.DictReader(io.StringIO((out / "sweep.csv").read_text())))
    points = {}
    for i, row in enumerate(rows):
        g = float(row["gamma_phi_eV"])
        kv_path = out / point_dir_name(i, g) / "yield.kv"
        if row["status"] == "ok" and kv_path.exists():
            points[g] = _read_kv(kv_path)
    if not points:
        raise ConfigError(f"{out} has no successful sweep points")
    scenario = _identify(preset)
    model = preset.trajectories.emission_model
    doc = {"scenario": scenario or "custom", "emission_model": model, "n_points": len(rows),
           "n_failed": sum(r["status"] != "ok" for r in rows), "checks": {}}
    checks = doc["checks"]
    any_point = next(iter(points.values()))
    nearest = lambda g: points[min(points, key=lambda x: abs(x - g))]  # noqa: E731

    ys = [points[g]["y_pair"] for g in sorted(points)]
    checks["y_pair_zero_at_zero_dephasing"] = {
        "measured": points[min(points)]["y_pair"], "target": 0.0,
        "status": _status(min(points) != 0.0 or points[min(points)]["y_pair"] == 0.0)}
    if len(ys) > 1:
        checks["y_pair_monotone"] = {"status": _status(all(b >= a for a, b in zip(ys, ys[1:])))}
    fit_path = out / "fit.kv"
    if fit_path.exists():
        fit = _read_kv(fit_path)
        if "r_squared" in fit:
            checks["sigmoid_fit"] = {"r_squared": fit["r_squared"], "target": "> 0.98",
                                     "status": _status(fit["r_squared"] > 0.98)}

    if scenario is None:
        doc["note"] = "configuration does not match a built-in preset; only generic checks are reported"
        return doc
    tgt = REFERENCE_TARGETS[scenario]
    for key, value in tgt["energies"].items():
        got = any_point[key]
        checks[f"energy_{key}"] = {"measured": got, "target": value, "tolerance": f"{ENERGY_RTOL:.0%} relative",
                                   "status": _status(abs(got - value) <= ENERGY_RTOL * value)}
    for g, value in tgt["n_in"].items():
        if any(abs(x - g) < 1e-9 for x in points):
            p = nearest(g)
            ok = abs(p["n_in"] - value) <= TOL
            entry = {"measured": p["n_in"], "definition": p["n_in_definition"], "target": value,
                     "tolerance": TOL, "alternative_definition_value": p["n_in_alternative"],
                     "status": _status(ok)}
            if not ok:
                entry["note"] = "target depends on the N_in definition"
            checks[f"n_in_at_{g * 1000:g}meV"] = entry
    if "y_pair_threshold" in tgt:
        g0, thr = tgt["y_pair_threshold"]
        above = {g: p for g, p in points.items() if g > g0}
        if above:
            worst = min(above, key=lambda g: above[g]["y_pair"])
            measured = {f"{g * 1000:g}meV": above[g]["y_pair"] for g in sorted(above)}
            entry = {"target": f"Y_pair > {thr} for gamma_phi > {g0 * 1000:g} meV", "tolerance": TOL,
                     "measured": measured, "emission_model": model,
                     "status": _status(above[worst]["y_pair"] > thr - TOL)}
            if entry["status"] != "pass":
                entry.update(_variant_note(above[worst], "y_pair", thr, lower_bound=True))
            checks["y_pair_threshold"] = entry
    if "yields" in tgt:
        g = tgt["yields_at"]
        if any(abs(x - g) < 1e-9 for x in points):
            p = nearest(g)
            for key, value in tgt["yields"].items():
                got = p.get(key)
                ok = got is not None and abs(got - value) <= TOL
                entry = {"measured": got, "target": value, "tolerance": TOL, "emission_model": model,
                         "status": _status(ok)}
                if not ok:
                    entry.update(_variant_note(p, key, value))
                checks[f"{key}_at_{g * 1000:g}meV"] = entry
    y_sat = max(ys)
    eff = device_efficiency(y_sat, preset.observables.epsilon) if y_sat > 0 else None
    stated = tgt["device_photons_per_pair"]
    entry = {"stated_photons_per_pair": stated, "epsilon": preset.observables.epsilon,
             "computed_from_max_y_pair": eff}
    if scenario == "nondegenerate":
        entry["note"] = ("stated 24 photons per pair disagrees with 1/(epsilon * 0.61) = 16.4 from the stated "
                         "yield; reported, not resolved")
        entry["status"] = "flag"
    checks["device_efficiency"] = {k: v for k, v in entry.items() if v is not None}
    doc["spectrum"] = {f"{g * 1000:g}meV": {k: p[k] for k in ("share_lp_band", "share_pump_band") if k in p}
                       for g, p in sorted(points.items()) if "share_lp_band" in p}
    if not doc["spectrum"]:
        del doc["spectrum"]
    return doc


def _variant_note(point: dict, key: str, target: float, lower_bound: bool = False) -> dict:
    """Which documented emission-model variants reach the target (within tolerance)."""
    hits, values = [], {}
    for name in EMISSION_MODELS:
        v = point.get(f"variant.{name}", {}).get(key)
        if v is None:
            continue
        values[name] = v
        if (v > target - TOL) if lower_bound else (abs(v - target) <= TOL):
            hits.append(name)
    note = {"variant_values": values} if values else {}
    if hits:
        note["bracketed_by"] = hits
    else:
        note["note"] = "definition-dependent: no documented emission model reaches this target"
    return note


def write_report(out_dir) -> Path:
    doc = build_report(out_dir)
    path = Path(out_dir) / "summary.kv"
    path.write_text(_kv(doc))
    return path
