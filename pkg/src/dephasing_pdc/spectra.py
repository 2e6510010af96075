"""Emission spectra, photon-count observables and device figures of merit."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .constants import HBAR
from .dressed import ChannelTable, DriveOperator, EmissionModel
from .dynamics import DriveConfig, Liouvillian, PropagationResult, evolve_operators
from .model import ConfigError

EXCITED_LIMIT = 1e-3


class SpectrumError(ValueError):
    pass


@dataclass
class CorrelatorResult:
    """G(t, tau) = <X_b^dag(t) X_b(t + tau)> on a t grid and uniform tau grid."""

    t_grid: np.ndarray
    tau_step: float
    values: np.ndarray  # (n_t, n_tau)
    mode: str = "full"

    @property
    def taus(self) -> np.ndarray:
        return self.tau_step * np.arange(self.values.shape[1])

    def integrated(self) -> np.ndarray:
        """Trapezoidal integral over t for every tau."""
        return np.trapezoid(self.values, self.t_grid, axis=0) if self.t_grid.size > 1 else self.values[0]


@dataclass
class SpectrumResult:
    energies: np.ndarray
    raw: np.ndarray
    normalized: np.ndarray
    normalization: str
    meta: dict = field(default_factory=dict)

    @property
    def values(self) -> np.ndarray:
        return self.normalized if self.normalization == "unit-total-power" else self.raw

    @property
    def bin_width(self) -> float:
        """Intrinsic frequency resolution 2 pi hbar / tau_max (eV); padding only interpolates."""
        return float(self.meta.get("pad", 1) * (self.energies[1] - self.energies[0]))

    def band_fraction(self, center: float, half_width: float) -> float:
        """Share of total power within center +- half_width (eV)."""
        sel = np.abs(self.energies - center) <= half_width
        total = np.trapezoid(self.raw, self.energies)
        return float(np.trapezoid(np.where(sel, self.raw, 0.0), self.energies) / total)

    def peak_energy(self, lo: float = -np.inf, hi: float = np.inf) -> float:
        sel = (self.energies >= lo) & (self.energies <= hi)
        i = np.argmax(np.where(sel, self.raw, -np.inf))
        return float(self.energies[i])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["energy_eV", "S_raw", "S_normalized"])
        for e, r, n in zip(self.energies, self.raw, self.normalized):
            w.writerow([repr(float(e)), repr(float(r)), repr(float(n))])
        return buf.getvalue()


@dataclass
class YieldReport:
    n_in: float
    n_signal: float
    n_idler: float
    y_pair: float
    c_idler_given_signal: float | None
    c_signal_given_idler: float | None
    emission_model: str
    n_traj: int = 0
    errors: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if v is not None and k != "errors"}
        out["errors"] = {k: v for k, v in self.errors.items() if v is not None}
        return out


def nyquist_step(basis) -> float:
    """Largest tau step resolving the GS -> UP frequency."""
    return math.pi * HBAR / basis.pump_energy


def default_tau_step(basis) -> float:
    return nyquist_step(basis) / 8.0


def default_tau_max(table: ChannelTable, n_decay: float = 15.0) -> float:
    """n_decay amplitude decay times (2 hbar / Gamma) of the slower of LP and UP."""
    b = table.basis
    rates = [table.total_decay(k) for k in (b.lp, b.up)]
    rates = [r for r in rates if r > 0]
    if not rates:
        raise SpectrumError("neither LP nor UP decays; correlator never decays")
    return n_decay * 2.0 * HBAR / min(rates)


def default_t_grid(prop: PropagationResult, table: ChannelTable, tau_step: float, n_points: int = 64,
                   n_decay: float = 5.0) -> np.ndarray:
    """Half the points across the pulse, half over n_decay population decay times.

    Points are snapped to the tau lattice anchored at the first point.
    """
    return t_grid_for(prop.drive, prop.window[1], prop.times[0], prop.t_end, table, tau_step, n_points, n_decay)


def t_grid_for(drive: DriveConfig, w1: float, t_start: float, t_end: float, table: ChannelTable,
               tau_step: float, n_points: int = 64, n_decay: float = 5.0) -> np.ndarray:
    """default_t_grid from its ingredients; the pulse half does not depend on t_end."""
    b = table.basis
    rates = [r for r in (table.total_decay(b.lp), table.total_decay(b.up)) if r > 0]
    if not rates:
        raise SpectrumError("neither LP nor UP decays")
    slow = HBAR / min(rates)
    start = max(t_start, drive.t_center - 3.0 * drive.field_sigma) if drive.kappa > 0 else t_start
    w1 = max(w1, start)
    stop = min(w1 + n_decay * slow, t_end)
    n_pulse = n_points // 2
    grid = np.concatenate([np.linspace(start, w1, n_pulse, endpoint=False),
                           np.linspace(w1, stop, n_points - n_pulse)])
    grid = start + np.round((grid - start) / tau_step) * tau_step
    return np.unique(grid)


def _free_correlator(gen: Liouvillian, xe: np.ndarray, seed: np.ndarray, taus: np.ndarray) -> np.ndarray:
    """sum_{j<k} X_jk M_kj exp(C_kj tau) for a drive-free generator."""
    weights = (xe * seed.T)  # X_jk * M_kj at [j, k]
    jj, kk = np.nonzero(np.abs(weights) > 1e-14 * max(np.max(np.abs(weights)), 1e-300))
    if jj.size == 0:
        return np.zeros(taus.size, dtype=complex)
    rates = gen.coherence[kk, jj]
    return np.exp(np.outer(taus, rates)) @ weights[jj, kk]


def two_time_correlator(
    prop: PropagationResult,
    gen: Liouvillian,
    X: DriveOperator,
    t_grid=None,
    tau_step: float | None = None,
    tau_max: float | None = None,
    table: ChannelTable | None = None,
    mode: str = "full",
    rtol: float = 1e-10,
    atol: float = 1e-12,
) -> CorrelatorResult:
    """Quantum-regression correlator G(t, tau) = Tr[X_b Phi_{t -> t+tau}(rho(t) X_b^dag)].

    ``mode='full'`` propagates seeds through the remaining pulse with the driven
    generator; ``'post-pulse'`` ignores the drive during tau (quick look).
    ``prop`` must contain samples at every t in ``t_grid``.
    """
    basis = X.basis
    if mode not in ("full", "post-pulse"):
        raise ConfigError("mode must be 'full' or 'post-pulse'")
    if tau_step is None:
        tau_step = default_tau_step(basis)
    if tau_step >= nyquist_step(basis):
        raise SpectrumError(
            f"tau step {tau_step:.4g} fs does not resolve Omega_UP = {basis.pump_energy:.4f} eV "
            f"(Nyquist limit {nyquist_step(basis):.4g} fs)"
        )
    if tau_max is None:
        if table is None:
            raise ConfigError("give tau_max or a channel table")
        tau_max = default_tau_max(table)
    if t_grid is None:
        if table is None:
            raise ConfigError("give t_grid or a channel table")
        t_grid = default_t_grid(prop, table, tau_step)
    t_grid = np.asarray(t_grid, dtype=float)
    n_tau = int(math.ceil(tau_max / tau_step)) + 1
    taus = tau_step * np.arange(n_tau)
    xe = X.eigen
    xdag = X.eigen_dag
    values = np.zeros((t_grid.size, n_tau), dtype=complex)
    seeds = np.array([prop.state_at(t) @ xdag for t in t_grid])
    drive = prop.drive
    w1 = prop.window[1]

    in_pulse = (t_grid < w1) & (drive.kappa > 0) & (mode == "full")
    for s in np.flatnonzero(~in_pulse):
        values[s] = _free_correlator(gen, xe, seeds[s], taus)

    pulse_idx = np.flatnonzero(in_pulse)
    if pulse_idx.size:
        t0 = t_grid[pulse_idx[0]]
        # every pulse seed sits on the lattice t0 + n * tau_step
        offsets = np.rint((t_grid[pulse_idx] - t0) / tau_step).astype(int)
        if np.max(np.abs(t_grid[pulse_idx] - t0 - offsets * tau_step)) > 1e-6:
            raise ConfigError("t grid points inside the pulse must lie on the tau lattice")
        n_last = int(math.floor((w1 - t0) / tau_step + 1e-9))
        stack = np.empty((0, gen.dim, gen.dim), dtype=complex)
        active = []
        for p, s in enumerate(pulse_idx):
            stack = np.concatenate([stack, seeds[s][None]])
            active.append((s, offsets[p]))
            t_a = t0 + offsets[p] * tau_step
            t_b = t0 + offsets[p + 1] * tau_step if p + 1 < pulse_idx.size else w1
            lattice = t0 + tau_step * np.arange(offsets[p], n_last + 1)
            t_eval = np.unique(np.clip(np.concatenate([lattice[lattice <= t_b + 1e-9], [t_b]]), t_a, t_b))
            times, hist = evolve_operators(stack, t_a, t_b, gen, drive, X, t_eval=t_eval, rtol=rtol, atol=atol)
            steps = (times - t0) / tau_step
            on_lattice = np.abs(steps - np.rint(steps)) < 1e-6
            tr = np.einsum("jk,tskj->ts", xe, hist[on_lattice])
            idx = np.rint(steps[on_lattice]).astype(int)
            for q, (seed_idx, off) in enumerate(active):
                col = idx - off
                ok = (col >= 0) & (col < n_tau)
                values[seed_idx, col[ok]] = tr[ok, q]
            stack = hist[-1]
        # drive-free continuation from w1
        for q, (seed_idx, off) in enumerate(active):
            first = n_last + 1 - off
            if first >= n_tau:
                continue
            tail = taus[first:] + t0 + off * tau_step - w1
            values[seed_idx, first:] = _free_correlator(gen, xe, stack[q], tail)
    return CorrelatorResult(t_grid, float(tau_step), values, mode)


def emission_spectrum(
    corr: CorrelatorResult,
    r_m: float,
    gamma_m: float,
    pad: int = 4,
    window: str | None = None,
    normalization: str = "unit-total-power",
    decay_tol: float = 1e-4,
) -> SpectrumResult:
    """S(w) = (r_m Gamma_m / hbar) int dt int_0^inf dtau Re{G(t, tau) exp(i w tau)}.

    Trapezoid over t, zero-padded FFT over tau; positive frequencies only.
    """
    if normalization not in ("raw", "unit-total-power"):
        raise ConfigError("normalization must be 'raw' or 'unit-total-power'")
    g = corr.integrated()
    peak = np.max(np.abs(g))
    if peak == 0:
        raise SpectrumError("correlator vanishes identically; nothing is emitted")
    tail = np.max(np.abs(g[-max(1, g.size // 100):]))
    if tail > decay_tol * peak:
        needed = corr.taus[-1] * math.log(tail / peak) / math.log(decay_tol) if tail < peak else float("inf")
        raise SpectrumError(
            f"correlator has only decayed to {tail / peak:.2e} of its peak over the tau range "
            f"({corr.taus[-1]:.1f} fs); extend tau_max to about {needed:.0f} fs"
        )
    g = g.copy()
    if window == "cosine":
        g *= np.cos(0.5 * math.pi * corr.taus / corr.taus[-1])
    elif window is not None:
        raise ConfigError("window must be None or 'cosine'")
    g[0] *= 0.5
    n = pad * g.size
    spectrum = n * np.fft.ifft(g, n)[: n // 2 + 1] * corr.tau_step
    raw = r_m * gamma_m / HBAR * np.real(spectrum)
    energies = HBAR * 2.0 * math.pi * np.arange(n // 2 + 1) / (n * corr.tau_step)
    total = np.trapezoid(raw, energies)
    normalized = raw / total if total != 0 else raw.copy()
    meta = {"n_t": int(corr.t_grid.size), "tau_step": corr.tau_step, "tau_max": float(corr.taus[-1]),
            "t_first": float(corr.t_grid[0]), "t_last": float(corr.t_grid[-1]), "window": window or "none",
            "pad": pad, "correlator_mode": corr.mode}
    return SpectrumResult(energies, raw, normalized, normalization, meta)


@dataclass(frozen=True)
class Stick:
    energy: float
    weight: float
    j: int
    k: int


def stick_spectrum(table: ChannelTable, population_integrals, emission: EmissionModel | None = None) -> list:
    """Emitted photons per channel: (Gamma_emit / hbar) * int P_k dt at E_k - E_j."""
    emission = emission or EmissionModel()
    pint = np.asarray(population_integrals)
    sticks = []
    for ch in table.channels:
        w = emission.emission_rate(ch) / HBAR * float(pint[ch.k])
        if w > 0:
            sticks.append(Stick(ch.transition_energy, w, ch.j, ch.k))
    return sticks


def sticks_csv(sticks) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["energy_eV", "weight", "j", "k"])
    for s in sticks:
        w.writerow([repr(s.energy), repr(s.weight), s.j, s.k])
    return buf.getvalue()


def dissipated_energy(prop: PropagationResult, table: ChannelTable) -> float:
    pint = prop.population_integrals
    return math.fsum(ch.transition_energy * ch.gamma_total / HBAR * float(pint[ch.k]) for ch in table.channels)


def injected_photons(prop: PropagationResult, table: ChannelTable, pump_energy: float | None = None,
                     definition: str = "energy-balance") -> float:
    """Mean number of photons absorbed from the pulse.

    ``energy-balance``: (dissipated energy + change of <H_sys>) / pump energy.
    ``quanta``: net drive-induced depletion of the ground state.
    """
    basis = table.basis
    if pump_energy is None:
        pump_energy = basis.pump_energy
    excited = 1.0 - float(np.real(prop.states[-1][basis.gs, basis.gs]))
    if excited > EXCITED_LIMIT:
        raise ConfigError(f"final excited population {excited:.2e} exceeds {EXCITED_LIMIT:g}; run longer")
    if prop.drive is None or prop.drive.kappa == 0:
        return 0.0
    if definition == "energy-balance":
        return (dissipated_energy(prop, table) + prop.energy_end - prop.energy_start) / pump_energy
    if definition == "quanta":
        return prop.gs_depletion
    raise ConfigError("definition must be 'energy-balance' or 'quanta'")


def energy_balance_residual(prop: PropagationResult, table: ChannelTable) -> float:
    """Relative mismatch between absorbed work and dissipated energy + residual."""
    lhs = dissipated_energy(prop, table) + prop.energy_end - prop.energy_start
    if prop.drive_work == 0:
        return abs(lhs)
    return abs(lhs - prop.drive_work) / abs(prop.drive_work)


def device_efficiency(y_pair: float, epsilon: float) -> float | None:
    """Illuminating photons per generated pair, 1 / (epsilon * Y_pair); None if Y_pair = 0."""
    if not 0 < epsilon <= 1:
        raise ConfigError("epsilon must lie in (0, 1]")
    if y_pair < 0:
        raise ConfigError("Y_pair must be >= 0")
    if y_pair == 0:
        return None
    return 1.0 / (epsilon * y_pair)
