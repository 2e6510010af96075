"""Pulsed-drive Lindblad dynamics in the polariton eigenbasis.

All density matrices handled here are eigenbasis matrices. Because every jump
operator is either a transition ``|j><k|`` or diagonal, the drive-free
generator acts elementwise on coherences and as a classical rate matrix on
populations; that structure gives both a fast matrix-free action and exact
drive-free propagation.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from .constants import HBAR
from .dressed import ChannelTable, DriveOperator, EigenBasis
from .model import ConfigError

log = logging.getLogger(__name__)

LN2 = math.log(2.0)
DRIVE_CUTOFF = 1e-12
EXCITED_THRESHOLD = 1e-4
T_END_CAP = 5000.0


class IntegrationError(RuntimeError):
    """Propagation violated trace, Hermiticity or positivity bounds."""


@dataclass(frozen=True)
class DriveConfig:
    kappa: float
    fwhm_intensity: float = 20.0
    carrier: float | str = "auto"
    t_center: float = 100.0
    cep: float = 0.0

    def __post_init__(self):
        if self.kappa < 0:
            raise ConfigError("kappa must be >= 0")
        if self.fwhm_intensity <= 0:
            raise ConfigError("fwhm_intensity must be > 0")
        if isinstance(self.carrier, str) and self.carrier != "auto":
            raise ConfigError("carrier must be a number or 'auto'")

    @property
    def field_sigma(self) -> float:
        """Standard deviation (fs) of the Gaussian field envelope."""
        return self.fwhm_intensity / (2.0 * math.sqrt(LN2))

    def resolve(self, basis: EigenBasis) -> "DriveConfig":
        """Fix an ``auto`` carrier to the GS -> UP transition energy."""
        if self.carrier != "auto":
            return self
        carrier = basis.pump_energy
        log.info("carrier resolved to Omega_UP - Omega_GS = %.6f eV", carrier)
        return DriveConfig(self.kappa, self.fwhm_intensity, carrier, self.t_center, self.cep)

    def window(self, cutoff: float = DRIVE_CUTOFF) -> tuple[float, float]:
        """Interval outside which the field envelope is below ``cutoff``."""
        half = self.field_sigma * math.sqrt(2.0 * math.log(1.0 / cutoff))
        return self.t_center - half, self.t_center + half


def field_envelope(t, drive: DriveConfig):
    """Gaussian field envelope; its square has FWHM ``fwhm_intensity``."""
    t = np.asarray(t, dtype=float)
    return np.exp(-2.0 * LN2 * (t - drive.t_center) ** 2 / drive.fwhm_intensity**2)


def pulse_envelope(t, drive: DriveConfig):
    """Real normalized drive f(t) = envelope * cos(carrier (t - t0) / hbar + cep)."""
    if drive.carrier == "auto":
        raise ConfigError("resolve the carrier (DriveConfig.resolve) before evaluating the pulse")
    t = np.asarray(t, dtype=float)
    return field_envelope(t, drive) * np.cos(drive.carrier * (t - drive.t_center) / HBAR + drive.cep)


@dataclass(frozen=True)
class SimGrid:
    t_start: float = 0.0
    t_end: float = 1000.0
    dt_out: float = 1.0
    rtol: float = 1e-10
    atol: float = 1e-12
    max_step: float = np.inf
    auto_extend: bool = True
    t_end_cap: float = T_END_CAP

    def __post_init__(self):
        if self.t_end <= self.t_start:
            raise ConfigError("t_end must exceed t_start")
        if self.dt_out <= 0:
            raise ConfigError("dt_out must be > 0")

    def check_drive(self, drive: DriveConfig):
        if drive.kappa > 0 and drive.t_center - self.t_start < 3.0 * drive.field_sigma:
            raise ConfigError(
                f"t_start={self.t_start} fs must precede the pulse centre by at least "
                f"3 field standard deviations ({3 * drive.field_sigma:.2f} fs)"
            )


@dataclass
class DensityMatrixState:
    rho: np.ndarray
    t: float


@dataclass
class Liouvillian:
    """Drive-free generator L0 in the eigenbasis (rates in eV, time in fs)."""

    energies: np.ndarray
    gain: np.ndarray  # gain[j, k] = Gamma_jk for j < k
    out: np.ndarray  # out[k] = sum_j Gamma_jk
    coherence: np.ndarray  # complex elementwise factor (1/fs) for coherences
    jump_ops: list = field(repr=False)
    hbar: float = HBAR

    @property
    def dim(self) -> int:
        return self.energies.size

    @property
    def rate_matrix(self) -> np.ndarray:
        """Population generator R (1/fs): dp/dt = R p."""
        return (self.gain - np.diag(self.out)) / self.hbar

    def apply(self, rho: np.ndarray) -> np.ndarray:
        """L0 rho; works on a single matrix or a stack (..., D, D)."""
        out = self.coherence * rho
        pops = np.einsum("...kk->...k", rho)
        gained = pops @ self.gain.T / self.hbar
        idx = np.arange(self.dim)
        out[..., idx, idx] += gained
        return out

    def matrix(self) -> np.ndarray:
        """Explicit D^2 x D^2 superoperator acting on row-major vec(rho)."""
        d = self.dim
        eye = np.eye(d)
        h = np.diag(self.energies).astype(complex)
        sup = -1j / self.hbar * (np.kron(h, eye) - np.kron(eye, h.T))
        for rate, o in self.jump_ops:
            odo = o.conj().T @ o
            sup += rate / self.hbar * (
                np.kron(o, o.conj()) - 0.5 * np.kron(odo, eye) - 0.5 * np.kron(eye, odo.T)
            )
        return sup

    def evolve_free(self, rho: np.ndarray, dt: float) -> np.ndarray:
        """Exact drive-free propagation of rho (or an operator seed) by ``dt``."""
        out = rho * np.exp(self.coherence * dt)
        pops = np.einsum("...kk->...k", rho)
        idx = np.arange(self.dim)
        out[..., idx, idx] = pops @ expm(self.rate_matrix * dt).T
        return out

    def population_integral(self, pops: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
        """Populations after ``dt`` and their time integral, both exact."""
        d = self.dim
        aug = np.zeros((2 * d, 2 * d))
        aug[:d, :d] = self.rate_matrix
        aug[:d, d:] = np.eye(d)
        big = expm(aug * dt)
        return big[:d, :d] @ pops, big[:d, d:] @ pops


def build_generator(table: ChannelTable, energies: np.ndarray | None = None, hbar: float = HBAR) -> Liouvillian:
    """L0 rho = -(i/hbar)[H_sys, rho] + (1/hbar) sum Gamma L(o) rho."""
    e = table.basis.energies if energies is None else np.asarray(energies, dtype=float)
    d = e.size
    if d != table.basis.dim:
        raise ConfigError("energy vector does not match the channel table")
    gain = np.zeros((d, d))
    for ch in table.channels:
        gain[ch.j, ch.k] += ch.gamma_total
    out = gain.sum(axis=0)
    decay = 0.5 * (out[:, None] + out[None, :]).astype(complex)
    for dp in table.dephasing:
        dk = dp.diagonal.astype(complex)
        decay -= dp.gamma * (np.outer(dk, dk.conj()) - 0.5 * (np.abs(dk)[:, None] ** 2 + np.abs(dk)[None, :] ** 2))
    coherence = -1j * (e[:, None] - e[None, :]) / hbar - decay / hbar
    # populations are handled through the rate matrix
    np.fill_diagonal(coherence, -out / hbar)
    return Liouvillian(e, gain, out, coherence, table.jump_operators(), hbar)


@dataclass
class PropagationResult:
    times: np.ndarray
    states: np.ndarray
    basis: EigenBasis = field(repr=False)
    drive: DriveConfig = None
    window: tuple = (0.0, 0.0)
    population_integrals: np.ndarray = None
    drive_work: float = 0.0
    gs_depletion: float = 0.0
    energy_start: float = 0.0
    energy_end: float = 0.0
    t_end: float = 0.0
    truncation_converged: bool = True
    window_state: np.ndarray = field(default=None, repr=False)

    @property
    def final(self) -> DensityMatrixState:
        return DensityMatrixState(self.states[-1], float(self.times[-1]))

    @property
    def populations(self) -> np.ndarray:
        return np.real(np.einsum("tkk->tk", self.states))

    def excited_population(self) -> np.ndarray:
        return 1.0 - self.populations[:, self.basis.gs]

    def state_at(self, t: float, tol: float = 1e-9) -> np.ndarray:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > tol:
            raise KeyError(f"time {t} fs was not sampled")
        return self.states[i]

    def to_csv(self) -> str:
        return timeseries_csv(self.times, self.populations, self.basis, self.drive)

    def with_samples(self, times, gen: "Liouvillian") -> "PropagationResult":
        """Copy with extra samples at drive-free times after the pulse window (exact)."""
        times = np.asarray(times, dtype=float)
        new = np.setdiff1d(times, self.times)
        if new.size == 0:
            return self
        if np.any(new < self.window[1]) or np.any(new > self.t_end):
            raise ConfigError("extra samples must lie between the pulse window end and t_end")
        extra = np.array([gen.evolve_free(self.window_state, t - self.window[1]) for t in new])
        allt = np.concatenate([self.times, new])
        order = np.argsort(allt, kind="stable")
        return replace(self, times=allt[order], states=np.concatenate([self.states, extra])[order])


def timeseries_csv(times, populations, basis: EigenBasis, drive: DriveConfig | None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t_fs", "pop_GS", "pop_LP", "pop_UP", "pop_other", "trace", "drive"])
    f = pulse_envelope(times, drive) if drive is not None and drive.kappa > 0 else np.zeros(len(times))
    for t, p, fv in zip(times, populations, f):
        named = p[basis.gs] + p[basis.lp] + p[basis.up]
        total = float(np.sum(p))
        writer.writerow([repr(float(t)), repr(float(p[basis.gs])), repr(float(p[basis.lp])),
                         repr(float(p[basis.up])), repr(float(total - named)), repr(total), repr(float(fv))])
    return buf.getvalue()


def ground_state(basis: EigenBasis) -> DensityMatrixState:
    rho = np.zeros((basis.dim, basis.dim), dtype=complex)
    rho[basis.gs, basis.gs] = 1.0
    return DensityMatrixState(rho, 0.0)


def _envelope_fn(drive: DriveConfig):
    """Scalar f(t) without numpy overhead, zero outside the drive window."""
    if drive.kappa == 0:
        return lambda t: 0.0
    w0, w1 = drive.window()
    t0, width, carrier, cep = drive.t_center, drive.fwhm_intensity, drive.carrier, drive.cep
    a = 2.0 * LN2 / width**2

    def f(t):
        if t < w0 or t > w1:
            return 0.0
        x = t - t0
        return math.exp(-a * x * x) * math.cos(carrier * x / HBAR + cep)

    return f


def _drive_rhs(gen: Liouvillian, drive: DriveConfig, coupling: np.ndarray):
    scale = -1j * drive.kappa / gen.hbar
    envelope = _envelope_fn(drive)
    coh = gen.coherence
    gain_t = gen.gain.T / gen.hbar
    idx = np.arange(gen.dim)

    d = gen.dim
    real_sym = np.allclose(coupling.imag, 0.0) and np.allclose(coupling, coupling.T)
    c_real = np.ascontiguousarray(coupling.real)

    def commutator(m):
        s = m.shape[0]
        if not real_sym:
            return np.matmul(coupling, m) - np.matmul(m, coupling)
        # real GEMMs on interleaved float views, one call per product
        a = np.ascontiguousarray(m.transpose(1, 0, 2)).view(np.float64).reshape(d, -1)
        left = (c_real @ a).view(complex).reshape(d, s, d).transpose(1, 0, 2)
        b = np.ascontiguousarray(m.transpose(2, 0, 1)).view(np.float64).reshape(d, -1)
        right = (c_real @ b).view(complex).reshape(d, s, d).transpose(1, 2, 0)
        return left - right

    def rhs(t, m):
        out = coh * m
        out[:, idx, idx] += m[:, idx, idx] @ gain_t
        f = envelope(t)
        if f != 0.0:
            out += (scale * f) * commutator(m)
        return out

    return rhs


def evolve_operators(
    seeds: np.ndarray,
    t0: float,
    t1: float,
    gen: Liouvillian,
    drive: DriveConfig,
    X: DriveOperator,
    t_eval=None,
    rtol: float = 1e-10,
    atol: float = 1e-12,
    max_step: float = np.inf,
):
    """Evolve a stack of operators from t0 to t1 under the full generator.

    Returns (times, stack history of shape (n_t, n_seed, D, D)).
    """
    seeds = np.asarray(seeds, dtype=complex)
    shape = seeds.shape
    d = gen.dim
    coupling = X.coupling_eigen
    rhs_m = _drive_rhs(gen, drive, coupling)
    if t_eval is None:
        t_eval = np.array([t1])
    if t1 <= t0:
        return np.array([t0]), seeds[None]

    def rhs(t, y):
        return rhs_m(t, y.reshape(-1, d, d)).reshape(-1)

    sol = solve_ivp(rhs, (t0, t1), seeds.reshape(-1), method="DOP853", t_eval=t_eval,
                    rtol=rtol, atol=atol, max_step=max_step)
    if not sol.success:
        raise IntegrationError(sol.message)
    hist = sol.y.T.reshape((len(sol.t),) + shape)
    return sol.t, hist


def _window_rhs(gen: Liouvillian, drive: DriveConfig, coupling: np.ndarray, gs: int):
    d = gen.dim
    n = d * d
    scale = -1j * drive.kappa / gen.hbar
    e = gen.energies
    # [H_sys, X + X^dag] in the eigenbasis
    comm_hx = (e[:, None] - e[None, :]) * coupling

    envelope = _envelope_fn(drive)

    def rhs(t, y):
        rho = y[:n].reshape(d, d)
        out = np.empty_like(y)
        drho = gen.apply(rho)
        f = envelope(t)
        power = 0.0
        depletion = 0.0
        if f != 0.0:
            c = scale * f * (coupling @ rho - rho @ coupling)
            drho += c
            # d<H_sys>/dt from the drive: -(i/hbar) kappa f Tr(rho [H_sys, X+X^dag])
            power = float(np.real(scale * f * np.sum(rho.T * comm_hx)))
            depletion = -float(np.real(c[gs, gs]))
        out[:n] = drho.reshape(-1)
        out[n : n + d] = np.real(np.diagonal(rho))
        out[n + d] = power
        out[n + d + 1] = depletion
        return out

    return rhs


def check_state(rho: np.ndarray, t: float, trace_tol=1e-6, herm_tol=1e-8, pos_tol=1e-8, positivity=False):
    tr = np.trace(rho)
    if abs(tr - 1.0) > trace_tol:
        raise IntegrationError(f"trace drift {abs(tr - 1):.3e} at t={t:.3f} fs")
    herm = np.max(np.abs(rho - rho.conj().T))
    if herm > herm_tol:
        raise IntegrationError(f"Hermiticity violation {herm:.3e} at t={t:.3f} fs")
    if positivity:
        w = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
        if w[0] < -pos_tol:
            raise IntegrationError(f"negative eigenvalue {w[0]:.3e} at t={t:.3f} fs")


def decay_time_bound(table: ChannelTable, drive: DriveConfig, factor: float = 25.0) -> float:
    """t0 + factor * hbar / min positive(Gamma_GS,LP, Gamma_GS,UP)."""
    b = table.basis
    rates = [r for r in (table.rate(b.gs, b.lp), table.rate(b.gs, b.up)) if r > 0]
    return drive.t_center + factor * HBAR / min(rates)


def propagate(
    rho0: DensityMatrixState | None,
    gen: Liouvillian,
    drive: DriveConfig,
    X: DriveOperator,
    grid: SimGrid,
    sample_times=None,
    truncation_converged: bool = True,
    validate: bool = True,
) -> PropagationResult:
    """Integrate d rho/dt = L0 rho - (i/hbar)[kappa f(t)(X_b + X_b^dag), rho].

    The drive is integrated with adaptive DOP853 inside the pulse window; the
    drive-free remainder is propagated exactly. With ``grid.auto_extend`` the
    end time grows until the excited population drops below 1e-4 (capped).
    """
    basis = X.basis
    if drive.carrier == "auto":
        drive = drive.resolve(basis)
    grid.check_drive(drive)
    if rho0 is None:
        rho0 = ground_state(basis)
        rho0 = DensityMatrixState(rho0.rho, grid.t_start)
    d = gen.dim
    n = d * d
    e = gen.energies
    if drive.kappa > 0:
        w0, w1 = drive.window()
        w0, w1 = max(w0, grid.t_start), max(min(w1, grid.t_end_cap), grid.t_start)
    else:
        w0 = w1 = grid.t_start

    # drive-free stretch before the pulse
    rho_w0 = gen.evolve_free(rho0.rho, w0 - grid.t_start) if w0 > grid.t_start else rho0.rho.copy()
    pops0 = np.real(np.diagonal(rho0.rho))
    _, pre_int = gen.population_integral(pops0, w0 - grid.t_start)

    extra = np.asarray([] if sample_times is None else sample_times, dtype=float)
    base_times = np.arange(grid.t_start, grid.t_end + 0.5 * grid.dt_out, grid.dt_out)

    y0 = np.concatenate([rho_w0.reshape(-1), np.zeros(d + 2, dtype=complex)])
    if w1 > w0:
        in_window = np.unique(np.concatenate([base_times, extra]))
        in_window = in_window[(in_window >= w0) & (in_window <= w1)]
        t_eval = np.unique(np.concatenate([in_window, [w1]]))
        sol = solve_ivp(_window_rhs(gen, drive, X.coupling_eigen, basis.gs), (w0, w1), y0,
                        method="DOP853", t_eval=t_eval, rtol=grid.rtol, atol=grid.atol,
                        max_step=grid.max_step)
        if not sol.success:
            raise IntegrationError(sol.message)
        win_times = sol.t
        win_states = sol.y[:n].T.reshape(-1, d, d)
        y_end = sol.y[:, -1]
    else:
        win_times = np.empty(0)
        win_states = np.empty((0, d, d), dtype=complex)
        y_end = y0
    rho_w1 = y_end[:n].reshape(d, d)
    win_int = np.real(y_end[n : n + d])
    work = float(np.real(y_end[n + d]))
    depletion = float(np.real(y_end[n + d + 1]))

    # choose the end time
    t_end = max(grid.t_end, w1)
    pops_w1 = np.real(np.diagonal(rho_w1))
    if grid.auto_extend:
        while t_end < grid.t_end_cap:
            p, _ = gen.population_integral(pops_w1, t_end - w1)
            if 1.0 - p[basis.gs] < EXCITED_THRESHOLD:
                break
            t_end = min(t_end + 100.0, grid.t_end_cap)
    post_pops, post_int = gen.population_integral(pops_w1, t_end - w1)

    times = np.arange(grid.t_start, t_end + 0.5 * grid.dt_out, grid.dt_out)
    times = times[times <= t_end + 1e-9]
    times = np.unique(np.concatenate([times, extra[(extra >= grid.t_start) & (extra <= t_end)], [t_end]]))
    states = np.empty((times.size, d, d), dtype=complex)
    win_index = {float(t): i for i, t in enumerate(win_times)}
    for i, t in enumerate(times):
        if t < w0:
            states[i] = gen.evolve_free(rho0.rho, t - grid.t_start)
        elif t <= w1 and float(t) in win_index:
            states[i] = win_states[win_index[float(t)]]
        else:
            states[i] = gen.evolve_free(rho_w1, t - w1)

    if validate:
        spot = set(np.linspace(0, times.size - 1, 10).astype(int).tolist())
        for i, t in enumerate(times):
            check_state(states[i], t, positivity=i in spot)

    e_start = float(np.real(np.sum(e * np.diagonal(rho0.rho))))
    e_end = float(np.sum(e * post_pops))
    return PropagationResult(
        times=times, states=states, basis=basis, drive=drive, window=(w0, w1),
        population_integrals=pre_int + win_int + post_int, drive_work=work,
        gs_depletion=depletion, energy_start=e_start, energy_end=e_end, t_end=float(t_end),
        truncation_converged=truncation_converged, window_state=rho_w1,
    )
