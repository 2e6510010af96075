"""Brute-force reference propagator for small truncations.

Works in the product basis with an explicit D^2 x D^2 superoperator and
matrix exponentials over short steps. Nothing here is shared with the fast
eigenbasis path in ``dynamics`` except operator construction and the channel
table, so agreement between the two is a real cross-check.

Row-major vectorization: vec(A rho B) = (A kron B^T) vec(rho).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .constants import HBAR
from .dressed import EigenBasis, build_channels, build_drive_operator, diagonalize
from .dynamics import DriveConfig, SimGrid, timeseries_csv
from .model import ConfigError, SystemConfig, build_hamiltonian, build_operators, parity_operator

MAX_N_MAX = 4
GAUSS_OFFSET = math.sqrt(3.0) / 6.0


class OracleError(ConfigError):
    pass


@dataclass(frozen=True)
class OracleConfig:
    system: SystemConfig
    drive: DriveConfig
    step: float = 0.02  # fs
    diagonal_mode: str = "grouped"

    def __post_init__(self):
        if self.system.n_max > MAX_N_MAX:
            raise OracleError(f"oracle needs n_max <= {MAX_N_MAX}, got {self.system.n_max}")
        if self.step <= 0:
            raise OracleError("step must be > 0")


def _commutator_super(a: np.ndarray) -> np.ndarray:
    eye = np.eye(a.shape[0])
    return np.kron(a, eye) - np.kron(eye, a.T)


def _dissipator_super(o: np.ndarray) -> np.ndarray:
    eye = np.eye(o.shape[0])
    odo = o.conj().T @ o
    return np.kron(o, o.conj()) - 0.5 * np.kron(odo, eye) - 0.5 * np.kron(eye, odo.T)


@dataclass
class OracleModel:
    config: OracleConfig
    basis: EigenBasis = field(repr=False)
    drive: DriveConfig
    L0: np.ndarray = field(repr=False)
    L1: np.ndarray = field(repr=False)  # drive part per unit f(t)
    x_product: np.ndarray = field(repr=False)
    _free_cache: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self) -> int:
        return self.basis.dim

    def drive_interval(self) -> tuple[float, float]:
        """Where the field envelope exceeds 1e-16; empty for kappa = 0."""
        d = self.drive
        if d.kappa == 0:
            return (0.0, 0.0)
        half = d.fwhm_intensity * math.sqrt(math.log(1e16) / (2.0 * math.log(2.0)))
        return d.t_center - half, d.t_center + half

    def envelope(self, t: float) -> float:
        d = self.drive
        if d.kappa == 0:
            return 0.0
        x = t - d.t_center
        env = math.exp(-2.0 * math.log(2.0) * x * x / d.fwhm_intensity**2)
        if env < 1e-16:
            return 0.0
        return env * math.cos(d.carrier * x / HBAR + d.cep)

    def step_propagator(self, t: float, h: float) -> np.ndarray:
        """Fourth-order Magnus propagator over [t, t + h]."""
        f1 = self.envelope(t + (0.5 - GAUSS_OFFSET) * h)
        f2 = self.envelope(t + (0.5 + GAUSS_OFFSET) * h)
        if f1 == 0.0 and f2 == 0.0:
            key = round(h, 12)
            if key not in self._free_cache:
                self._free_cache[key] = expm(h * self.L0)
            return self._free_cache[key]
        omega = h * self.L0 + 0.5 * h * (f1 + f2) * self.L1
        if f1 != f2:
            if "comm" not in self._free_cache:
                self._free_cache["comm"] = self.L1 @ self.L0 - self.L0 @ self.L1
            omega += math.sqrt(3.0) / 12.0 * h * h * (f2 - f1) * self._free_cache["comm"]
        return expm(omega)

    def evolve(self, vec: np.ndarray, t0: float, out_times) -> np.ndarray:
        """Propagate vec(rho) (or a stack of columns) from t0; sample at out_times."""
        out_times = np.asarray(out_times, dtype=float)
        if np.any(out_times < t0 - 1e-12):
            raise OracleError("output times must not precede the start time")
        h = self.config.step
        t_last = float(out_times.max()) if out_times.size else t0
        # fixed steps only where the drive is on; drive-free stretches are exact
        a, b = self.drive_interval()
        a, b = max(a, t0), min(b, t_last)
        lattice = a + h * np.arange(int(math.floor((b - a) / h + 1e-9)) + 1) if b > a else np.empty(0)
        nodes = np.unique(np.concatenate([lattice, [b] if b > a else [], out_times, [t0]]))
        want = {float(t): i for i, t in enumerate(out_times)}
        result = np.empty((out_times.size,) + vec.shape, dtype=complex)
        cur = np.asarray(vec, dtype=complex).copy()
        for i, t in enumerate(nodes):
            if i > 0:
                cur = self.step_propagator(nodes[i - 1], t - nodes[i - 1]) @ cur
            if float(t) in want:
                result[want[float(t)]] = cur
        # duplicates in out_times share one node
        for j, t in enumerate(out_times):
            if j != want[float(t)]:
                result[j] = result[want[float(t)]]
        return result


def build_oracle(config: OracleConfig) -> OracleModel:
    cfg = config.system
    ops = build_operators(cfg.n_max)
    ham = build_hamiltonian(cfg, ops).matrix
    basis = diagonalize(ham, parity_operator(ops))
    table = build_channels(basis, cfg, ops, diagonal_mode=config.diagonal_mode)
    x = build_drive_operator(basis, ops)
    drive = config.drive.resolve(basis)
    v = basis.vectors

    L0 = -1j / HBAR * _commutator_super(ham)
    for ch in table.channels:
        o = np.outer(v[:, ch.j], v[:, ch.k].conj())
        L0 += ch.gamma_total / HBAR * _dissipator_super(o)
    for dp in table.dephasing:
        o = v @ np.diag(dp.diagonal) @ v.conj().T
        L0 += dp.gamma / HBAR * _dissipator_super(o)
    coupling = x.product + x.product.conj().T
    L1 = -1j * drive.kappa / HBAR * _commutator_super(coupling)
    return OracleModel(config, basis, drive, L0, L1, x.product)


@dataclass
class OracleResult:
    times: np.ndarray
    states: np.ndarray  # product basis
    basis: EigenBasis = field(repr=False)
    drive: DriveConfig = None

    def eigen_states(self) -> np.ndarray:
        v = self.basis.vectors
        return np.einsum("ai,tab,bj->tij", v.conj(), self.states, v)

    @property
    def populations(self) -> np.ndarray:
        return np.real(np.einsum("tkk->tk", self.eigen_states()))

    def to_csv(self) -> str:
        return timeseries_csv(self.times, self.populations, self.basis, self.drive)


def _ground(model: OracleModel) -> np.ndarray:
    g = model.basis.vectors[:, model.basis.gs]
    return np.outer(g, g.conj())


def exact_propagate(rho0, config: OracleConfig, grid: SimGrid, times=None,
                    model: OracleModel | None = None) -> OracleResult:
    """Time series of rho (product basis) on grid.t_start .. grid.t_end.

    ``rho0`` is a product-basis density matrix or None for the dressed ground
    state. The end time is taken as given (no automatic extension).
    """
    model = build_oracle(config) if model is None else model
    d = model.dim
    rho0 = _ground(model) if rho0 is None else np.asarray(rho0, dtype=complex)
    if rho0.shape != (d, d):
        raise OracleError(f"rho0 must be {d} x {d}")
    if times is None:
        times = np.arange(grid.t_start, grid.t_end + 0.5 * grid.dt_out, grid.dt_out)
        times = times[times <= grid.t_end + 1e-9]
    times = np.asarray(times, dtype=float)
    vecs = model.evolve(rho0.reshape(-1), grid.t_start, times)
    return OracleResult(times, vecs.reshape(-1, d, d), model.basis, model.drive)


def exact_correlator(config: OracleConfig, t, taus, t_start: float = 0.0, rho0=None,
                     model: OracleModel | None = None) -> np.ndarray:
    """G(t, tau) = Tr[X_b Phi_{t -> t+tau}(rho(t) X_b^dag)] for each t (rows) and tau (columns)."""
    model = build_oracle(config) if model is None else model
    d = model.dim
    t = np.atleast_1d(np.asarray(t, dtype=float))
    taus = np.asarray(taus, dtype=float)
    rho0 = _ground(model) if rho0 is None else np.asarray(rho0, dtype=complex)
    rhos = model.evolve(rho0.reshape(-1), t_start, t).reshape(-1, d, d)
    x = model.x_product
    xdag = x.conj().T
    out = np.empty((t.size, taus.size), dtype=complex)
    for i, (ti, rho) in enumerate(zip(t, rhos)):
        seeds = model.evolve((rho @ xdag).reshape(-1), ti, ti + taus).reshape(-1, d, d)
        out[i] = np.einsum("jk,tkj->t", x, seeds)
    return out
