"""Truncated boson x two-level-system model.

Tensor ordering is boson (x) TLS throughout: the product-basis index of
``|n, s>`` is ``2 * n + s`` with ``s = 0`` for the TLS ground state ``|->``
and ``s = 1`` for ``|+>``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .constants import DEBYE, ELEMENTARY_CHARGE, EPSILON_0, PLANCK, SPEED_OF_LIGHT

DEFAULT_N_MAX = 12


class ConfigError(ValueError):
    """Raised for invalid physical parameters."""


class TruncationError(RuntimeError):
    """Raised when the Fock truncation has not converged."""


@dataclass(frozen=True)
class SystemConfig:
    """Physical parameters of one scenario (energies and rates in eV).

    Give one of ``g`` and ``eta``; the other is derived from
    ``eta = 2 g / (omega_m + omega_e)``.
    """

    omega_m: float
    omega_e: float
    g: float | None = None
    eta: float | None = None
    gamma_m: float = 0.0
    gamma_e: float = 0.0
    gamma_phi: float = 0.0
    r_m: float = 1.0
    n_max: int = DEFAULT_N_MAX

    def __post_init__(self):
        if self.g is None and self.eta is None:
            raise ConfigError("one of g and eta must be given")
        for name in ("omega_m", "omega_e", "gamma_m", "gamma_e", "gamma_phi"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ConfigError(f"{name} must be a finite number >= 0, got {value!r}")
        if not 0.0 <= self.r_m <= 1.0:
            raise ConfigError(f"r_m must lie in [0, 1], got {self.r_m!r}")
        if int(self.n_max) != self.n_max or self.n_max < 2:
            raise ConfigError(f"n_max must be an integer >= 2, got {self.n_max!r}")
        total = self.omega_m + self.omega_e
        if self.g is not None and self.eta is not None:
            # both present (e.g. after dataclasses.replace): must agree
            if total == 0 or not math.isclose(self.eta, 2.0 * self.g / total, rel_tol=1e-12, abs_tol=1e-300):
                raise ConfigError("g and eta are both given but inconsistent; give only one")
        elif self.g is None:
            if self.eta < 0:
                raise ConfigError("eta must be >= 0")
            object.__setattr__(self, "g", 0.5 * self.eta * total)
        else:
            if self.g < 0:
                raise ConfigError("g must be >= 0")
            if total == 0:
                raise ConfigError("eta undefined for omega_m + omega_e = 0")
            object.__setattr__(self, "eta", 2.0 * self.g / total)
        object.__setattr__(self, "n_max", int(self.n_max))

    @property
    def dim(self) -> int:
        return 2 * self.n_max

    def with_(self, **changes) -> "SystemConfig":
        """Copy with changed fields; coupling changes re-derive the partner."""
        if "g" in changes and "eta" not in changes:
            changes["eta"] = None
        elif "eta" in changes and "g" not in changes:
            changes["g"] = None
        elif "g" not in changes and "eta" not in changes:
            # keep the coupling strength fixed, re-derive eta from the energies
            changes["g"], changes["eta"] = self.g, None
        return replace(self, **changes)


@dataclass(frozen=True)
class OperatorSet:
    b: np.ndarray
    b_dag: np.ndarray
    sigma_minus: np.ndarray
    sigma_plus: np.ndarray
    identity: np.ndarray
    n_max: int

    @property
    def dim(self) -> int:
        return self.identity.shape[0]

    @property
    def field(self) -> np.ndarray:
        """b + b^dagger."""
        return self.b + self.b_dag

    @property
    def dipole(self) -> np.ndarray:
        """sigma_+ + sigma_-."""
        return self.sigma_plus + self.sigma_minus

    @property
    def exciton_number(self) -> np.ndarray:
        """sigma_+ sigma_-."""
        return self.sigma_plus @ self.sigma_minus


@dataclass(frozen=True)
class Hamiltonian:
    matrix: np.ndarray
    h_m: np.ndarray
    h_e: np.ndarray
    h_int: np.ndarray
    h_dia: np.ndarray
    components: dict = field(default_factory=dict, repr=False)


def build_operators(n_max: int) -> OperatorSet:
    if int(n_max) != n_max or n_max < 2:
        raise ConfigError(f"n_max must be an integer >= 2, got {n_max!r}")
    n_max = int(n_max)
    a = np.diag(np.sqrt(np.arange(1, n_max, dtype=float)), k=1).astype(complex)
    sm = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)
    b = np.kron(a, np.eye(2))
    s_minus = np.kron(np.eye(n_max), sm)
    return OperatorSet(
        b=b,
        b_dag=b.conj().T.copy(),
        sigma_minus=s_minus,
        sigma_plus=s_minus.conj().T.copy(),
        identity=np.eye(2 * n_max, dtype=complex),
        n_max=n_max,
    )


def build_hamiltonian(cfg: SystemConfig, ops: OperatorSet) -> Hamiltonian:
    """System Hamiltonian with counter-rotating and diamagnetic terms.

    The diamagnetic prefactor is g**2 / omega_e (TLS energy, not mode energy).
    """
    if ops.dim != cfg.dim:
        raise ConfigError(f"operator dimension {ops.dim} does not match config dimension {cfg.dim}")
    if cfg.omega_e == 0 and cfg.g > 0:
        raise ConfigError("diamagnetic term diverges for omega_e = 0 with g > 0")
    x = ops.field
    h_m = cfg.omega_m * (ops.b_dag @ ops.b)
    h_e = cfg.omega_e * ops.exciton_number
    h_int = cfg.g * (x @ ops.dipole)
    h_dia = (cfg.g**2 / cfg.omega_e) * (x @ x) if cfg.g > 0 else np.zeros_like(h_m)
    total = h_m + h_e + h_int + h_dia
    return Hamiltonian(total, h_m, h_e, h_int, h_dia)


def parity_operator(ops: OperatorSet) -> np.ndarray:
    """exp(i pi (b^dag b + sigma_+ sigma_-)), diagonal with entries +-1."""
    excitations = np.real(np.diag(ops.b_dag @ ops.b + ops.exciton_number))
    return np.diag((-1.0) ** np.rint(excitations)).astype(complex)


def coupling_from_geometry(dipole_debye: float, mode_volume: float, omega_m: float) -> float:
    """Maximal coupling d * sqrt(omega_m / (2 eps0 V)) in eV.

    ``mode_volume`` is in units of lambda_m**3 with lambda_m = h c / omega_m.
    """
    if dipole_debye < 0 or mode_volume <= 0 or omega_m <= 0:
        raise ConfigError("need dipole >= 0, mode_volume > 0 and omega_m > 0")
    if dipole_debye == 0:
        return 0.0
    wavelength = PLANCK * SPEED_OF_LIGHT / omega_m * 1e-9  # m
    volume = mode_volume * wavelength**3
    energy_joule = omega_m * ELEMENTARY_CHARGE
    field = math.sqrt(energy_joule / (2.0 * EPSILON_0 * volume))  # V / m
    return dipole_debye * DEBYE * field / ELEMENTARY_CHARGE


def lowest_energies(cfg: SystemConfig, count: int = 6) -> np.ndarray:
    ops = build_operators(cfg.n_max)
    return np.linalg.eigvalsh(build_hamiltonian(cfg, ops).matrix)[:count]


def truncation_error(cfg: SystemConfig, count: int = 6, extra: int = 4) -> float:
    """Largest shift of the lowest eigenvalues when n_max grows by ``extra``."""
    bigger = replace(cfg, n_max=cfg.n_max + extra)
    return float(np.max(np.abs(lowest_energies(bigger, count) - lowest_energies(cfg, count))))


def check_truncation(cfg: SystemConfig, tol: float = 1e-6) -> float:
    err = truncation_error(cfg)
    if err >= tol:
        raise TruncationError(
            f"Fock truncation n_max={cfg.n_max} not converged: lowest eigenvalues move by "
            f"{err:.3e} eV when adding 4 levels (tolerance {tol:.1e} eV)"
        )
    return err
