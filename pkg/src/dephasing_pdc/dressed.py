"""Polariton eigenbasis, dressed dissipation channels and the adapted drive operator."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .model import ConfigError, Hamiltonian, OperatorSet, SystemConfig

BATHS = ("m", "e", "phi")
DIAGONAL_MODES = ("grouped", "independent", "off")

PUMP = "pump-fluorescence"
SIGNAL = "signal"
IDLER = "idler"
OTHER = "other"
NONE = "none"


class LabelingError(RuntimeError):
    """GS/LP/UP assignment is ambiguous."""


@dataclass(frozen=True)
class EigenBasis:
    energies: np.ndarray
    vectors: np.ndarray
    parity: np.ndarray
    gs: int
    lp: int
    up: int

    @property
    def dim(self) -> int:
        return self.energies.size

    @property
    def pump_energy(self) -> float:
        return float(self.energies[self.up] - self.energies[self.gs])

    def to_eigen(self, op: np.ndarray) -> np.ndarray:
        """Product-basis operator -> eigenbasis matrix."""
        return self.vectors.conj().T @ op @ self.vectors

    def to_product(self, op: np.ndarray) -> np.ndarray:
        return self.vectors @ op @ self.vectors.conj().T


def diagonalize(ham: Hamiltonian | np.ndarray, parity: np.ndarray, degeneracy_tol: float = 1e-10) -> EigenBasis:
    """Sorted eigenpairs with phase convention and parity-based GS/LP/UP labels.

    Each eigenvector is rotated so that its largest-magnitude component is real
    and positive. LP and UP are the first two excited states whose parity is
    opposite to the ground state.
    """
    h = ham.matrix if isinstance(ham, Hamiltonian) else np.asarray(ham)
    if h.shape != parity.shape:
        raise ConfigError("Hamiltonian and parity operator dimensions differ")
    # diagonalizing inside each parity block keeps eigenvectors exact parity
    # eigenvectors even where levels of opposite parity are degenerate
    pdiag = np.real(np.diag(parity))
    if not np.allclose(parity, np.diag(np.diag(parity)), atol=0):
        raise ConfigError("parity operator must be diagonal in the product basis")
    dim = h.shape[0]
    energies = np.empty(dim)
    vectors = np.zeros((dim, dim), dtype=complex)
    labels = np.empty(dim)
    col = 0
    for p in (1.0, -1.0):
        idx = np.flatnonzero(np.isclose(pdiag, p))
        if idx.size == 0:
            continue
        w, v = np.linalg.eigh(h[np.ix_(idx, idx)])
        energies[col : col + idx.size] = w
        vectors[idx, col : col + idx.size] = v
        labels[col : col + idx.size] = p
        col += idx.size
    order = np.argsort(energies, kind="stable")
    energies, vectors = energies[order], vectors[:, order]

    pivot = np.argmax(np.abs(vectors), axis=0)
    phases = vectors[pivot, np.arange(dim)]
    vectors = vectors * (np.abs(phases) / phases)[None, :]

    par = np.real(np.einsum("ij,ik,kj->j", vectors.conj(), parity, vectors))
    if np.max(np.abs(np.abs(par) - 1.0)) > 1e-8:
        raise LabelingError("eigenvector is not a parity eigenstate")
    par = np.sign(par)

    gs = 0
    if dim > 1 and abs(energies[1] - energies[0]) < degeneracy_tol:
        raise LabelingError("ground state is degenerate; assign labels manually")
    odd = [k for k in range(1, dim) if par[k] != par[gs]]
    if len(odd) < 2:
        raise LabelingError("fewer than two states with parity opposite to the ground state")
    lp, up = odd[0], odd[1]
    for k in (lp, up):
        near = np.flatnonzero(np.abs(energies - energies[k]) < degeneracy_tol)
        if near.size > 1:
            raise LabelingError(
                f"eigenvalue {energies[k]:.12f} eV is degenerate within {degeneracy_tol:g} eV; "
                "LP/UP classification is ambiguous, assign labels manually"
            )
    return EigenBasis(energies, vectors, par, gs, lp, up)


@dataclass(frozen=True)
class DressedChannel:
    j: int
    k: int
    gamma_total: float
    contributions: dict
    gamma_radiative: float
    transition_energy: float
    photon_class: str = OTHER

    @property
    def phi_dominated(self) -> bool:
        return self.contributions["phi"] > 0.5 * self.gamma_total


@dataclass(frozen=True)
class DephasingOperator:
    """Diagonal jump operator sum_j d_j |j><j| (eigenbasis) with rate ``gamma``."""

    bath: str
    gamma: float
    diagonal: np.ndarray


@dataclass
class ChannelTable:
    basis: EigenBasis
    channels: list
    dephasing: list
    cutoff: float = 1e-12
    ceiling: float = np.inf
    diagonal_mode: str = "grouped"
    elements: dict = field(default_factory=dict, repr=False)

    def find(self, j: int, k: int):
        for ch in self.channels:
            if ch.j == j and ch.k == k:
                return ch
        return None

    def rate(self, j: int, k: int) -> float:
        ch = self.find(j, k)
        return 0.0 if ch is None else ch.gamma_total

    def total_decay(self, k: int) -> float:
        """Sum over j of Gamma_jk (transition channels only)."""
        return float(sum(ch.gamma_total for ch in self.channels if ch.k == k))

    def jump_operators(self):
        """(rate, eigenbasis matrix) pairs for every Lindblad term."""
        dim = self.basis.dim
        out = []
        for ch in self.channels:
            o = np.zeros((dim, dim), dtype=complex)
            o[ch.j, ch.k] = 1.0
            out.append((ch.gamma_total, o))
        for dp in self.dephasing:
            out.append((dp.gamma, np.diag(dp.diagonal).astype(complex)))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(
            ["j", "k", "E_j", "E_k", "transition_energy", "gamma_m_part", "gamma_e_part",
             "gamma_phi_part", "gamma_total", "gamma_radiative", "photon_class"]
        )
        e = self.basis.energies
        for ch in self.channels:
            c = ch.contributions
            writer.writerow(
                [ch.j, ch.k, repr(float(e[ch.j])), repr(float(e[ch.k])), repr(ch.transition_energy),
                 repr(c["m"]), repr(c["e"]), repr(c["phi"]), repr(ch.gamma_total),
                 repr(ch.gamma_radiative), ch.photon_class]
            )
        return buf.getvalue()


def bath_operators(ops: OperatorSet) -> dict:
    return {"m": ops.field, "e": ops.dipole, "phi": ops.exciton_number}


def bath_rates(cfg: SystemConfig) -> dict:
    return {"m": cfg.gamma_m, "e": cfg.gamma_e, "phi": cfg.gamma_phi}


def photon_class(j: int, k: int, basis: EigenBasis, energy_tol: float = 0.05) -> str:
    """Class of a photon radiated on k -> j.

    Of the two cascade transitions UP->LP and LP->GS the higher-energy one is
    the signal. When the two energies agree within ``energy_tol`` (eV) the
    UP->LP photon is the idler by convention.
    """
    gs, lp, up = basis.gs, basis.lp, basis.up
    if (j, k) == (gs, up):
        return PUMP
    if (j, k) not in ((lp, up), (gs, lp)):
        return OTHER
    e = basis.energies
    upper = e[up] - e[lp]
    lower = e[lp] - e[gs]
    if abs(upper - lower) <= energy_tol:
        return IDLER if (j, k) == (lp, up) else SIGNAL
    mine = upper if (j, k) == (lp, up) else lower
    other = lower if (j, k) == (lp, up) else upper
    return SIGNAL if mine > other else IDLER


def build_channels(
    basis: EigenBasis,
    cfg: SystemConfig,
    ops: OperatorSet,
    *,
    cutoff: float = 1e-12,
    ceiling_factor: float | None = 3.0,
    diagonal_mode: str = "grouped",
    energy_tol: float = 0.05,
) -> ChannelTable:
    """Dressed Lindblad channels Gamma_jk = sum_i Gamma_i |<j|o_i|k>|^2.

    Only eigenstates with E - E_GS <= ceiling_factor * (E_UP - E_GS) take part.
    Diagonal elements become one dephasing operator per bath (``grouped``),
    one channel per eigenstate (``independent``) or are dropped (``off``).
    """
    if ops.dim != basis.dim or cfg.dim != basis.dim:
        raise ConfigError("dimension mismatch between basis, config and operators")
    if diagonal_mode not in DIAGONAL_MODES:
        raise ConfigError(f"diagonal_mode must be one of {DIAGONAL_MODES}")
    e = basis.energies
    if ceiling_factor is None:
        ceiling = np.inf
    else:
        ceiling = e[basis.gs] + ceiling_factor * (e[basis.up] - e[basis.gs])
    active = np.flatnonzero(e <= ceiling + 1e-12)
    rates = bath_rates(cfg)
    elements = {name: basis.to_eigen(op) for name, op in bath_operators(ops).items()}
    weights = {name: np.abs(m) ** 2 for name, m in elements.items()}

    channels = []
    for kk in active:
        for jj in active:
            if jj >= kk:
                break
            parts = {name: rates[name] * float(weights[name][jj, kk]) for name in BATHS}
            total = parts["m"] + parts["e"] + parts["phi"]
            if total < cutoff:
                continue
            channels.append(
                DressedChannel(
                    j=int(jj), k=int(kk), gamma_total=total, contributions=parts,
                    gamma_radiative=cfg.r_m * parts["m"],
                    transition_energy=float(e[kk] - e[jj]),
                    photon_class=photon_class(int(jj), int(kk), basis, energy_tol),
                )
            )

    dephasing = []
    if diagonal_mode == "grouped":
        for name in BATHS:
            if rates[name] == 0:
                continue
            d = np.zeros(basis.dim)
            d[active] = np.real(np.diag(elements[name]))[active]
            if np.max(np.abs(d)) ** 2 * rates[name] < cutoff:
                continue
            dephasing.append(DephasingOperator(name, rates[name], d))
    elif diagonal_mode == "independent":
        for name in BATHS:
            diag = np.real(np.diag(elements[name]))
            for jj in active:
                rate = rates[name] * diag[jj] ** 2
                if rate < cutoff:
                    continue
                d = np.zeros(basis.dim)
                d[jj] = 1.0
                dephasing.append(DephasingOperator(f"{name}:{jj}", rate, d))
    return ChannelTable(basis, channels, dephasing, cutoff, float(ceiling), diagonal_mode, elements)


@dataclass(frozen=True)
class DriveOperator:
    """Lowering part X_b of b^dag + b in the eigenbasis and its sum with X_b^dag."""

    eigen: np.ndarray
    product: np.ndarray
    basis: EigenBasis = field(repr=False)

    @property
    def eigen_dag(self) -> np.ndarray:
        return self.eigen.conj().T

    @property
    def coupling_eigen(self) -> np.ndarray:
        """X_b + X_b^dag in the eigenbasis."""
        return self.eigen + self.eigen.conj().T

    @property
    def coupling_product(self) -> np.ndarray:
        return self.product + self.product.conj().T


def build_drive_operator(basis: EigenBasis, ops: OperatorSet) -> DriveOperator:
    """X_b = sum_{j<k} <j|b^dag + b|k> |j><k|, i.e. the energy-lowering part."""
    full = basis.to_eigen(ops.field)
    x = np.triu(full, k=1)
    return DriveOperator(eigen=x, product=basis.to_product(x), basis=basis)


@dataclass(frozen=True)
class EmissionModel:
    """Rules deciding whether a transition jump radiates a detectable photon.

    By default a jump on channel ``ch`` radiates through the boson mode with
    probability gamma_radiative / gamma_total. If ``dephasing_jump_emits_photon``
    is set, a jump whose rate is more than half pure-dephasing radiates with unit
    probability. ``unit_efficiency`` makes every transition jump radiate.
    """

    name: str = "default"
    dephasing_jump_emits_photon: bool = True
    unit_efficiency: bool = False

    def probability(self, ch: DressedChannel) -> float:
        if self.unit_efficiency:
            return 1.0
        if self.dephasing_jump_emits_photon and ch.phi_dominated:
            return 1.0
        if ch.gamma_total <= 0:
            return 0.0
        return min(1.0, ch.gamma_radiative / ch.gamma_total)

    def emission_rate(self, ch: DressedChannel) -> float:
        """Rate (eV) of photon-emitting jumps on ``ch``."""
        return self.probability(ch) * ch.gamma_total


EMISSION_MODELS = {
    "default": EmissionModel("default"),
    "boson-only": EmissionModel("boson-only", dephasing_jump_emits_photon=False),
    "transition": EmissionModel("transition", unit_efficiency=True),
}


def emission_model(name: str) -> EmissionModel:
    try:
        return EMISSION_MODELS[name]
    except KeyError:
        raise ConfigError(f"unknown emission model {name!r}; choose from {sorted(EMISSION_MODELS)}") from None
