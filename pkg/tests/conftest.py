from dataclasses import dataclass

import numpy as np
import pytest

from dephasing_pdc.dressed import build_channels, build_drive_operator, diagonalize
from dephasing_pdc.dynamics import DriveConfig, build_generator
from dephasing_pdc.model import SystemConfig, build_hamiltonian, build_operators, parity_operator
from dephasing_pdc.scenarios import PRESETS


@dataclass
class Model:
    cfg: SystemConfig
    ops: object
    ham: object
    parity: np.ndarray
    basis: object
    table: object
    X: object
    gen: object
    drive: DriveConfig


def make_model(cfg: SystemConfig, kappa: float = 0.0, diagonal_mode: str = "grouped", **drive_kw) -> Model:
    ops = build_operators(cfg.n_max)
    ham = build_hamiltonian(cfg, ops)
    par = parity_operator(ops)
    basis = diagonalize(ham, par)
    table = build_channels(basis, cfg, ops, diagonal_mode=diagonal_mode)
    X = build_drive_operator(basis, ops)
    drive = DriveConfig(kappa, **drive_kw).resolve(basis)
    return Model(cfg, ops, ham, par, basis, table, X, build_generator(table), drive)


def preset_model(name: str, gamma_phi: float = 0.0, n_max: int | None = None, **kw) -> Model:
    p = PRESETS[name]
    cfg = p.system.with_(gamma_phi=gamma_phi)
    if n_max is not None:
        cfg = cfg.with_(n_max=n_max)
    return make_model(cfg, p.drive.kappa, **kw)


@pytest.fixture(scope="session")
def deg94():
    return preset_model("degenerate", 0.094)


@pytest.fixture(scope="session")
def deg0():
    return preset_model("degenerate", 0.0)


@pytest.fixture(scope="session")
def nondeg94():
    return preset_model("nondegenerate", 0.094)


@pytest.fixture(scope="session")
def nondeg0():
    return preset_model("nondegenerate", 0.0)


def bare_boson(n_max: int = 6, gamma_m: float = 0.075, r_m: float = 1.0) -> Model:
    """g = 0 with only boson loss: a damped harmonic mode next to an idle TLS."""
    return make_model(SystemConfig(1.6, 2.9, g=0.0, gamma_m=gamma_m, r_m=r_m, n_max=n_max))


# --- shared expensive computations ------------------------------------------------

SWEEP5 = (0.0, 0.0235, 0.047, 0.0705, 0.094)


@pytest.fixture(scope="session")
def degenerate_spectra():
    """Emission spectra of the degenerate preset at five dephasing strengths."""
    out = {}
    for g in SWEEP5:
        m = preset_model("degenerate", g)
        out[g] = _spectrum(m)
    return out


def _spectrum(m):
    from dephasing_pdc.dynamics import SimGrid, propagate
    from dephasing_pdc.spectra import default_tau_step, emission_spectrum, t_grid_for, two_time_correlator

    grid = SimGrid()
    tau = default_tau_step(m.basis)
    w1 = m.drive.window()[1]
    pulse = t_grid_for(m.drive, w1, grid.t_start, grid.t_end_cap, m.table, tau)
    prop = propagate(None, m.gen, m.drive, m.X, grid, sample_times=pulse[pulse < w1])
    tg = t_grid_for(m.drive, prop.window[1], grid.t_start, prop.t_end, m.table, tau)
    prop = prop.with_samples(tg[tg >= prop.window[1]], m.gen)
    corr = two_time_correlator(prop, m.gen, m.X, tg, tau, table=m.table)
    return prop, corr, emission_spectrum(corr, m.cfg.r_m, m.cfg.gamma_m)


@pytest.fixture(scope="session")
def nondegenerate_spectrum94(nondeg94):
    return _spectrum(nondeg94)


# --- acceptance summary -------------------------------------------------------------

ACCEPTANCE = {}


def record_acceptance(number: int, ok: bool, detail: str) -> bool:
    """Store one verdict line per criterion; printed at the end of the session."""
    line = f"ACCEPTANCE {number:2d} {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
