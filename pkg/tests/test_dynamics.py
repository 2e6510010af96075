import csv
import io
import math

import numpy as np
import pytest
from scipy.integrate import quad

from conftest import bare_boson, preset_model
from dephasing_pdc.constants import HBAR
from dephasing_pdc.dynamics import (DensityMatrixState, DriveConfig, IntegrationError, SimGrid, check_state,
                                    decay_time_bound, field_envelope, ground_state, propagate, pulse_envelope)
from dephasing_pdc.model import ConfigError


def test_pulse_peak_and_halfwidth():
    d = DriveConfig(0.1, carrier=3.0)
    assert pulse_envelope(100.0, d) == pytest.approx(1.0)
    intensity = field_envelope(np.array([90.0, 110.0]), d) ** 2
    assert np.allclose(intensity, 0.5)


def test_pulse_energy_integral():
    d = DriveConfig(0.1, carrier=3.0)
    val, _ = quad(lambda t: float(field_envelope(t, d)) ** 2, -100, 300, points=[100.0])
    assert val == pytest.approx(20.0 * math.sqrt(math.pi / (4 * math.log(2))), rel=1e-10)


def test_auto_carrier_must_be_resolved(deg0):
    with pytest.raises(ConfigError):
        pulse_envelope(0.0, DriveConfig(0.1))
    assert DriveConfig(0.1).resolve(deg0.basis).carrier == pytest.approx(deg0.basis.pump_energy)


def test_drive_and_grid_validation():
    with pytest.raises(ConfigError):
        DriveConfig(-0.1)
    with pytest.raises(ConfigError):
        DriveConfig(0.1, fwhm_intensity=0.0)
    with pytest.raises(ConfigError):
        SimGrid(t_start=10.0, t_end=5.0)
    with pytest.raises(ConfigError):
        SimGrid(t_start=80.0).check_drive(DriveConfig(0.1, carrier=1.0))


def test_ground_state_fixed_point(deg94):
    rho = ground_state(deg94.basis).rho
    assert np.max(np.abs(deg94.gen.apply(rho))) < 1e-12
    assert np.max(np.abs(deg94.gen.matrix() @ rho.reshape(-1))) < 1e-12


def test_generator_trace_free(deg94):
    rng = np.random.default_rng(3)
    d = deg94.basis.dim
    for _ in range(100):
        a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        rho = a + a.conj().T
        assert abs(np.trace(deg94.gen.apply(rho))) < 1e-12


def test_matrix_free_matches_superoperator(deg94):
    rng = np.random.default_rng(5)
    d = deg94.basis.dim
    rho = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    sup = deg94.gen.matrix()
    assert np.allclose(sup @ rho.reshape(-1), deg94.gen.apply(rho).reshape(-1), atol=1e-12)


def test_exact_free_evolution_matches_expm(deg94):
    from scipy.linalg import expm
    m = preset_model("degenerate", 0.094, n_max=4)
    rng = np.random.default_rng(1)
    d = m.basis.dim
    rho = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    ref = expm(m.gen.matrix() * 7.3) @ rho.reshape(-1)
    assert np.allclose(m.gen.evolve_free(rho, 7.3).reshape(-1), ref, atol=1e-12)


def test_stationary_without_drive(deg94):
    gen = deg94.gen
    res = propagate(None, gen, DriveConfig(0.0).resolve(deg94.basis), deg94.X, SimGrid(t_end=300.0))
    assert np.max(np.abs(res.states - res.states[0])) < 1e-10


def test_damped_boson_decay():
    m = bare_boson(n_max=6)
    b = m.basis
    rho0 = np.zeros((b.dim, b.dim), dtype=complex)
    k2 = int(np.argmax(np.abs(b.vectors[4])))  # |2,->
    rho0[k2, k2] = 1.0
    res = propagate(DensityMatrixState(rho0, 0.0), m.gen, DriveConfig(0.0).resolve(b), m.X,
                    SimGrid(t_end=60.0, dt_out=0.5, auto_extend=False))
    num = b.to_eigen(m.ops.b_dag @ m.ops.b)
    n_t = np.real(np.einsum("ij,tji->t", num, res.states))
    expect = 2.0 * np.exp(-0.075 * res.times / HBAR)
    assert np.max(np.abs(n_t - expect) / expect) < 1e-8


@pytest.fixture(scope="module")
def driven(deg94):
    return propagate(None, deg94.gen, deg94.drive, deg94.X, SimGrid(t_end=600.0, dt_out=0.5))


def test_propagation_validity(driven):
    tr = np.real(np.einsum("tkk->t", driven.states))
    assert np.max(np.abs(tr - 1)) < 1e-8
    herm = np.max(np.abs(driven.states - np.conj(np.transpose(driven.states, (0, 2, 1)))))
    assert herm < 1e-8
    for i in np.linspace(0, len(driven.times) - 1, 10).astype(int):
        assert np.linalg.eigvalsh(driven.states[i]).min() > -1e-8


def test_up_decay_rate(deg94, driven):
    b = deg94.basis
    w1 = driven.window[1]
    sel = (driven.times > w1 + 20) & (driven.times < w1 + 60)
    up = driven.populations[sel, b.up]
    assert np.all(up > 0)
    slope = np.polyfit(driven.times[sel], np.log(up), 1)[0]
    expected = deg94.table.total_decay(b.up) / HBAR
    assert -slope == pytest.approx(expected, rel=0.05)


def test_decay_time_bound(deg94):
    t_end = decay_time_bound(deg94.table, deg94.drive)
    res = propagate(None, deg94.gen, deg94.drive, deg94.X, SimGrid(t_end=t_end, dt_out=5.0, auto_extend=False))
    assert res.excited_population()[-1] < 1e-4


def test_auto_extension(deg94):
    res = propagate(None, deg94.gen, deg94.drive, deg94.X, SimGrid(t_end=200.0, dt_out=5.0))
    assert res.t_end > 200.0
    assert res.excited_population()[-1] < 1e-4
    assert res.t_end <= 5000.0


def test_tolerance_halving(deg94):
    a = propagate(None, deg94.gen, deg94.drive, deg94.X, SimGrid(t_end=300.0, dt_out=2.0, auto_extend=False))
    b = propagate(None, deg94.gen, deg94.drive, deg94.X,
                  SimGrid(t_end=300.0, dt_out=2.0, auto_extend=False, max_step=0.05, rtol=1e-11, atol=1e-13))
    assert np.max(np.abs(a.populations - b.populations)) < 1e-7


def test_perturbative_quadratic_scaling(deg94):
    from dataclasses import replace
    grid = SimGrid(t_end=200.0, dt_out=1.0, auto_extend=False, rtol=1e-12, atol=1e-16)
    pops = []
    for kappa in (0.26e-3, 0.52e-3):
        res = propagate(None, deg94.gen, replace(deg94.drive, kappa=kappa), deg94.X, grid)
        pops.append(res.populations[-1, deg94.basis.up])
    assert pops[1] / pops[0] == pytest.approx(4.0, rel=0.01)


def test_energy_balance_and_integrals(deg94, driven):
    from dephasing_pdc.spectra import energy_balance_residual
    assert energy_balance_residual(driven, deg94.table) < 1e-6
    assert np.all(driven.population_integrals >= -1e-12)


def test_timeseries_csv(driven):
    rows = list(csv.reader(io.StringIO(driven.to_csv())))
    assert rows[0] == ["t_fs", "pop_GS", "pop_LP", "pop_UP", "pop_other", "trace", "drive"]
    assert len(rows) == len(driven.times) + 1
    assert float(rows[1][5]) == pytest.approx(1.0)


def test_with_samples_exact(deg94, driven):
    t = np.array([driven.window[1] + 13.37])
    ext = driven.with_samples(t, deg94.gen)
    ref = propagate(None, deg94.gen, deg94.drive, deg94.X, SimGrid(t_end=600.0, dt_out=0.5), sample_times=t)
    assert np.max(np.abs(ext.state_at(t[0]) - ref.state_at(t[0]))) < 1e-9
    with pytest.raises(ConfigError):
        driven.with_samples(np.array([50.1]), deg94.gen)


def test_check_state_rejects_bad_trace():
    with pytest.raises(IntegrationError):
        check_state(np.diag([0.5, 0.4]).astype(complex), 0.0)
    with pytest.raises(IntegrationError):
        check_state(np.array([[1.0, 0.1], [0.3, 0.0]], dtype=complex), 0.0)
