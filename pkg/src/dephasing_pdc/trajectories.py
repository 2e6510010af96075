"""Monte Carlo wave-function unraveling of the dressed master equation.

The no-jump evolution uses the waiting-time formulation: an unnormalized state
is propagated under H_eff = H_sys + H_dr(t) - (i/2) sum Gamma o^dag o and a
jump fires when its squared norm falls below a uniform random threshold. In the
eigenbasis the anti-Hermitian part is diagonal, so outside the pulse window the
no-jump evolution is known in closed form and jump times are found by
bisection. Inside the window each step uses a fourth-order Magnus propagator.

Trajectory ``i`` of an ensemble draws from
``numpy.random.SeedSequence(master_seed, spawn_key=(i,))``; blocks of
trajectories are fixed by index, so results do not depend on the number of
worker processes.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .constants import HBAR
from .dressed import (IDLER, NONE, SIGNAL, ChannelTable, DriveOperator, EmissionModel,
                      photon_class)
from .dynamics import DriveConfig, _envelope_fn
from .model import ConfigError
from .spectra import YieldReport

JUMP_TIME_TOL = 1e-3  # fs
NORM_FLOOR = 1e-300
BLOCK_SIZE = 250


class TrajectoryError(RuntimeError):
    pass


@dataclass(frozen=True)
class JumpEvent:
    time: float
    channel: int
    j: int
    k: int
    emitted: bool
    energy: float
    photon_class: str = NONE


@dataclass
class TrajectoryRecord:
    events: list
    final_state: int
    seed: tuple
    trajectory_id: int = 0

    def count(self, cls: str) -> int:
        return sum(1 for ev in self.events if ev.emitted and ev.photon_class == cls)


@dataclass
class UnravelingSetup:
    """Everything a trajectory needs, precomputed once per ensemble."""

    energies: np.ndarray
    decay: np.ndarray  # diagonal of sum Gamma o^dag o (eV)
    chan_j: np.ndarray
    chan_k: np.ndarray
    chan_rate: np.ndarray
    chan_energy: np.ndarray
    chan_class: list
    channels: list
    deph_rate: np.ndarray
    deph_diag: np.ndarray  # (n_deph, D)
    coupling: np.ndarray  # kappa * (X + X^dag), eigenbasis (eV)
    drive: DriveConfig
    t_start: float
    t_end: float
    step: float
    w0: float
    n_steps: int
    step_props: np.ndarray = field(repr=False)
    out_times: np.ndarray = None
    gs: int = 0
    lp: int = 1
    up: int = 2

    @property
    def dim(self) -> int:
        return self.energies.size

    @property
    def w1(self) -> float:
        return self.w0 + self.n_steps * self.step

    def __getstate__(self):
        # the cached envelope is a closure; workers rebuild it on first use
        return {k: v for k, v in self.__dict__.items() if not k.startswith("_")}

    def magnus(self, t: float, s: float) -> np.ndarray:
        """Fourth-order Magnus propagator of the no-jump evolution over [t, t+s]."""
        if not hasattr(self, "_alpha"):
            self._alpha = -1j * (self.energies - 0.5j * self.decay) / HBAR
            self._beta = -1j * self.coupling / HBAR
            a = np.diag(self._alpha)
            self._comm = self._beta @ a - a @ self._beta
            self._envelope = _envelope_fn(self.drive)
        c = math.sqrt(3.0) / 6.0
        f1 = self._envelope(t + (0.5 - c) * s)
        f2 = self._envelope(t + (0.5 + c) * s)
        omega = (0.5 * s * (f1 + f2)) * self._beta
        omega += (math.sqrt(3.0) / 12.0 * s * s * (f2 - f1)) * self._comm
        omega[np.diag_indices_from(omega)] += s * self._alpha
        return expm(omega)

    def free_factor(self, dt):
        """Closed-form no-jump amplitude factors outside the pulse window."""
        return np.exp((-1j * self.energies - 0.5 * self.decay) * np.asarray(dt)[..., None] / HBAR)


def prepare_unraveling(
    table: ChannelTable,
    X: DriveOperator,
    drive: DriveConfig,
    t_start: float,
    t_end: float,
    step: float = 0.05,
    out_times=None,
    shift_dephasing: bool = True,
) -> UnravelingSetup:
    """Precompute channel arrays and the pulse-window step propagators.

    With ``shift_dephasing`` each grouped dephasing operator is shifted by its
    ground-state element times the identity. The master equation is unchanged
    by that shift while the polariton ground state becomes jump free.
    """
    basis = table.basis
    if drive.carrier == "auto":
        drive = drive.resolve(basis)
    d = basis.dim
    channels = list(table.channels)
    chan_j = np.array([c.j for c in channels], dtype=int)
    chan_k = np.array([c.k for c in channels], dtype=int)
    chan_rate = np.array([c.gamma_total for c in channels])
    decay = np.zeros(d)
    np.add.at(decay, chan_k, chan_rate)
    deph_rate, deph_diag = [], []
    for dp in table.dephasing:
        diag = dp.diagonal.astype(float).copy()
        if shift_dephasing and table.diagonal_mode == "grouped":
            diag -= diag[basis.gs]
        deph_rate.append(dp.gamma)
        deph_diag.append(diag)
        decay += dp.gamma * diag**2
    deph_rate = np.array(deph_rate)
    deph_diag = np.array(deph_diag).reshape(len(deph_rate), d)

    if drive.kappa > 0:
        w0, w1 = drive.window()
        w0 = max(w0, t_start)
        w0 = t_start + math.floor((w0 - t_start) / step + 1e-9) * step
        w1 = min(w1, t_end)
        n_steps = max(0, math.ceil((w1 - w0) / step - 1e-9))
    else:
        w0, n_steps = t_start, 0
    setup = UnravelingSetup(
        energies=basis.energies.copy(), decay=decay, chan_j=chan_j, chan_k=chan_k,
        chan_rate=chan_rate, chan_energy=np.array([c.transition_energy for c in channels]),
        chan_class=[c.photon_class for c in channels], channels=channels,
        deph_rate=deph_rate, deph_diag=deph_diag, coupling=drive.kappa * X.coupling_eigen,
        drive=drive, t_start=float(t_start), t_end=float(t_end), step=float(step), w0=float(w0),
        n_steps=int(n_steps), step_props=np.empty((0, d, d), dtype=complex),
        gs=basis.gs, lp=basis.lp, up=basis.up,
    )
    setup.step_props = np.array([setup.magnus(w0 + n * step, step) for n in range(n_steps)]).reshape(n_steps, d, d)
    if out_times is None:
        out_times = np.empty(0)
    out_times = np.asarray(out_times, dtype=float)
    inside = (out_times >= setup.w0) & (out_times <= setup.w1)
    if np.any(inside):
        idx = (out_times[inside] - setup.w0) / step
        if np.max(np.abs(idx - np.rint(idx))) > 1e-6:
            raise ConfigError("output times inside the pulse window must fall on step boundaries")
    setup.out_times = out_times
    return setup


class _Walker:
    """State of one block of trajectories."""

    def __init__(self, setup: UnravelingSetup, emission: EmissionModel, seeds, psi0, ids):
        self.s = setup
        self.emission = emission
        self.ids = list(ids)
        self.rngs = [np.random.default_rng(sq) for sq in seeds]
        self.seeds = [tuple(sq.spawn_key) + (sq.entropy,) for sq in seeds]
        n = len(seeds)
        self.psi = np.tile(np.asarray(psi0, dtype=complex), (n, 1))
        self.psi /= np.linalg.norm(self.psi, axis=1, keepdims=True)
        self.r = np.array([rng.random() for rng in self.rngs])
        self.events = [[] for _ in range(n)]
        self.pop_sum = np.zeros((setup.out_times.size, setup.dim))
        self.emit_prob = np.array([emission.probability(c) for c in setup.channels])

    # -- jumps -----------------------------------------------------------
    def jump(self, i: int, t: float, psi: np.ndarray) -> np.ndarray:
        s = self.s
        rng = self.rngs[i]
        amp2 = np.abs(psi) ** 2
        p_trans = s.chan_rate * amp2[s.chan_k]
        p_deph = s.deph_rate * (s.deph_diag**2 @ amp2) if s.deph_rate.size else np.empty(0)
        weights = np.concatenate([p_trans, p_deph])
        total = weights.sum()
        if not total > 0:
            raise TrajectoryError(f"jump requested at t={t:.3f} fs but all jump rates vanish")
        u = rng.random() * total
        c = int(np.searchsorted(np.cumsum(weights), u, side="right"))
        c = min(c, weights.size - 1)
        if c < p_trans.size:
            emitted = bool(rng.random() < self.emit_prob[c])
            new = np.zeros_like(psi)
            new[s.chan_j[c]] = 1.0
            cls = s.chan_class[c] if emitted else NONE
            self.events[i].append(JumpEvent(t, c, int(s.chan_j[c]), int(s.chan_k[c]), emitted,
                                            float(s.chan_energy[c]), cls))
        else:
            q = c - p_trans.size
            new = s.deph_diag[q] * psi
            new /= np.linalg.norm(new)
            self.events[i].append(JumpEvent(t, c, -1, -1, False, 0.0, NONE))
        self.r[i] = rng.random()
        return new

    # -- population bookkeeping -----------------------------------------
    def record_free(self, i, t_a, t_b, psi, lo, hi, closed):
        """Accumulate normalized populations at output times in [t_a, t_b)."""
        ts = self.s.out_times[lo:hi]
        sel = (ts >= t_a) & ((ts <= t_b) if closed else (ts < t_b))
        if not np.any(sel):
            return
        idx = np.flatnonzero(sel) + lo
        dt = self.s.out_times[idx] - t_a
        pops = np.abs(psi[None, :]) ** 2 * np.exp(-self.s.decay[None, :] * dt[:, None] / HBAR)
        self.pop_sum[idx] += pops / pops.sum(axis=1, keepdims=True)

    # -- phases ----------------------------------------------------------
    def free_phase(self, t_from: float, t_to: float, lo: int, hi: int, last: bool):
        """Closed-form no-jump evolution with bisected jump times."""
        s = self.s
        n = self.psi.shape[0]
        t_a = np.full(n, t_from)
        active = np.ones(n, dtype=bool)
        while np.any(active):
            idx = np.flatnonzero(active)
            amp2 = np.abs(self.psi[idx]) ** 2
            span = t_to - t_a[idx]
            norm_end = (amp2 * np.exp(-s.decay[None, :] * span[:, None] / HBAR)).sum(axis=1)
            jumps = norm_end < self.r[idx]
            for i in idx[~jumps]:
                self.record_free(i, t_a[i], t_to, self.psi[i], lo, hi, closed=last)
                self.psi[i] *= s.free_factor(t_to - t_a[i])
                active[i] = False
            if not np.any(jumps):
                break
            jdx = idx[jumps]
            a2 = amp2[jumps]
            lo_t = np.zeros(jdx.size)
            hi_t = span[jumps].copy()
            thr = self.r[jdx]
            while np.max(hi_t - lo_t) > JUMP_TIME_TOL:
                mid = 0.5 * (lo_t + hi_t)
                nm = (a2 * np.exp(-s.decay[None, :] * mid[:, None] / HBAR)).sum(axis=1)
                above = nm >= thr
                lo_t = np.where(above, mid, lo_t)
                hi_t = np.where(above, hi_t, mid)
            for i, dt in zip(jdx, hi_t):
                t_jump = t_a[i] + dt
                self.record_free(i, t_a[i], t_jump, self.psi[i], lo, hi, closed=False)
                psi_j = self.psi[i] * s.free_factor(dt)
                if np.sum(np.abs(psi_j) ** 2) < NORM_FLOOR:
                    raise TrajectoryError("norm underflow without a resolved jump")
                self.psi[i] = self.jump(i, t_jump, psi_j)
                t_a[i] = t_jump

    def _jump_time(self, i: int, t_a: float, span: float, psi: np.ndarray, log_end: float) -> float:
        """Offset in (0, span] where log|psi|^2 crosses log r (Illinois regula falsi)."""
        target = math.log(self.r[i])
        g_lo, g_hi = math.log(np.sum(np.abs(psi) ** 2)) - target, log_end - target
        lo, hi = 0.0, span
        side = 0
        while hi - lo > JUMP_TIME_TOL:
            s = lo + (hi - lo) * g_lo / (g_lo - g_hi)
            s = min(max(s, lo + 0.1 * JUMP_TIME_TOL), hi - 0.1 * JUMP_TIME_TOL)
            g = math.log(np.sum(np.abs(self.s.magnus(t_a, s) @ psi) ** 2)) - target
            if g >= 0:
                lo, g_lo = s, g
                if side == -1:
                    g_hi *= 0.5
                side = -1
            else:
                hi, g_hi = s, g
                if side == 1:
                    g_lo *= 0.5
                side = 1
            # the crossing is pinned once the secant step is below tolerance
            slope = (g_hi - g_lo) / (hi - lo)
            if abs(g) < abs(slope) * 0.5 * JUMP_TIME_TOL:
                return s if g < 0 else min(s + 0.5 * JUMP_TIME_TOL, hi)
        return hi

    def _substep_jumps(self, i: int, t_a: float, t_b: float, psi: np.ndarray, full: np.ndarray) -> np.ndarray:
        """Resolve one or more jumps of trajectory i inside a window step."""
        s = self.s
        while True:
            norm_end = np.sum(np.abs(full) ** 2)
            if norm_end >= self.r[i]:
                return full
            if norm_end < NORM_FLOOR:
                raise TrajectoryError("norm underflow without a resolved jump")
            dt = self._jump_time(i, t_a, t_b - t_a, psi, math.log(norm_end))
            psi_j = s.magnus(t_a, dt) @ psi if dt < t_b - t_a else full
            psi = self.jump(i, t_a + dt, psi_j)
            t_a = t_a + dt
            if t_b - t_a <= 1e-12:
                return psi
            full = s.magnus(t_a, t_b - t_a) @ psi

    def window_phase(self, lo: int, hi: int):
        s = self.s
        ts = s.out_times[lo:hi]
        rec = {int(round((t - s.w0) / s.step)): lo + m for m, t in enumerate(ts)}
        if 0 in rec:
            self._record_all(rec[0])
        for n in range(s.n_steps):
            prev = self.psi
            new = prev @ s.step_props[n].T
            norms = np.sum(np.abs(new) ** 2, axis=1)
            for i in np.flatnonzero(norms < self.r):
                t_n = s.w0 + n * s.step
                new[i] = self._substep_jumps(i, t_n, t_n + s.step, prev[i], new[i])
            self.psi = new
            if n + 1 in rec:
                self._record_all(rec[n + 1])

    def _record_all(self, m: int):
        p = np.abs(self.psi) ** 2
        self.pop_sum[m] += (p / p.sum(axis=1, keepdims=True)).sum(axis=0)

    def run(self):
        s = self.s
        t = s.out_times
        i_w0 = int(np.searchsorted(t, s.w0 - 1e-9, side="left"))
        i_w1 = int(np.searchsorted(t, s.w1 + 1e-9, side="right"))
        if s.n_steps > 0:
            self.free_phase(s.t_start, s.w0, 0, i_w0, last=False)
            self.window_phase(i_w0, i_w1)
            self.free_phase(s.w1, s.t_end, i_w1, t.size, last=True)
        else:
            self.free_phase(s.t_start, s.t_end, 0, t.size, last=True)
        records = []
        for i in range(len(self.ids)):
            final = int(np.argmax(np.abs(self.psi[i]) ** 2))
            records.append(TrajectoryRecord(self.events[i], final, self.seeds[i], self.ids[i]))
        return records, self.pop_sum


def trajectory_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master_seed, spawn_key=(index,))


def _initial(setup: UnravelingSetup, psi0):
    if psi0 is None:
        psi0 = np.zeros(setup.dim, dtype=complex)
        psi0[setup.gs] = 1.0
    psi0 = np.asarray(psi0, dtype=complex)
    if psi0.shape != (setup.dim,) or not np.isclose(np.linalg.norm(psi0), 1.0, atol=1e-10):
        raise ConfigError("initial state must be a normalized eigenbasis vector")
    return psi0


def run_trajectory(setup: UnravelingSetup, seed, emission: EmissionModel | None = None, psi0=None,
                   trajectory_id: int = 0) -> TrajectoryRecord:
    """One stochastic trajectory; ``seed`` is an int or a SeedSequence."""
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    walker = _Walker(setup, emission or EmissionModel(), [seed], _initial(setup, psi0), [trajectory_id])
    records, _ = walker.run()
    return records[0]


def _run_block(args):
    setup, emission, psi0, master_seed, ids = args
    seeds = [trajectory_seed(master_seed, i) for i in ids]
    return _Walker(setup, emission, seeds, psi0, ids).run()


@dataclass
class EnsembleResult:
    records: list
    out_times: np.ndarray
    populations: np.ndarray
    n_traj: int
    master_seed: int
    emission: EmissionModel


def run_ensemble(
    setup: UnravelingSetup,
    n_traj: int,
    master_seed: int,
    emission: EmissionModel | None = None,
    psi0=None,
    workers: int = 1,
    block_size: int = BLOCK_SIZE,
) -> EnsembleResult:
    """Independent trajectories with deterministic per-index seeding."""
    if n_traj < 1:
        raise ConfigError("n_traj must be >= 1")
    emission = emission or EmissionModel()
    psi0 = _initial(setup, psi0)
    blocks = [range(a, min(a + block_size, n_traj)) for a in range(0, n_traj, block_size)]
    jobs = [(setup, emission, psi0, master_seed, list(b)) for b in blocks]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_block, jobs))
    else:
        results = [_run_block(job) for job in jobs]
    records = [rec for recs, _ in results for rec in recs]
    stacked = np.stack([pops for _, pops in results])
    total = np.array([[math.fsum(stacked[:, m, k]) for k in range(stacked.shape[2])]
                      for m in range(stacked.shape[1])]).reshape(stacked.shape[1:])
    return EnsembleResult(records, setup.out_times, total / n_traj, n_traj, master_seed, emission)


def classify_photons(records, table: ChannelTable, energy_tol: float = 0.05):
    """Fill photon classes from the cascade rule; returns new records."""
    basis = table.basis
    out = []
    for rec in records:
        events = []
        for ev in rec.events:
            cls = photon_class(ev.j, ev.k, basis, energy_tol) if (ev.emitted and ev.j >= 0) else NONE
            events.append(JumpEvent(ev.time, ev.channel, ev.j, ev.k, ev.emitted, ev.energy, cls))
        out.append(TrajectoryRecord(events, rec.final_state, rec.seed, rec.trajectory_id))
    return out


def _binomial(hits: int, n: int):
    if n == 0:
        return None, None
    p = hits / n
    return p, math.sqrt(p * (1 - p) / n)


def pair_statistics(records, n_in: float, emission: EmissionModel | None = None) -> YieldReport:
    """Photon counts, pair yield and heralding confidences per injected photon."""
    if not n_in > 0:
        raise ConfigError("N_in must be positive")
    n = len(records)
    sig = np.array([r.count(SIGNAL) for r in records])
    idl = np.array([r.count(IDLER) for r in records])
    has_s = sig > 0
    has_i = idl > 0
    pair = has_s & has_i
    p_pair, e_pair = _binomial(int(pair.sum()), n)
    c_is, e_is = _binomial(int(pair.sum()), int(has_s.sum()))
    c_si, e_si = _binomial(int(pair.sum()), int(has_i.sum()))

    def mean_err(x):
        return math.fsum(x.tolist()) / n, (float(np.std(x, ddof=1)) / math.sqrt(n) if n > 1 else 0.0)

    ms, es = mean_err(sig)
    mi, ei = mean_err(idl)
    return YieldReport(
        n_in=float(n_in), n_signal=ms / n_in, n_idler=mi / n_in, y_pair=p_pair / n_in,
        c_idler_given_signal=c_is, c_signal_given_idler=c_si,
        emission_model=(emission.name if emission else "default"), n_traj=n,
        errors={"n_signal": es / n_in, "n_idler": ei / n_in, "y_pair": e_pair / n_in,
                "c_idler_given_signal": e_is, "c_signal_given_idler": e_si},
    )


def jumps_csv(records) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["trajectory", "time_fs", "j", "k", "transition_energy", "emitted", "class"])
    for rec in records:
        for ev in rec.events:
            writer.writerow([rec.trajectory_id, repr(ev.time), ev.j, ev.k, repr(ev.energy),
                             int(ev.emitted), ev.photon_class])
    return buf.getvalue()
