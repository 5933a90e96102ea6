"""Discrete truncated Wigner approximation.

Each trajectory starts from a random discrete spin configuration: the
component along the initial mean direction is +1/2 deterministically and the
two transverse components are fair draws from {-1/2, +1/2}, which reproduces
the first and second moments of a spin-1/2 coherent state.  Trajectories
evolve under the per-spin semiclassical equations (with stochastic photon
quadratures when the photon mode is retained) and observables are averaged
over trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .drive import DisorderRealization, split_seed
from .integrate import (
    DEFAULT_ODE_STEPS_PER_PERIOD,
    DEFAULT_SDE_STEPS_PER_PERIOD,
    IntegrationDivergedError,
    TrajectorySeries,
    build_event_schedule,
    drive_args,
    kernel_args,
)
from .models import (
    InitialStateSpec,
    MeanFieldBroken,
    ModelKind,
    ModelParams,
    mean_direction,
    steady_state,
)

#: trajectories per reduction block; fixed so ensemble averages are
#: bit-reproducible regardless of how work is scheduled
BATCH = 128


@dataclass
class SpinEnsemble:
    """Initial condition of a single trajectory.

    ``spins`` has shape (3, N) with components in {-1/2, +1/2}; the photon
    quadratures are in unrescaled units (mean amplitude ~ sqrt(N) * a).
    """

    spins: np.ndarray
    a_r: float
    a_i: float
    seed: int

    @property
    def n_spins(self) -> int:
        return self.spins.shape[1]


def _frame(direction: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    e1 = direction / np.linalg.norm(direction)
    ref = np.array([0.0, 0.0, 1.0]) if abs(e1[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e2 = np.cross(ref, e1)
    e2 /= np.linalg.norm(e2)
    e3 = np.cross(e1, e2)
    return e1, e2, e3


def sample_initial(
    spec: InitialStateSpec,
    n_spins: int,
    seed: int,
    photon: bool = False,
    antithetic: bool = False,
) -> SpinEnsemble:
    """Draw the discrete initial configuration of one trajectory.

    The sampling frame is rotated so the deterministic +1/2 axis points
    along the spec's mean direction, preserving exact first moments.  With
    ``antithetic`` the transverse draws are negated, which is measure
    preserving; pairing each trajectory with its antithetic twin cancels the
    transverse sampling noise of the ensemble mean exactly.  The photon
    quadratures start at the spec's seed amplitude; quantum noise enters
    through the stochastic evolution, not the initial condition.
    """
    if n_spins < 1:
        raise ValueError("n_spins must be >= 1")
    e1, e2, e3 = _frame(mean_direction(spec))
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    xi = rng.integers(0, 2, size=(2, n_spins)) - 0.5
    if antithetic:
        xi = -xi
    spins = 0.5 * e1[:, None] + xi[0] * e2[:, None] + xi[1] * e3[:, None]
    a_r = a_i = 0.0
    if photon:
        a0 = spec.a0
        if a0 is None:
            # broken-state specs default to the stationary amplitude, which
            # depends on the model; for sampling purposes the caller passes a
            # resolved spec, so None only happens for photonless runs
            raise ValueError("spec must carry a resolved photon amplitude for photon runs")
        amp = complex(a0) * math.sqrt(n_spins)
        a_r, a_i = amp.real, amp.imag
    return SpinEnsemble(spins=spins, a_r=a_r, a_i=a_i, seed=seed)


def _resolve_photon_spec(spec: InitialStateSpec, params: ModelParams) -> InitialStateSpec:
    """Fill in the default photon amplitude of a broken-state spec."""
    if isinstance(spec, MeanFieldBroken) and spec.a0 is None:
        ss = steady_state(params, spec.lam_ref, spec.branch)
        return replace(spec, a0=ss.a)
    return spec


def evolve_dtwa(
    params: ModelParams,
    spec: InitialStateSpec,
    n_spins: int,
    n_traj: int,
    horizon: float,
    seed: int,
    *,
    realization: DisorderRealization | None = None,
    dt: float | None = None,
    samples_per_period: int = 32,
    meta: dict | None = None,
) -> TrajectorySeries:
    """Trajectory-averaged observables with per-sample standard errors.

    Trajectory ``2k`` is seeded with ``split_seed(seed, 2k)`` and trajectory
    ``2k + 1`` is its antithetic twin (same seed, negated transverse draws),
    so the transverse sampling noise of the mean cancels exactly for even
    ``n_traj``.  Averaging uses numpy's pairwise summation inside fixed-size
    blocks combined in index order, so results do not depend on scheduling.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    kind = params.kind
    protocol = params.drive
    Td = protocol.period
    if dt is None:
        steps = (DEFAULT_SDE_STEPS_PER_PERIOD if kind is ModelKind.DM
                 else DEFAULT_ODE_STEPS_PER_PERIOD)
        dt = Td / steps
    ev, ev_r, flags, n_samp = build_event_schedule(
        protocol, horizon, samples_per_period, realization)
    mode, lam0, fd, omd = drive_args(protocol)
    kind_code, om0, omp, kap, lam_cr, c2 = kernel_args(params)
    photon = kind is ModelKind.DM
    spec = _resolve_photon_spec(spec, params) if photon else spec

    n_obs = 5 if photon else 3
    total = np.zeros((n_samp, n_obs))
    total_sq = np.zeros((n_samp, n_obs))

    if photon:
        noise_amp = math.sqrt(kap / 2.0)
        sqrt_n = math.sqrt(n_spins)
        n_steps = _kernels.count_substeps(ev, dt)
        out = np.empty((n_samp, 5))
        block = np.empty((BATCH, n_samp, 5))
        filled = 0
        for i in range(n_traj):
            ens = sample_initial(spec, n_spins, split_seed(seed, i - i % 2),
                                 photon=True, antithetic=bool(i % 2))
            state = np.concatenate([[ens.a_r, ens.a_i],
                                    ens.spins[0], ens.spins[1], ens.spins[2]])
            rng = np.random.Generator(np.random.Philox(key=np.uint64(split_seed(seed, i, 1))))
            noise = rng.standard_normal((n_steps, 2))
            status, _, t_last = _kernels.dm_twa_euler(
                state, ev, ev_r, flags, dt, mode, om0, omp, kap, lam_cr,
                lam0, fd, omd, sqrt_n, noise, noise_amp, out)
            if status != _kernels.STATUS_OK:
                raise IntegrationDivergedError(t_last, context=f"trajectory {i}")
            block[filled] = out
            filled += 1
            if filled == BATCH or i == n_traj - 1:
                total += block[:filled].sum(axis=0)
                total_sq += (block[:filled] ** 2).sum(axis=0)
                filled = 0
    else:
        done = 0
        while done < n_traj:
            b = min(BATCH, n_traj - done)
            s0 = np.empty((b, 3, n_spins))
            for k in range(b):
                i = done + k
                ens = sample_initial(spec, n_spins, split_seed(seed, i - i % 2),
                                     antithetic=bool(i % 2))
                s0[k] = ens.spins
            out = np.empty((n_samp, b, 3))
            status, _, t_last = _kernels.spins_rk4(
                s0, ev, ev_r, flags, dt, mode, om0, c2, lam0, fd, omd, out)
            if status != _kernels.STATUS_OK:
                raise IntegrationDivergedError(t_last, context=f"trajectory block at {done}")
            total += out.sum(axis=1)
            total_sq += (out ** 2).sum(axis=1)
            done += b

    mean = total / n_traj
    if n_traj > 1:
        var = (total_sq - n_traj * mean**2) / (n_traj - 1)
        sem = np.sqrt(np.maximum(var, 0.0) / n_traj)
    else:
        sem = np.zeros_like(mean)

    t = np.arange(n_samp) * (Td / samples_per_period)
    series_meta = {
        "level": "dtwa",
        "model": kind.value,
        "n_spins": n_spins,
        "n_traj": n_traj,
        "seed": seed,
        "omega_d": protocol.omega_d,
        "lam0": protocol.lam0,
        "kappa": params.kappa if not math.isinf(params.kappa) else "inf",
        "dt": dt,
    }
    if meta:
        series_meta.update(meta)
    stderr = {"jx": sem[:, 0], "jy": sem[:, 1], "jz": sem[:, 2]}
    if photon:
        # quadrature means are in unrescaled units: convert back; the photon
        # number estimator subtracts the symmetric-ordering vacuum half
        a = (mean[:, 3] + 1j * mean[:, 4]) / math.sqrt(n_spins)
        n_ph = (total_sq[:, 3] + total_sq[:, 4]) / n_traj - 0.5
        return TrajectorySeries(
            t=t, jx=mean[:, 0], jy=mean[:, 1], jz=mean[:, 2],
            a=a, n_photon=n_ph, samples_per_period=samples_per_period,
            period=Td, meta=series_meta, stderr=stderr)
    return TrajectorySeries(
        t=t, jx=mean[:, 0], jy=mean[:, 1], jz=mean[:, 2],
        a=None, n_photon=None, samples_per_period=samples_per_period,
        period=Td, meta=series_meta, stderr=stderr)
