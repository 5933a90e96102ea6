"""Fixed-step integration with exact landing on drive discontinuities.

The sample grid is uniform with ``samples_per_period`` points per drive
period (a power of two, so sample times that coincide with period boundaries
are exact in binary floating point).  Drive switch times are merged into the
step schedule, so no Runge-Kutta step ever crosses a coupling discontinuity.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .drive import DisorderRealization, DriveProtocol, SinusoidalDrive, switch_times
from .models import (
    InitialStateSpec,
    MeanFieldState,
    ModelKind,
    ModelParams,
    mean_field_initial_state,
)

DEFAULT_SAMPLES_PER_PERIOD = 32
DEFAULT_ODE_STEPS_PER_PERIOD = 2048
DEFAULT_SDE_STEPS_PER_PERIOD = 4096

_ALIGN_TOL = 1e-9


class IntegrationDivergedError(RuntimeError):
    """State became non-finite or overflowed; carries the last valid time."""

    def __init__(self, t_last: float, context: str = ""):
        self.t_last = t_last
        msg = f"integration diverged after t = {t_last:.6g}"
        super().__init__(msg + (f" ({context})" if context else ""))


@dataclass
class TrajectorySeries:
    """Uniformly sampled observables aligned to drive periods."""

    t: np.ndarray
    jx: np.ndarray
    jy: np.ndarray
    jz: np.ndarray
    a: np.ndarray | None
    n_photon: np.ndarray | None
    samples_per_period: int
    period: float
    meta: dict = field(default_factory=dict)
    stderr: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        if self.samples_per_period & (self.samples_per_period - 1):
            raise ValueError("samples_per_period must be a power of two")
        if len(self.t) > 1:
            dt = np.diff(self.t)
            if not np.allclose(dt, dt[0], rtol=0, atol=_ALIGN_TOL * self.period):
                raise ValueError("sample times must be uniformly spaced")

    @property
    def n_samples(self) -> int:
        return len(self.t)

    @property
    def horizon(self) -> float:
        return float(self.t[-1])

    @property
    def sample_dt(self) -> float:
        return self.period / self.samples_per_period

    def stroboscopic_indices(self, t_start: float = 0.0, t_end: float | None = None) -> np.ndarray:
        """Indices of samples at integer multiples of the drive period."""
        t_end = self.horizon if t_end is None else t_end
        n0 = int(math.ceil(t_start / self.period - _ALIGN_TOL))
        n1 = int(math.floor(t_end / self.period + _ALIGN_TOL))
        idx = np.arange(n0, n1 + 1) * self.samples_per_period
        return idx[idx < self.n_samples]

    def index_at(self, time: float) -> int:
        i = int(round(time / self.sample_dt))
        if not 0 <= i < self.n_samples or abs(self.t[i] - time) > _ALIGN_TOL * self.period:
            raise ValueError(f"time {time} is not on the sample grid")
        return i

    # -- serialization ------------------------------------------------------

    _COLUMNS = ("t", "jx", "jy", "jz", "re_a", "im_a", "n_photon")

    def _table(self) -> tuple[list[str], np.ndarray]:
        cols = list(self._COLUMNS)
        re_a = self.a.real if self.a is not None else np.zeros_like(self.t)
        im_a = self.a.imag if self.a is not None else np.zeros_like(self.t)
        nph = self.n_photon if self.n_photon is not None else np.zeros_like(self.t)
        data = [self.t, self.jx, self.jy, self.jz, re_a, im_a, nph]
        for name in sorted(self.extra):
            cols.append(name)
            data.append(self.extra[name])
        for name in sorted(self.stderr):
            cols.append(f"{name}_stderr")
            data.append(self.stderr[name])
        return cols, np.column_stack(data)

    def to_csv(self, path) -> None:
        cols, data = self._table()
        header_meta = dict(self.meta)
        header_meta.update(samples_per_period=self.samples_per_period, period=self.period)
        with open(path, "w") as fh:
            fh.write("# meta: " + json.dumps(header_meta, default=_json_fallback) + "\n")
            fh.write(",".join(cols) + "\n")
            np.savetxt(fh, data, delimiter=",", fmt="%.17g")

    @classmethod
    def from_csv(cls, path) -> "TrajectorySeries":
        with open(path) as fh:
            return cls._from_text(fh)

    @classmethod
    def _from_text(cls, fh) -> "TrajectorySeries":
        first = fh.readline()
        meta = json.loads(first.split("# meta:", 1)[1]) if first.startswith("# meta:") else {}
        header = fh.readline().strip().split(",") if first.startswith("#") else first.strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
        col = {name: data[:, i] for i, name in enumerate(header)}
        S = int(meta.pop("samples_per_period", DEFAULT_SAMPLES_PER_PERIOD))
        t = col["t"]
        period = float(meta.pop("period", (t[1] - t[0]) * S if len(t) > 1 else 1.0))
        a = col["re_a"] + 1j * col["im_a"]
        has_photon = bool(np.any(a) or np.any(col["n_photon"]))
        extra = {k: v for k, v in col.items()
                 if k not in cls._COLUMNS and not k.endswith("_stderr")}
        stderr = {k[:-7]: v for k, v in col.items() if k.endswith("_stderr")}
        return cls(t=t, jx=col["jx"], jy=col["jy"], jz=col["jz"],
                   a=a if has_photon else None,
                   n_photon=col["n_photon"] if has_photon else None,
                   samples_per_period=S, period=period, meta=meta,
                   stderr=stderr, extra=extra)

    def to_cache(self, path) -> None:
        """Compact binary cache with a self-describing header."""
        cols, data = self._table()
        header = dict(self.meta)
        header.update(samples_per_period=self.samples_per_period, period=self.period,
                      columns=cols)
        np.savez_compressed(path, data=data,
                            header=json.dumps(header, default=_json_fallback))

    @classmethod
    def from_cache(cls, path) -> "TrajectorySeries":
        with np.load(path, allow_pickle=False) as z:
            header = json.loads(str(z["header"]))
            data = z["data"]
        cols = header.pop("columns")
        buf = io.StringIO()
        buf.write("# meta: " + json.dumps(header) + "\n")
        buf.write(",".join(cols) + "\n")
        np.savetxt(buf, data, delimiter=",", fmt="%.17g")
        buf.seek(0)
        return cls._from_text(buf)


def _json_fallback(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


# ---------------------------------------------------------------------------
# event schedules
# ---------------------------------------------------------------------------

def build_event_schedule(
    protocol: DriveProtocol,
    horizon: float,
    samples_per_period: int,
    realization: DisorderRealization | None = None,
):
    """(event_times, per-interval coupling, is_sample flags, n_samples).

    Event times are the union of the uniform sample grid and the drive's
    switch times; switches within tolerance of a sample snap onto it so the
    sample grid stays exact.
    """
    from .drive import coupling_at  # local import to keep module load light

    Td = protocol.period
    dt_s = Td / samples_per_period
    n_samp = horizon / dt_s
    if abs(n_samp - round(n_samp)) > _ALIGN_TOL:
        raise ValueError("horizon must be an integer number of sample strides")
    n_samp = int(round(n_samp)) + 1
    samples = np.arange(n_samp) * dt_s

    sw = switch_times(protocol, horizon, realization)
    extra = []
    for s in sw:
        k = round(s / dt_s)
        if not (0 <= k < n_samp and abs(s - samples[int(k)]) <= _ALIGN_TOL * Td):
            extra.append(s)
    if extra:
        ev = np.sort(np.concatenate([samples, np.array(extra)]))
        is_sample = np.isin(ev, samples)
    else:
        ev = samples
        is_sample = np.ones(n_samp, dtype=bool)

    mids = 0.5 * (ev[:-1] + ev[1:])
    if isinstance(protocol, SinusoidalDrive):
        ev_r = np.zeros(len(mids))
    else:
        ev_r = np.array([coupling_at(protocol, t, realization) for t in mids])
    return ev, ev_r, is_sample, n_samp


# ---------------------------------------------------------------------------
# generic fixed-step integrators (reference implementations, used by tests
# and by anything with a nonstandard state layout)
# ---------------------------------------------------------------------------

@dataclass
class SampledPath:
    """Raw (t, y) samples from a generic integration."""

    t: np.ndarray
    y: np.ndarray
    meta: dict = field(default_factory=dict)


def _merge_events(horizon, sample_times, switches):
    switches = np.asarray(switches, dtype=float)
    switches = switches[(switches > 0) & (switches <= horizon)]
    extra = []
    dt_s = sample_times[1] - sample_times[0] if len(sample_times) > 1 else horizon
    for s in switches:
        k = int(round(s / dt_s))
        if not (0 <= k < len(sample_times) and abs(s - sample_times[k]) <= _ALIGN_TOL * dt_s):
            extra.append(s)
    if extra:
        ev = np.sort(np.concatenate([sample_times, np.array(extra)]))
        flags = np.isin(ev, sample_times)
    else:
        ev, flags = sample_times, np.ones(len(sample_times), dtype=bool)
    return ev, flags


def integrate_ode(rhs, y0, horizon, *, dt_max, samples_per_period, period,
                  switch_times=()) -> SampledPath:
    """Classical RK4 with fixed step <= dt_max, switch- and sample-aligned.

    ``rhs(t, y) -> dy`` may be any callable over a 1-D state.  Samples are
    recorded on the uniform stride ``period / samples_per_period``.
    """
    if dt_max <= 0:
        raise ValueError("dt_max must be > 0")
    y = np.asarray(y0, dtype=float).copy()
    dt_s = period / samples_per_period
    n_samp = int(round(horizon / dt_s)) + 1
    samples = np.arange(n_samp) * dt_s
    ev, flags = _merge_events(horizon, samples, switch_times)
    out = np.empty((n_samp, len(y)))
    out[0] = y
    ns = 1
    for i in range(len(ev) - 1):
        t0, t1 = ev[i], ev[i + 1]
        width = t1 - t0
        if width > 0:
            n = max(int(math.ceil(width / dt_max)), 1)
            h = width / n
            for k in range(n):
                t = t0 + k * h
                k1 = rhs(t, y)
                k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
                k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
                k4 = rhs(t + h, y + h * k3)
                y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > 1e6:
            raise IntegrationDivergedError(t0)
        if flags[i + 1]:
            out[ns] = y
            ns += 1
    return SampledPath(t=samples, y=out)


def integrate_sde(drift, noise_amplitudes, y0, horizon, *, dt, samples_per_period,
                  period, seed, switch_times=()) -> SampledPath:
    """Euler-Maruyama with constant per-component noise amplitudes.

    ``y <- y + drift(t, y) * h + sigma_i * sqrt(h) * xi_i`` with independent
    standard normals per component and step.  ``dt`` must divide every
    segment between consecutive switch/sample times (within tolerance the
    segment is subdivided evenly, which preserves the Wiener statistics).
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    y = np.asarray(y0, dtype=float).copy()
    sigma = np.asarray(noise_amplitudes, dtype=float)
    if sigma.shape != y.shape:
        raise ValueError("noise_amplitudes must match the state shape")
    noisy = sigma != 0
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    dt_s = period / samples_per_period
    n_samp = int(round(horizon / dt_s)) + 1
    samples = np.arange(n_samp) * dt_s
    ev, flags = _merge_events(horizon, samples, switch_times)
    out = np.empty((n_samp, len(y)))
    out[0] = y
    ns = 1
    for i in range(len(ev) - 1):
        width = ev[i + 1] - ev[i]
        if width > 0:
            n = max(int(math.ceil(width / dt - _ALIGN_TOL)), 1)
            h = width / n
            sq = math.sqrt(h)
            t = ev[i]
            for _ in range(n):
                dy = drift(t, y) * h
                dy[noisy] += sigma[noisy] * sq * rng.standard_normal(int(noisy.sum()))
                y = y + dy
                t += h
        if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > 1e6:
            raise IntegrationDivergedError(ev[i])
        if flags[i + 1]:
            out[ns] = y
            ns += 1
    return SampledPath(t=samples, y=out)


# ---------------------------------------------------------------------------
# mean-field fast path
# ---------------------------------------------------------------------------

_KIND_CODE = {ModelKind.DM: 0, ModelKind.ADM: 1, ModelKind.LMG: 2}


def kernel_args(params: ModelParams):
    """Scalar coefficients handed to the compiled kernels."""
    kind = params.kind
    if kind is ModelKind.DM:
        return (_KIND_CODE[kind], params.omega0, params.omega_p, params.kappa,
                params.lam_cr, 0.0)
    if kind is ModelKind.ADM:
        c2 = (4.0 * params.omega0**2 * params.kappa
              / (params.kappa**2 + params.omega_p**2))
        return (_KIND_CODE[kind], params.omega0, params.omega_p, 0.0, 0.0, c2)
    return (_KIND_CODE[kind], params.omega0, params.omega_p, 0.0, 0.0, 0.0)


def drive_args(protocol: DriveProtocol):
    """(mode, lam0, f_d, omega_d) for the compiled kernels."""
    if isinstance(protocol, SinusoidalDrive):
        return 1, protocol.lam0, protocol.f_d, protocol.omega_d
    return 0, protocol.lam0, 0.0, protocol.omega_d


def integrate_mean_field(
    params: ModelParams,
    initial: InitialStateSpec | MeanFieldState,
    horizon: float,
    *,
    realization: DisorderRealization | None = None,
    dt_max: float | None = None,
    samples_per_period: int = DEFAULT_SAMPLES_PER_PERIOD,
    meta: dict | None = None,
) -> TrajectorySeries:
    """Integrate the mean-field equations under the drive in ``params``."""
    from .drive import is_drive_active

    protocol = params.drive
    Td = protocol.period
    if dt_max is None:
        dt_max = Td / DEFAULT_ODE_STEPS_PER_PERIOD
    state = (initial if isinstance(initial, MeanFieldState)
             else mean_field_initial_state(initial, params))
    y0 = state.as_array()
    ev, ev_r, flags, n_samp = build_event_schedule(
        protocol, horizon, samples_per_period, realization)
    out = np.empty((n_samp, 5))
    kind_code, om0, omp, kap, lam_cr, c2 = kernel_args(params)
    mode, lam0, fd, omd = drive_args(protocol)
    status, ns, t_last = _kernels.mean_field_rk4(
        y0, ev, ev_r, flags, dt_max, mode, kind_code,
        om0, omp, kap, lam_cr, c2, lam0, fd, omd, out)
    if status != _kernels.STATUS_OK:
        raise IntegrationDivergedError(t_last, context="mean-field flow is bounded; this indicates a bug")
    t = np.arange(n_samp) * (Td / samples_per_period)
    photon_kept = params.kind is ModelKind.DM
    a = out[:, 0] + 1j * out[:, 1] if photon_kept else None
    series_meta = {
        "model": params.kind.value,
        "omega0": params.omega0,
        "omega_p": params.omega_p,
        "kappa": params.kappa if not math.isinf(params.kappa) else "inf",
        "omega_d": protocol.omega_d,
        "lam0": protocol.lam0,
        "dt_max": dt_max,
        "drive_active": is_drive_active(protocol, horizon, realization),
    }
    if meta:
        series_meta.update(meta)
    return TrajectorySeries(
        t=t, jx=out[:, 2], jy=out[:, 3], jz=out[:, 4],
        a=a, n_photon=np.abs(a) ** 2 if photon_kept else None,
        samples_per_period=samples_per_period, period=Td, meta=series_meta)
