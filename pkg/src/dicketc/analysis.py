"""Diagnostics: power spectra, subharmonic lifetime, decorrelator,
crystalline fraction and the phase classifier.

The classifier reproduces the standard taxonomy of driven collective-spin
phases: thermal (chaotic), time crystal (period-doubled response that
persists), time quasicrystal (a persistent spectral peak incommensurate
with the drive), drive-stabilized normal phase (empty photon mode despite
super-critical coupling) and a residual class for harmonic and n-tupling
responses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .integrate import TrajectorySeries, integrate_mean_field
from .models import (
    InitialStateSpec,
    MeanFieldState,
    ModelParams,
    mean_field_initial_state,
    perturbed_initial_state,
)


@dataclass(frozen=True)
class AnalysisThresholds:
    """Tunable constants of the phase diagnostics (config-overridable)."""

    d_threshold: float = 0.01          # decorrelator value separating thermal
    ln_p_threshold: float = -8.0       # spectral peak detection floor
    exclusion_bins: int = 2            # half-width of excluded zones, in bins
    tc_min_periods: int = 16           # shortest lifetime labelled TC
    tc_settle_periods: int = 8         # attractor-settling margin of the sign check
    photon_threshold: float = 1e-4     # late-time photon number of a dark state
    jx_threshold: float = 1e-3         # late-time |jx| of a dark state
    late_window_periods: int = 25      # length of the late averaging window
    strobe_rel_tol: float = 0.1        # tolerance of the period-2 sign check
    t_i_periods: int = 50              # start of the decorrelator window


DEFAULT_THRESHOLDS = AnalysisThresholds()


class Phase(Enum):
    TC = "TC"
    TQC = "TQC"
    THERMAL = "Thermal"
    LIGHT_INDUCED_NP = "LightInducedNP"
    OTHER = "Other"
    ERROR = "Error"


@dataclass
class ClassifiedPhase:
    """Phase label together with the diagnostics that produced it."""

    label: Phase
    d: float
    t_tc_over_td: float
    xi_point: float
    n_photon_late: float
    subharmonic_order: int

    def to_jsonable(self) -> dict:
        return {
            "label": self.label.value,
            "d": self.d,
            "T_TC_over_Td": self.t_tc_over_td,
            "xi": self.xi_point,
            "n_photon_late": self.n_photon_late,
            "subharmonic_order": self.subharmonic_order,
        }


@dataclass
class PowerSpectrum:
    """One-sided normalized power spectrum of a window of ``jx``.

    Negative-frequency power is folded onto the positive bins so the powers
    sum to one.  No taper is applied (plain rectangular window).
    """

    omega: np.ndarray
    power: np.ndarray
    t_start: float
    t_end: float

    @property
    def d_omega(self) -> float:
        return 2.0 * math.pi / (self.t_end - self.t_start)

    def bin_index(self, omega: float) -> int:
        return int(round(omega / self.d_omega))

    def power_at(self, omega: float) -> float:
        return float(self.power[self.bin_index(omega)])

    def to_csv(self, path, meta: dict | None = None) -> None:
        import json
        with open(path, "w") as fh:
            header = {"t_start": self.t_start, "t_end": self.t_end}
            if meta:
                header.update(meta)
            fh.write("# meta: " + json.dumps(header, default=str) + "\n")
            fh.write("omega,power\n")
            np.savetxt(fh, np.column_stack([self.omega, self.power]),
                       delimiter=",", fmt="%.17g")


def power_spectrum(series: TrajectorySeries, t_start: float, t_end: float) -> PowerSpectrum:
    """Spectrum of ``jx`` over the half-open window ``[t_start, t_end)``."""
    i0 = series.index_at(t_start)
    i1 = int(round((t_end - t_start) / series.sample_dt)) + i0
    if i1 > series.n_samples:
        raise ValueError("window extends past the series")
    n = i1 - i0
    if n < 64:
        raise ValueError(f"window too short: {n} samples (need >= 64)")
    x = series.jx[i0:i1]
    F = np.fft.rfft(x)
    p = np.abs(F) ** 2
    fold = np.full(len(p), 2.0)
    fold[0] = 1.0
    if n % 2 == 0:
        fold[-1] = 1.0
    p *= fold
    total = p.sum()
    if total > 0:
        p /= total
    omega = np.arange(len(p)) * (2.0 * math.pi / (n * series.sample_dt))
    return PowerSpectrum(omega=omega, power=p, t_start=t_start,
                         t_end=t_start + n * series.sample_dt)


def has_secondary_peak(
    ps: PowerSpectrum,
    omega_d: float,
    thresholds: AnalysisThresholds = DEFAULT_THRESHOLDS,
) -> bool:
    """Whether the spectrum holds a peak not belonging to the drive response.

    A period-n response concentrates all its power at integer multiples of
    ``omega_d / 2`` (DC, the subharmonic, the drive frequency and their
    harmonics), so every multiple is excluded, each with a guard zone of
    ``exclusion_bins`` bins.  Any remaining local maximum above the
    ``ln P`` floor marks quasicrystalline (incommensurate) content.
    """
    p = ps.power
    if len(p) < 3:
        return False
    floor = math.exp(thresholds.ln_p_threshold)
    interior = (p[1:-1] > p[:-2]) & (p[1:-1] > p[2:]) & (p[1:-1] > floor)
    idx = np.nonzero(interior)[0] + 1
    if len(idx) == 0:
        return False
    half = 0.5 * omega_d
    guard = thresholds.exclusion_bins * ps.d_omega
    om = ps.omega[idx]
    harmonic_distance = np.abs(om - half * np.round(om / half))
    return bool(np.any(harmonic_distance >= guard))


def tc_lifetime(
    series: TrajectorySeries,
    omega_d: float | None = None,
    t_f: float | None = None,
    thresholds: AnalysisThresholds = DEFAULT_THRESHOLDS,
) -> float:
    """Lifetime of the subharmonic response within ``[0, t_f]``.

    Spectra are taken over windows ``[t', t_f)`` with ``t'`` on the period
    grid.  The lifetime is ``t_f`` minus the earliest ``t'`` after which no
    window shows a secondary peak; 0 if even the last window does.
    """
    omega_d = series.meta.get("omega_d") if omega_d is None else omega_d
    Td = series.period
    t_f = series.horizon if t_f is None else t_f
    n_total = int(round(t_f / Td))
    k_max = n_total - thresholds.tc_min_periods
    if k_max < 0:
        raise ValueError("series shorter than the minimum spectral window")
    has_peak = np.zeros(k_max + 1, dtype=bool)
    for k in range(k_max + 1):
        ps = power_spectrum(series, k * Td, t_f)
        has_peak[k] = has_secondary_peak(ps, omega_d, thresholds)
    dirty = np.nonzero(has_peak)[0]
    if len(dirty) == 0:
        return t_f
    if dirty[-1] == k_max:
        return 0.0
    return t_f - (dirty[-1] + 1) * Td


def decorrelator_from_series(
    base: TrajectorySeries,
    perturbed: TrajectorySeries,
    t_i: float,
    t_f: float,
) -> float:
    """Mean stroboscopic separation of |jx| between two trajectories.

    Symmetric in its two arguments by construction (absolute differences).
    """
    if t_i >= t_f:
        raise ValueError("t_i must be < t_f")
    idx = base.stroboscopic_indices(t_i, t_f)
    xb = np.abs(base.jx[idx])
    xp = np.abs(perturbed.jx[idx])
    return float(np.mean(np.abs(xb - xp)))


def decorrelator(
    params: ModelParams,
    base_init: MeanFieldState | InitialStateSpec,
    t_i: float | None = None,
    t_f: float | None = None,
    *,
    horizon: float | None = None,
    realization=None,
    dt_max: float | None = None,
    samples_per_period: int = 32,
) -> float:
    """Evolve a state and its displaced twin and return their separation.

    Defaults follow the standard diagnostic window: average over the second
    half of a 100-period run.
    """
    Td = params.drive.period
    horizon = 100 * Td if horizon is None else horizon
    t_i = 50 * Td if t_i is None else t_i
    t_f = horizon if t_f is None else t_f
    base = (base_init if isinstance(base_init, MeanFieldState)
            else mean_field_initial_state(base_init, params))
    pert = perturbed_initial_state(base)
    kw = dict(realization=realization, dt_max=dt_max, samples_per_period=samples_per_period)
    sb = integrate_mean_field(params, base, horizon, **kw)
    sp = integrate_mean_field(params, pert, horizon, **kw)
    return decorrelator_from_series(sb, sp, t_i, t_f)


@dataclass
class CrystallineFraction:
    """Disorder-averaged subharmonic weight, absolute and relative."""

    xi: float
    xi_err: float
    xi0: float
    relative: float
    relative_err: float
    n_realizations: int


def crystalline_fraction(
    realization_series: list[TrajectorySeries],
    clean_series: TrajectorySeries,
    omega_d: float,
) -> CrystallineFraction:
    """Average spectral weight at ``omega_d / 2`` over disorder realizations."""
    if len(realization_series) < 1:
        raise ValueError("need at least one realization")
    half = 0.5 * omega_d
    vals = np.empty(len(realization_series))
    for i, ser in enumerate(realization_series):
        ps = power_spectrum(ser, 0.0, ser.horizon)
        vals[i] = ps.power_at(half)
    ps0 = power_spectrum(clean_series, 0.0, clean_series.horizon)
    xi0 = ps0.power_at(half)
    xi = float(np.mean(vals))
    err = float(np.std(vals, ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return CrystallineFraction(
        xi=xi, xi_err=err, xi0=xi0,
        relative=xi / xi0 if xi0 > 0 else math.nan,
        relative_err=err / xi0 if xi0 > 0 else math.nan,
        n_realizations=len(vals))


def _strobe_alternates(series: TrajectorySeries, t_start: float,
                       thresholds: AnalysisThresholds) -> bool:
    """Period-2 sign alternation of stroboscopic jx over [t_start, horizon]."""
    idx = series.stroboscopic_indices(t_start)
    x = series.jx[idx]
    if len(x) < 3:
        return False
    amp = np.maximum(np.abs(x[:-1]), np.abs(x[1:]))
    if np.mean(np.abs(x)) < thresholds.jx_threshold:
        return False
    return bool(np.all(np.abs(x[1:] + x[:-1]) <= thresholds.strobe_rel_tol * amp))


def _subharmonic_order(series: TrajectorySeries, omega_d: float) -> int:
    """Best-effort order n of a response at omega_d / n (0 if aperiodic)."""
    ps = power_spectrum(series, 0.0, series.horizon)
    p = ps.power.copy()
    p[0] = 0.0
    k = int(np.argmax(p))
    if p[k] <= 0:
        return 0
    ratio = omega_d / ps.omega[k]
    n = round(ratio)
    if n >= 1 and abs(ratio - n) <= 0.05:
        return int(n)
    return 0


def classify_phase(
    series: TrajectorySeries,
    d: float,
    t_tc: float,
    lam_ratio: float,
    thresholds: AnalysisThresholds = DEFAULT_THRESHOLDS,
    drive_active: bool | None = None,
) -> ClassifiedPhase:
    """Assign exactly one phase label from the computed diagnostics.

    Decision order: thermal (large decorrelator, lifetime forced to zero),
    drive-stabilized dark state (super-critical coupling yet empty photon
    mode and vanishing magnetization), time crystal (long-lived, actively
    driven, sign-alternating response), time quasicrystal (persistent
    incommensurate peak) and a residual class.
    """
    Td = series.period
    omega_d = series.meta.get("omega_d", 2.0 * math.pi / Td)
    if drive_active is None:
        drive_active = bool(series.meta.get("drive_active", True))
    S = series.samples_per_period
    late = thresholds.late_window_periods * S
    nph = series.n_photon[-late:] if series.n_photon is not None else np.zeros(1)
    n_photon_late = float(np.mean(nph))
    jx_late = float(np.mean(np.abs(series.jx[-late:])))
    ps_full = power_spectrum(series, 0.0, series.horizon)
    xi_point = ps_full.power_at(0.5 * omega_d)
    order = _subharmonic_order(series, omega_d)

    def result(label, t_tc_val):
        return ClassifiedPhase(label=label, d=d, t_tc_over_td=t_tc_val / Td,
                               xi_point=xi_point, n_photon_late=n_photon_late,
                               subharmonic_order=order)

    if d >= thresholds.d_threshold:
        return result(Phase.THERMAL, 0.0)
    if (lam_ratio > 1.0 and n_photon_late < thresholds.photon_threshold
            and jx_late < thresholds.jx_threshold):
        return result(Phase.LIGHT_INDUCED_NP, t_tc)
    # the sign check starts after a short settling margin: a trajectory that
    # begins off the period-2 attractor needs a few periods to lock on, which
    # leaves no trace in the window spectra that define the lifetime
    alt_start = max(series.horizon - t_tc, thresholds.tc_settle_periods * Td)
    if (drive_active and t_tc >= thresholds.tc_min_periods * Td
            and _strobe_alternates(series, alt_start, thresholds)):
        return result(Phase.TC, t_tc)
    if t_tc == 0.0:
        return result(Phase.TQC, t_tc)
    return result(Phase.OTHER, t_tc)


def fit_decay_time(times: np.ndarray, values: np.ndarray) -> float:
    """Exponential decay time from a peak envelope (linear fit in log space)."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = values > 1e-12
    if keep.sum() < 2:
        return math.nan
    slope = np.polyfit(times[keep], np.log(values[keep]), 1)[0]
    if slope >= 0:
        return math.inf
    return -1.0 / slope


def half_life(times: np.ndarray, values: np.ndarray) -> float:
    """First time the envelope falls below half its initial value."""
    values = np.asarray(values, dtype=float)
    ref = 0.5 * values[0]
    below = np.nonzero(values < ref)[0]
    if len(below) == 0:
        return math.inf
    return float(times[below[0]])
