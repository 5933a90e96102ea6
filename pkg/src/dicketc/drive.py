"""Time-dependent coupling protocols.

The coupling that multiplies the spin-photon (or spin-spin) interaction is
switched in time by a drive protocol.  Binary protocols keep the coupling at a
constant value ``lam0`` for the first fraction ``duty`` of every drive period
and at zero for the rest ("bang-bang" drive).  Noisy variants redraw the duty
cycle or the bright amplitude once per period from a box distribution.  The
sinusoidal protocol modulates the coupling smoothly.

All coupling values are expressed in units of the critical coupling, i.e. a
protocol with ``lam0 = 1.1`` drives the system at 1.1 times the critical
coupling regardless of photon frequency or decay rate.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi

# tolerance (in units of the drive period) for merging coincident switch times
_DEDUP_TOL = 1e-12


class ConfigurationError(ValueError):
    """A protocol or realization is inconsistent with the requested operation."""


@dataclass(frozen=True)
class BinaryDrive:
    """Square-wave coupling: ``lam0`` during the bright window, 0 otherwise."""

    lam0: float
    duty: float
    omega_d: float

    def __post_init__(self):
        _check_common(self.lam0, self.duty, self.omega_d)

    @property
    def period(self) -> float:
        return TWO_PI / self.omega_d

    @property
    def needs_realization(self) -> bool:
        return False


@dataclass(frozen=True)
class BinaryNoisyDutyDrive:
    """Binary drive whose duty cycle is redrawn every period.

    Per period ``n`` the duty is ``duty + u_n`` with ``u_n`` uniform on
    ``[-delta_duty, +delta_duty]``; the result is clipped to [0, 1].
    """

    lam0: float
    duty: float
    omega_d: float
    delta_duty: float

    def __post_init__(self):
        _check_common(self.lam0, self.duty, self.omega_d)
        if self.delta_duty < 0:
            raise ConfigurationError("delta_duty must be >= 0")

    @property
    def period(self) -> float:
        return TWO_PI / self.omega_d

    @property
    def needs_realization(self) -> bool:
        return True


@dataclass(frozen=True)
class BinaryNoisyAmplitudeDrive:
    """Binary drive whose bright amplitude is redrawn every period.

    Per period ``n`` the bright value is ``lam0 * (1 + v_n)`` with ``v_n``
    uniform on ``[-delta_lam, +delta_lam]`` (fractional disorder).
    """

    lam0: float
    duty: float
    omega_d: float
    delta_lam: float

    def __post_init__(self):
        _check_common(self.lam0, self.duty, self.omega_d)
        if self.delta_lam < 0:
            raise ConfigurationError("delta_lam must be >= 0")

    @property
    def period(self) -> float:
        return TWO_PI / self.omega_d

    @property
    def needs_realization(self) -> bool:
        return True


@dataclass(frozen=True)
class SinusoidalDrive:
    """Smooth modulation ``lam0 * (1 + f_d * sin(omega_d * t))``."""

    lam0: float
    f_d: float
    omega_d: float

    def __post_init__(self):
        if self.omega_d <= 0:
            raise ConfigurationError("omega_d must be > 0")
        if self.f_d < 0:
            raise ConfigurationError("f_d must be >= 0")

    @property
    def period(self) -> float:
        return TWO_PI / self.omega_d

    @property
    def needs_realization(self) -> bool:
        return False


DriveProtocol = BinaryDrive | BinaryNoisyDutyDrive | BinaryNoisyAmplitudeDrive | SinusoidalDrive


def _check_common(lam0, duty, omega_d):
    if not 0.0 <= duty <= 1.0:
        raise ConfigurationError(f"duty must lie in [0, 1], got {duty}")
    if omega_d <= 0:
        raise ConfigurationError("omega_d must be > 0")
    if lam0 < 0:
        raise ConfigurationError("lam0 must be >= 0")


@dataclass(frozen=True)
class DisorderRealization:
    """Per-period disorder draws for a noisy binary drive.

    ``duties[n]`` is the duty cycle of period ``n`` (duty disorder) and
    ``amplitudes[n]`` the bright coupling of period ``n`` (amplitude
    disorder); the variant not being disordered holds the clean value.
    """

    duties: np.ndarray
    amplitudes: np.ndarray
    seed: int
    n_clipped: int = 0

    def __post_init__(self):
        object.__setattr__(self, "duties", np.asarray(self.duties, dtype=float))
        object.__setattr__(self, "amplitudes", np.asarray(self.amplitudes, dtype=float))
        if self.duties.shape != self.amplitudes.shape:
            raise ConfigurationError("duties and amplitudes must have equal length")

    @property
    def n_periods(self) -> int:
        return len(self.duties)

    def to_jsonable(self) -> dict:
        return {
            "seed": int(self.seed),
            "duties": self.duties.tolist(),
            "amplitudes": self.amplitudes.tolist(),
            "n_clipped": int(self.n_clipped),
        }

    @classmethod
    def from_jsonable(cls, obj: dict) -> "DisorderRealization":
        return cls(
            duties=np.asarray(obj["duties"], dtype=float),
            amplitudes=np.asarray(obj["amplitudes"], dtype=float),
            seed=int(obj["seed"]),
            n_clipped=int(obj.get("n_clipped", 0)),
        )


def split_seed(*keys: int) -> int:
    """Derive a child seed from a master seed and an index path.

    SHA-256 over the little-endian packed key tuple, truncated to 63 bits.
    Stable across runs, platforms and package versions; documented as part
    of the reproducibility contract (cell seed = split(master, row, col,
    realization index)).
    """
    if not keys:
        raise ValueError("split_seed requires at least one key")
    data = b"".join((int(k) & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little") for k in keys)
    digest = hashlib.sha256(data).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def _period_rng(seed: int, n: int) -> np.random.Generator:
    # counter-based generator keyed by (seed, period index): draws are
    # reproducible independent of evaluation order
    return np.random.Generator(np.random.Philox(key=np.array([seed, n], dtype=np.uint64)))


def sample_disorder(protocol: DriveProtocol, seed: int, n_periods: int) -> DisorderRealization:
    """Draw one disorder realization covering ``n_periods`` drive periods."""
    if n_periods < 1:
        raise ConfigurationError("n_periods must be >= 1")
    if not protocol.needs_realization:
        raise ConfigurationError(f"{type(protocol).__name__} takes no disorder realization")
    duties = np.full(n_periods, protocol.duty)
    amps = np.full(n_periods, protocol.lam0)
    n_clipped = 0
    if isinstance(protocol, BinaryNoisyDutyDrive):
        w = protocol.delta_duty
        for n in range(n_periods):
            d = protocol.duty + _period_rng(seed, n).uniform(-w, w)
            if d < 0.0 or d > 1.0:
                n_clipped += 1
                d = min(max(d, 0.0), 1.0)
            duties[n] = d
    else:
        w = protocol.delta_lam
        for n in range(n_periods):
            amps[n] = protocol.lam0 * (1.0 + _period_rng(seed, n).uniform(-w, w))
    return DisorderRealization(duties=duties, amplitudes=amps, seed=seed, n_clipped=n_clipped)


def _period_duty_amp(protocol, realization, n):
    """(duty, bright amplitude) effective during period ``n``."""
    if protocol.needs_realization:
        if realization is None:
            raise ConfigurationError(
                f"{type(protocol).__name__} requires a DisorderRealization"
            )
        if n >= realization.n_periods:
            raise ConfigurationError(
                f"realization covers {realization.n_periods} periods, period {n} requested"
            )
        return realization.duties[n], realization.amplitudes[n]
    return protocol.duty, protocol.lam0


def coupling_at(
    protocol: DriveProtocol,
    t: float,
    realization: DisorderRealization | None = None,
) -> float:
    """Instantaneous coupling (in critical-coupling units) at time ``t >= 0``."""
    if t < 0:
        raise ConfigurationError("t must be >= 0")
    if isinstance(protocol, SinusoidalDrive):
        return protocol.lam0 * (1.0 + protocol.f_d * math.sin(protocol.omega_d * t))
    Td = protocol.period
    # snap times a rounding error short of a period boundary onto it
    n = int(math.floor(t / Td + _DEDUP_TOL))
    duty, amp = _period_duty_amp(protocol, realization, n)
    frac = max(t / Td - n, 0.0)
    return amp if frac < duty else 0.0


def switch_times(
    protocol: DriveProtocol,
    horizon: float,
    realization: DisorderRealization | None = None,
) -> np.ndarray:
    """Coupling discontinuity times in ``(0, horizon]``, sorted, deduplicated.

    Binary drives switch at period boundaries ``n * T_d`` and at the
    bright-to-dark edges ``(n + duty_n) * T_d``.  Smooth drives have none.
    """
    if horizon <= 0:
        raise ConfigurationError("horizon must be > 0")
    if isinstance(protocol, SinusoidalDrive):
        return np.empty(0)
    Td = protocol.period
    n_periods = int(math.ceil(horizon / Td - _DEDUP_TOL))
    times = [n * Td for n in range(1, n_periods + 1)]
    for n in range(n_periods):
        duty, _ = _period_duty_amp(protocol, realization, n)
        times.append((n + duty) * Td)
    arr = np.array(sorted(times))
    arr = arr[(arr > _DEDUP_TOL * Td) & (arr <= horizon + _DEDUP_TOL * Td)]
    np.minimum(arr, horizon, out=arr)
    keep = np.ones(len(arr), dtype=bool)
    keep[1:] = np.diff(arr) > _DEDUP_TOL * Td
    return arr[keep]


def bright_fraction(
    protocol: DriveProtocol,
    horizon: float,
    realization: DisorderRealization | None = None,
) -> float:
    """Fraction of ``[0, horizon]`` during which the coupling is nonzero."""
    if isinstance(protocol, SinusoidalDrive):
        return 1.0 if protocol.lam0 > 0 else 0.0
    Td = protocol.period
    total = 0.0
    n = 0
    t = 0.0
    while t < horizon:
        duty, _ = _period_duty_amp(protocol, realization, n)
        t_end = min((n + 1) * Td, horizon)
        bright_end = min((n + duty) * Td, t_end)
        total += max(bright_end - n * Td, 0.0)
        t = t_end
        n += 1
    return total / horizon


def is_drive_active(
    protocol: DriveProtocol,
    horizon: float,
    realization: DisorderRealization | None = None,
) -> bool:
    """Whether the coupling actually changes value within the horizon.

    A binary drive with duty 0 (always off) or duty 1 (always on) is not a
    periodic drive in any meaningful sense; a sinusoidal drive is inactive
    only at zero modulation.  Used to veto spurious subharmonic labels.
    """
    if isinstance(protocol, SinusoidalDrive):
        return protocol.f_d > 0 and protocol.lam0 > 0
    if protocol.lam0 == 0:
        return False
    frac = bright_fraction(protocol, horizon, realization)
    return 0.0 < frac < 1.0
