"""Model definitions and mean-field flows.

Three levels of description cover the full range of photon decay rates
``kappa``:

* ``DM``  -- photon mode retained (complex amplitude ``a`` plus spin vector),
  used for ``kappa/omega0 < 1e3``;
* ``ADM`` -- atom-only model obtained by adiabatic elimination at large but
  finite ``kappa`` (``1e3 <= kappa/omega0 < inf``);
* ``LMG`` -- the ``kappa -> inf`` limit, a transverse-field model with an
  effective all-to-all Ising interaction.

Spin components are normalized so a fully polarized state has length 1/2.
Couplings are handled as ratios ``r = lam / lam_cr``; this makes the LMG
interaction well defined at infinite ``kappa``, where the effective
interaction strength ``2 * omega0 * r**2`` depends only on the ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .drive import DriveProtocol

# state vector layout shared with the integration kernels
IDX_AR, IDX_AI, IDX_JX, IDX_JY, IDX_JZ = range(5)

ADM_KAPPA_THRESHOLD = 1e3


class ModelKind(Enum):
    DM = "dm"
    ADM = "adm"
    LMG = "lmg"


def critical_coupling(omega0: float, omega_p: float, kappa: float) -> float:
    """Coupling strength at the normal/superradiant transition."""
    if omega0 <= 0 or omega_p <= 0:
        raise ValueError("omega0 and omega_p must be > 0")
    if not (kappa >= 0) or math.isinf(kappa):
        raise ValueError("kappa must be finite and >= 0")
    return 0.5 * math.sqrt((omega0 / omega_p) * (omega_p**2 + kappa**2))


def dispatch_model(kappa: float, omega0: float = 1.0) -> ModelKind:
    """Pick the appropriate description for a given decay rate."""
    if math.isinf(kappa):
        return ModelKind.LMG
    if kappa < 0:
        raise ValueError("kappa must be >= 0")
    return ModelKind.DM if kappa / omega0 < ADM_KAPPA_THRESHOLD else ModelKind.ADM


@dataclass(frozen=True)
class ModelParams:
    """Physical constants plus the drive protocol.

    ``omega0`` is the reference unit (1 by convention), ``kappa`` may be
    ``math.inf`` to select the LMG description.
    """

    omega0: float
    omega_p: float
    kappa: float
    drive: DriveProtocol

    def __post_init__(self):
        if self.omega0 <= 0 or self.omega_p <= 0:
            raise ValueError("omega0 and omega_p must be > 0")
        if not self.kappa >= 0:
            raise ValueError("kappa must be >= 0 (math.inf allowed)")

    @property
    def kind(self) -> ModelKind:
        return dispatch_model(self.kappa, self.omega0)

    @property
    def lam_cr(self) -> float:
        return critical_coupling(self.omega0, self.omega_p, self.kappa)

    def lam_abs(self, ratio: float) -> float:
        """Absolute coupling for a ratio value (finite ``kappa`` only)."""
        return ratio * self.lam_cr


@dataclass(frozen=True)
class MeanFieldState:
    """Rescaled photon amplitude and collective spin vector."""

    a: complex
    jx: float
    jy: float
    jz: float

    def as_array(self) -> np.ndarray:
        return np.array([self.a.real, self.a.imag, self.jx, self.jy, self.jz])

    @classmethod
    def from_array(cls, y: np.ndarray) -> "MeanFieldState":
        return cls(a=complex(y[IDX_AR], y[IDX_AI]), jx=float(y[IDX_JX]),
                   jy=float(y[IDX_JY]), jz=float(y[IDX_JZ]))

    @property
    def spin_norm(self) -> float:
        return math.sqrt(self.jx**2 + self.jy**2 + self.jz**2)


def interaction_constants(params: ModelParams, ratio: float) -> tuple[float, float]:
    """(chi1, chi2) entering the atom-only flows at coupling ratio ``ratio``.

    chi1 multiplies the Ising-like term and equals ``2*omega0*ratio**2`` for
    every ``kappa``; chi2 is the dissipative cross term of the atom-only
    model and vanishes as ``kappa -> inf``.
    """
    chi1 = 2.0 * params.omega0 * ratio * ratio
    if math.isinf(params.kappa):
        return chi1, 0.0
    chi2 = (4.0 * ratio * ratio * params.omega0**2 * params.kappa
            / (params.kappa**2 + params.omega_p**2))
    return chi1, chi2


def steady_state(params: ModelParams, ratio: float, branch: int = +1) -> MeanFieldState:
    """Stationary state at constant coupling ``ratio = lam/lam_cr``.

    Below threshold all spins point along -z and the photon mode is empty.
    Above threshold the state breaks the Z2 symmetry; ``branch`` picks the
    sign of ``jx``, and the photon amplitude carries the opposite sign.
    """
    if ratio < 0:
        raise ValueError("coupling ratio must be >= 0")
    if branch not in (+1, -1):
        raise ValueError("branch must be +1 or -1")
    if ratio <= 1.0:
        return MeanFieldState(a=0j, jx=0.0, jy=0.0, jz=-0.5)
    inv2 = 1.0 / (ratio * ratio)          # (lam_cr/lam)^2
    root = math.sqrt(1.0 - inv2 * inv2)   # sqrt(1 - (lam_cr/lam)^4)
    jx = branch * 0.5 * root
    jz = -0.5 * inv2
    if math.isinf(params.kappa):
        return MeanFieldState(a=0j, jx=jx, jy=0.0, jz=jz)
    lam = params.lam_abs(ratio)
    a = -branch * lam / (params.omega_p - 1j * params.kappa) * root
    return MeanFieldState(a=a, jx=jx, jy=0.0, jz=jz)


def mean_field_derivative(
    kind: ModelKind,
    params: ModelParams,
    ratio: float,
    state: MeanFieldState | np.ndarray,
) -> np.ndarray:
    """Time derivative of the mean-field state at coupling ratio ``ratio``.

    Reference implementation in plain Python; the compiled integration
    kernels replicate these expressions exactly and are tested against this
    function.  For atom-only models the photon components stay zero.
    """
    y = state.as_array() if isinstance(state, MeanFieldState) else np.asarray(state, dtype=float)
    aR, aI, jx, jy, jz = y
    om0 = params.omega0
    dy = np.zeros(5)
    if kind is ModelKind.DM:
        lam = params.lam_abs(ratio)
        dy[IDX_AR] = -params.kappa * aR + params.omega_p * aI
        dy[IDX_AI] = -params.omega_p * aR - params.kappa * aI - 2.0 * lam * jx
        dy[IDX_JX] = -om0 * jy
        dy[IDX_JY] = om0 * jx - 4.0 * lam * aR * jz
        dy[IDX_JZ] = 4.0 * lam * aR * jy
    else:
        chi1, chi2 = interaction_constants(params, ratio)
        if kind is ModelKind.LMG:
            chi2 = 0.0
        dy[IDX_JX] = -om0 * jy
        dy[IDX_JY] = om0 * jx + chi1 * jx * jz + chi2 * jy * jz
        dy[IDX_JZ] = -chi1 * jx * jy - chi2 * jy * jy
    return dy


def instability_duty(omega_d: float, omega0: float = 1.0, m: int = 0) -> float | None:
    """Duty cycle of the closed-system period-doubling instability.

    The dark time must be a half-integer number of free precession periods,
    which gives ``1 - (m + 1/2) * omega_d / omega0``.  Returns None when the
    condition cannot be met with a duty in [0, 1].
    """
    if omega_d <= 0:
        raise ValueError("omega_d must be > 0")
    if m < 0:
        raise ValueError("m must be >= 0")
    d = 1.0 - (m + 0.5) * omega_d / omega0
    if 0.0 <= d <= 1.0:
        return d
    return None


# ---------------------------------------------------------------------------
# initial-state specifications (shared by mean-field, DTWA and quantum runs)
# ---------------------------------------------------------------------------

#: photon seed used for polarized initial states of the photon-retaining model
DEFAULT_PHOTON_SEED = 0.01


@dataclass(frozen=True)
class PolarizedX:
    """All spins along +x; photon seeded with a small real amplitude."""

    a0: complex = DEFAULT_PHOTON_SEED


@dataclass(frozen=True)
class PolarizedNegZ:
    """All spins along -z (the normal phase); photon seeded as PolarizedX."""

    a0: complex = DEFAULT_PHOTON_SEED


@dataclass(frozen=True)
class MeanFieldBroken:
    """Symmetry-broken stationary state at coupling ratio ``lam_ref``.

    The spin direction follows the superradiant fixed point; the photon
    amplitude defaults to the matching stationary value (``a0 = None``).
    """

    lam_ref: float
    branch: int = +1
    a0: complex | None = None

    def __post_init__(self):
        if self.lam_ref <= 1.0:
            raise ValueError("MeanFieldBroken requires lam_ref > lam_cr (ratio > 1)")
        if self.branch not in (+1, -1):
            raise ValueError("branch must be +1 or -1")


InitialStateSpec = PolarizedX | PolarizedNegZ | MeanFieldBroken


def mean_field_initial_state(spec: InitialStateSpec, params: ModelParams) -> MeanFieldState:
    """Mean-field initial condition for a given spec and model."""
    photon_kept = params.kind is ModelKind.DM
    if isinstance(spec, MeanFieldBroken):
        ss = steady_state(params, spec.lam_ref, spec.branch)
        if spec.a0 is not None:
            ss = replace(ss, a=complex(spec.a0) if photon_kept else 0j)
        return ss
    a = complex(spec.a0) if photon_kept else 0j
    if isinstance(spec, PolarizedX):
        return MeanFieldState(a=a, jx=0.5, jy=0.0, jz=0.0)
    return MeanFieldState(a=a, jx=0.0, jy=0.0, jz=-0.5)


def perturbed_initial_state(base: MeanFieldState) -> MeanFieldState:
    """Slightly displaced twin used by the decorrelator diagnostic.

    ``jx`` is shifted by -5e-4, ``jy`` reset to zero and ``jz`` chosen on the
    spin sphere of radius 1/2 (southern hemisphere); the photon amplitude is
    left untouched.  Keeping the twin on the sphere makes the diagnostic
    measure trajectory separation rather than the offset of the sphere
    radius itself.
    """
    jxp = base.jx - 0.5e-3
    jxp = min(max(jxp, -0.5), 0.5)
    jzp = -math.sqrt(max(0.25 - jxp * jxp, 0.0))
    return MeanFieldState(a=base.a, jx=jxp, jy=0.0, jz=jzp)


def mean_direction(spec: InitialStateSpec) -> np.ndarray:
    """Unit vector of the collective spin direction for a spec.

    Depends only on the spec: the symmetry-broken direction is a function of
    the coupling ratio alone.
    """
    if isinstance(spec, PolarizedX):
        return np.array([1.0, 0.0, 0.0])
    if isinstance(spec, PolarizedNegZ):
        return np.array([0.0, 0.0, -1.0])
    inv2 = 1.0 / (spec.lam_ref * spec.lam_ref)
    return np.array([spec.branch * math.sqrt(1.0 - inv2 * inv2), 0.0, -inv2])
