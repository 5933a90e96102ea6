"""Full quantum evolution on the symmetric (Dicke) sector.

The collective dynamics conserve total spin j = N/2, so the spin Hilbert
space is the (N+1)-dimensional symmetric sector; this is exact, not an
approximation.  Closed models evolve state vectors (per-segment
eigendecomposition for piecewise-constant drives, RK4 otherwise); the open
photon-coupled model evolves a density matrix on the truncated
Fock x Dicke product space under the master equation with photon decay.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import expm

from .drive import SinusoidalDrive
from .integrate import TrajectorySeries, build_event_schedule
from .models import (
    InitialStateSpec,
    MeanFieldBroken,
    ModelKind,
    ModelParams,
    PolarizedNegZ,
    PolarizedX,
    mean_direction,
)

DEFAULT_SCHRODINGER_STEPS_PER_PERIOD = 1024
DEFAULT_LINDBLAD_STEPS_PER_PERIOD = 1024

NORM_DRIFT_TOL = 1e-6
TOP_FOCK_TOL = 1e-6


class StepSizeError(RuntimeError):
    """Norm or trace drifted beyond tolerance; integration step too coarse."""


class TruncationError(RuntimeError):
    """The top Fock level acquired population; a larger n_max is needed."""

    def __init__(self, n_max: int, population: float):
        self.n_max = n_max
        self.required_n_max = max(n_max + 4, int(math.ceil(1.5 * n_max)))
        super().__init__(
            f"top Fock level n={n_max} holds population {population:.2e}; "
            f"retry with n_max >= {self.required_n_max}")


def spin_operators(n_spins: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Collective spin matrices on the symmetric sector, m ascending."""
    if n_spins < 1:
        raise ValueError("n_spins must be >= 1")
    j = 0.5 * n_spins
    m = np.arange(-j, j)  # m values below the top
    raise_elem = np.sqrt(j * (j + 1) - m * (m + 1))
    # J+ |j,m> = c |j,m+1>: entries sit one below the diagonal with m ascending
    jp = np.diag(raise_elem, k=-1).astype(complex)
    jm = jp.conj().T
    jx = 0.5 * (jp + jm)
    jy = -0.5j * (jp - jm)
    jz = np.diag(np.arange(-j, j + 1)).astype(complex)
    return jx, jy, jz


def fock_operators(n_max: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Truncated annihilation, creation and number operators."""
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    n = np.arange(1, n_max + 1)
    a = np.diag(np.sqrt(n), k=1).astype(complex)
    return a, a.conj().T, np.diag(np.arange(n_max + 1)).astype(complex)


@dataclass
class OperatorSet:
    """Spin (and optionally photon) operators; product-space forms on demand.

    Product ordering is Fock x Dicke, index ``f * (N + 1) + s``.
    """

    n_spins: int
    n_max: int | None
    jx: np.ndarray
    jy: np.ndarray
    jz: np.ndarray
    a: np.ndarray | None = None
    adag: np.ndarray | None = None
    n_op: np.ndarray | None = None

    @property
    def spin_dim(self) -> int:
        return self.n_spins + 1

    @property
    def dim(self) -> int:
        return self.spin_dim * (self.n_max + 1 if self.n_max is not None else 1)

    def full(self, which: str) -> sp.csr_matrix:
        """Operator embedded in the product space (requires n_max)."""
        if self.n_max is None:
            raise ValueError("operator set was built without a photon mode")
        eye_f = sp.identity(self.n_max + 1, format="csr")
        eye_s = sp.identity(self.spin_dim, format="csr")
        if which in ("jx", "jy", "jz"):
            return sp.kron(eye_f, sp.csr_matrix(getattr(self, which)), format="csr")
        if which in ("a", "adag", "n_op"):
            return sp.kron(sp.csr_matrix(getattr(self, which)), eye_s, format="csr")
        raise KeyError(which)


def build_operators(n_spins: int, n_max: int | None = None) -> OperatorSet:
    jx, jy, jz = spin_operators(n_spins)
    if n_max is None:
        return OperatorSet(n_spins=n_spins, n_max=None, jx=jx, jy=jy, jz=jz)
    a, adag, n_op = fock_operators(n_max)
    return OperatorSet(n_spins=n_spins, n_max=n_max, jx=jx, jy=jy, jz=jz,
                       a=a, adag=adag, n_op=n_op)


def default_n_max(params: ModelParams, ratio: float, n_spins: int) -> int:
    """Fock cutoff scaled to the expected photon occupation (with margin)."""
    lam = params.lam_abs(ratio)
    scale = 16.0 * lam * lam * n_spins / (params.omega_p**2 + params.kappa**2)
    return max(16, int(math.ceil(scale)))


# ---------------------------------------------------------------------------
# Hamiltonians
# ---------------------------------------------------------------------------

def lmg_hamiltonian(ops: OperatorSet, params: ModelParams, ratio: float) -> np.ndarray:
    """Transverse field plus photon-mediated Ising term, spin sector only."""
    om0 = params.omega0
    return om0 * ops.jz - (om0 * ratio * ratio / ops.n_spins) * (ops.jx @ ops.jx)


def dm_hamiltonian(ops: OperatorSet, params: ModelParams, ratio: float) -> sp.csr_matrix:
    """Photon-retaining Hamiltonian on the product space."""
    lam = params.lam_abs(ratio)
    h0 = params.omega_p * ops.full("n_op") + params.omega0 * ops.full("jz")
    coupling = (ops.full("a") + ops.full("adag")) @ ops.full("jx")
    return (h0 + (2.0 * lam / math.sqrt(ops.n_spins)) * coupling).tocsr()


# ---------------------------------------------------------------------------
# states
# ---------------------------------------------------------------------------

@dataclass
class QuantumState:
    """Pure state vector or density matrix with its space metadata."""

    data: np.ndarray
    n_spins: int
    n_max: int | None = None

    @property
    def is_density(self) -> bool:
        return self.data.ndim == 2

    def check(self, tol: float = 1e-9) -> None:
        if self.is_density:
            tr = np.trace(self.data)
            if abs(tr - 1.0) > tol:
                raise ValueError(f"trace deviates from 1 by {abs(tr - 1):.2e}")
            if np.max(np.abs(self.data - self.data.conj().T)) > 1e-10:
                raise ValueError("density matrix is not Hermitian")
            w = np.linalg.eigvalsh(self.data)
            if w.min() < -1e-8:
                raise ValueError(f"density matrix has eigenvalue {w.min():.2e}")
        else:
            norm = np.linalg.norm(self.data)
            if abs(norm - 1.0) > tol:
                raise ValueError(f"norm deviates from 1 by {abs(norm - 1):.2e}")


def spin_coherent_state(n_spins: int, theta: float) -> np.ndarray:
    """|j, m=+j> rotated by ``theta`` about the y axis."""
    _, jy, _ = spin_operators(n_spins)
    top = np.zeros(n_spins + 1, dtype=complex)
    top[-1] = 1.0
    return expm(-1j * theta * jy) @ top


def initial_state(
    spec: InitialStateSpec,
    n_spins: int,
    n_max: int | None = None,
    density: bool = False,
) -> QuantumState:
    """Quantum initial state for a spec; photon mode starts in the vacuum."""
    if isinstance(spec, PolarizedNegZ):
        psi_s = np.zeros(n_spins + 1, dtype=complex)
        psi_s[0] = 1.0  # m = -j
    elif isinstance(spec, PolarizedX):
        psi_s = spin_coherent_state(n_spins, 0.5 * math.pi)
    elif isinstance(spec, MeanFieldBroken):
        d = mean_direction(spec)
        theta = math.atan2(d[0], d[2])
        psi_s = spin_coherent_state(n_spins, theta)
    else:
        raise TypeError(f"unsupported spec {spec!r}")
    if n_max is not None:
        vac = np.zeros(n_max + 1, dtype=complex)
        vac[0] = 1.0
        psi = np.kron(vac, psi_s)
    else:
        psi = psi_s
    if density:
        return QuantumState(data=np.outer(psi, psi.conj()), n_spins=n_spins, n_max=n_max)
    return QuantumState(data=psi, n_spins=n_spins, n_max=n_max)


# ---------------------------------------------------------------------------
# evolution
# ---------------------------------------------------------------------------

def evolve_schrodinger(
    params: ModelParams,
    psi0: QuantumState,
    horizon: float,
    *,
    samples_per_period: int = 32,
    dt_max: float | None = None,
    method: str = "auto",
    meta: dict | None = None,
) -> TrajectorySeries:
    """Unitary evolution of a state vector under the drive in ``params``.

    Piecewise-constant drives use exact per-segment propagators from the
    eigendecomposition of the bright and dark Hamiltonians; smooth drives
    use fixed-step RK4 with the norm drift monitored as a diagnostic (no
    renormalization is applied).
    """
    protocol = params.drive
    kind = params.kind
    if psi0.is_density:
        raise ValueError("evolve_schrodinger takes a state vector")
    smooth = isinstance(protocol, SinusoidalDrive)
    if method == "auto":
        method = "rk4" if smooth else "eig"
    if method == "eig" and smooth:
        raise ValueError("eigendecomposition requires a piecewise-constant drive")
    Td = protocol.period
    if dt_max is None:
        dt_max = Td / DEFAULT_SCHRODINGER_STEPS_PER_PERIOD
    ev, ev_r, flags, n_samp = build_event_schedule(protocol, horizon, samples_per_period)

    n_spins = psi0.n_spins
    photon = psi0.n_max is not None
    if kind is ModelKind.DM and not photon:
        raise ValueError("photon-retaining model needs a product-space state (n_max)")
    ops = build_operators(n_spins, psi0.n_max)

    def hamiltonian(ratio):
        if kind is ModelKind.LMG or kind is ModelKind.ADM:
            if kind is ModelKind.ADM:
                raise ValueError("atom-only finite-kappa model is evolved at mean-field level only")
            return lmg_hamiltonian(ops, params, ratio)
        return dm_hamiltonian(ops, params, ratio)

    psi = psi0.data.astype(complex).copy()
    out = np.empty((n_samp, len(psi)), dtype=complex)
    energy = np.empty(n_samp)
    ham_cache: dict[float, object] = {}

    def ham_at(r):
        r = float(r)
        if r not in ham_cache:
            h = hamiltonian(r)
            ham_cache[r] = h.toarray() if sp.issparse(h) else h
        return ham_cache[r]

    def mean_energy(r, v):
        return float(np.vdot(v, ham_at(r) @ v).real)

    out[0] = psi
    energy[0] = mean_energy(ev_r[0] if len(ev_r) else 0.0, psi)
    ns = 1
    if method == "eig":
        eig_cache: dict[float, tuple[np.ndarray, np.ndarray]] = {}
        for i in range(len(ev) - 1):
            width = ev[i + 1] - ev[i]
            if width > 0.0:
                r = float(ev_r[i])
                if r not in eig_cache:
                    eig_cache[r] = np.linalg.eigh(ham_at(r))
                energies, vecs = eig_cache[r]
                psi = vecs @ (np.exp(-1j * energies * width) * (vecs.conj().T @ psi))
            if flags[i + 1]:
                out[ns] = psi
                energy[ns] = mean_energy(ev_r[i], psi)
                ns += 1
    else:
        mode = 1 if smooth else 0
        lam0, fd, omd = protocol.lam0, getattr(protocol, "f_d", 0.0), protocol.omega_d
        h_cache: dict[float, object] = {}

        def h_at(r):
            if r not in h_cache:
                h_cache[r] = hamiltonian(r)
            return h_cache[r]

        def ratio_at(seg_r, t):
            return lam0 * (1.0 + fd * math.sin(omd * t)) if mode == 1 else seg_r

        for i in range(len(ev) - 1):
            t0, t1 = ev[i], ev[i + 1]
            width = t1 - t0
            if width > 0.0:
                n = max(int(math.ceil(width / dt_max)), 1)
                h_step = width / n
                for k in range(n):
                    t = t0 + k * h_step
                    k1 = -1j * (h_at(ratio_at(ev_r[i], t)) @ psi)
                    h_mid = h_at(ratio_at(ev_r[i], t + 0.5 * h_step))
                    k2 = -1j * (h_mid @ (psi + 0.5 * h_step * k1))
                    k3 = -1j * (h_mid @ (psi + 0.5 * h_step * k2))
                    k4 = -1j * (h_at(ratio_at(ev_r[i], t + h_step)) @ (psi + h_step * k3))
                    psi = psi + (h_step / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            if flags[i + 1]:
                out[ns] = psi
                energy[ns] = mean_energy(ratio_at(ev_r[i], ev[i + 1]), psi)
                ns += 1

    norms = np.linalg.norm(out, axis=1)
    if np.max(np.abs(norms - 1.0)) > NORM_DRIFT_TOL:
        raise StepSizeError(
            f"norm drifted by {np.max(np.abs(norms - 1.0)):.2e}; reduce dt_max")
    series = _vector_observables(out, norms, ops, photon, Td, samples_per_period,
                                 params, protocol, meta)
    series.extra["energy"] = energy
    return series


def _vector_observables(out, norms, ops, photon, Td, samples_per_period,
                        params, protocol, meta):
    n_samp = len(out)
    n_spins = ops.n_spins
    if photon:
        jx_f, jy_f, jz_f = (ops.full("jx"), ops.full("jy"), ops.full("jz"))
        n_f = ops.full("n_op")
        jx = np.array([np.vdot(v, jx_f @ v).real for v in out])
        jy = np.array([np.vdot(v, jy_f @ v).real for v in out])
        jz = np.array([np.vdot(v, jz_f @ v).real for v in out])
        nph = np.array([np.vdot(v, n_f @ v).real for v in out])
        dim_s = n_spins + 1
        top = np.array([np.sum(np.abs(v[-dim_s:]) ** 2) for v in out])
    else:
        jx = np.array([np.vdot(v, ops.jx @ v).real for v in out])
        jy = np.array([np.vdot(v, ops.jy @ v).real for v in out])
        jz = np.array([np.vdot(v, ops.jz @ v).real for v in out])
        nph = np.zeros(n_samp)
        top = np.zeros(n_samp)
    t = np.arange(n_samp) * (Td / samples_per_period)
    series_meta = {
        "level": "quantum",
        "model": params.kind.value,
        "n_spins": n_spins,
        "n_max": ops.n_max,
        "omega_d": protocol.omega_d,
        "lam0": protocol.lam0,
        "kappa": params.kappa if not math.isinf(params.kappa) else "inf",
    }
    if meta:
        series_meta.update(meta)
    return TrajectorySeries(
        t=t, jx=jx / n_spins, jy=jy / n_spins, jz=jz / n_spins,
        a=None, n_photon=nph if photon else None,
        samples_per_period=samples_per_period, period=Td, meta=series_meta,
        extra={"trace_or_norm": norms, "top_fock_pop": top})


def _liouvillian(h: sp.spmatrix, ops: OperatorSet, kappa: float) -> sp.csr_matrix:
    """Vectorized master-equation generator, row-major vec(rho).

    vec(A rho B) = (A kron B^T) vec(rho); the dissipator is
    kappa * (2 a rho adag - n rho - rho n).
    """
    dim = h.shape[0]
    eye = sp.identity(dim, format="csr")
    ht = h.T.tocsr()
    lv = -1j * (sp.kron(h, eye, format="csr") - sp.kron(eye, ht, format="csr"))
    if kappa > 0:
        a = ops.full("a")
        n_op = ops.full("n_op")
        lv = lv + kappa * (2.0 * sp.kron(a, a.conj(), format="csr")
                           - sp.kron(n_op, eye, format="csr")
                           - sp.kron(eye, n_op.T, format="csr"))
    return lv.tocsr()


def evolve_lindblad(
    params: ModelParams,
    rho0: QuantumState,
    horizon: float,
    *,
    samples_per_period: int = 32,
    dt_max: float | None = None,
    meta: dict | None = None,
) -> TrajectorySeries:
    """Master-equation evolution of the photon-coupled model.

    Fixed-step RK4 on vec(rho), switch-aligned.  The trace is monitored but
    never renormalized; top-Fock population above tolerance raises
    TruncationError naming the cutoff to retry with.
    """
    if not rho0.is_density:
        raise ValueError("evolve_lindblad takes a density matrix")
    if math.isinf(params.kappa) or params.kind is not ModelKind.DM:
        raise ValueError("master equation applies to the photon-retaining model")
    if params.kappa == 0:
        raise ValueError("closed system: use evolve_schrodinger")
    protocol = params.drive
    Td = protocol.period
    if dt_max is None:
        dt_max = Td / DEFAULT_LINDBLAD_STEPS_PER_PERIOD
    ev, ev_r, flags, n_samp = build_event_schedule(protocol, horizon, samples_per_period)
    n_spins, n_max = rho0.n_spins, rho0.n_max
    ops = build_operators(n_spins, n_max)
    dim = ops.dim
    smooth = isinstance(protocol, SinusoidalDrive)

    lv_cache: dict[float, sp.csr_matrix] = {}

    def lv_at(r):
        r = float(r)
        if r not in lv_cache:
            lv_cache[r] = _liouvillian(dm_hamiltonian(ops, params, r), ops, params.kappa)
        return lv_cache[r]

    lam0, fd, omd = protocol.lam0, getattr(protocol, "f_d", 0.0), protocol.omega_d

    vec = rho0.data.astype(complex).reshape(-1).copy()
    n_out = np.empty((n_samp,))
    jx_out = np.empty(n_samp)
    jy_out = np.empty(n_samp)
    jz_out = np.empty(n_samp)
    tr_out = np.empty(n_samp)
    top_out = np.empty(n_samp)

    jx_f = ops.full("jx")
    jy_f = ops.full("jy")
    jz_f = ops.full("jz")
    diag_idx = np.arange(dim) * dim + np.arange(dim)
    fock_of_diag = (np.arange(dim) // (n_spins + 1))
    top_diag = diag_idx[fock_of_diag == n_max]
    nph_weights = fock_of_diag.astype(float)

    def record(i, v):
        rho = v.reshape(dim, dim)
        diag = v[diag_idx].real
        tr_out[i] = diag.sum()
        n_out[i] = float(nph_weights @ diag)
        top_out[i] = diag[fock_of_diag == n_max].sum()
        jx_out[i] = np.trace(jx_f @ rho).real
        jy_out[i] = np.trace(jy_f @ rho).real
        jz_out[i] = np.trace(jz_f @ rho).real

    record(0, vec)
    ns = 1
    for i in range(len(ev) - 1):
        t0, t1 = ev[i], ev[i + 1]
        width = t1 - t0
        if width > 0.0:
            n = max(int(math.ceil(width / dt_max)), 1)
            h_step = width / n
            if smooth:
                for k in range(n):
                    t = t0 + k * h_step
                    l1 = lv_at(lam0 * (1.0 + fd * math.sin(omd * t)))
                    lmid = lv_at(lam0 * (1.0 + fd * math.sin(omd * (t + 0.5 * h_step))))
                    l4 = lv_at(lam0 * (1.0 + fd * math.sin(omd * (t + h_step))))
                    k1 = l1 @ vec
                    k2 = lmid @ (vec + 0.5 * h_step * k1)
                    k3 = lmid @ (vec + 0.5 * h_step * k2)
                    k4 = l4 @ (vec + h_step * k3)
                    vec = vec + (h_step / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            else:
                lv = lv_at(ev_r[i])
                for _ in range(n):
                    k1 = lv @ vec
                    k2 = lv @ (vec + 0.5 * h_step * k1)
                    k3 = lv @ (vec + 0.5 * h_step * k2)
                    k4 = lv @ (vec + h_step * k3)
                    vec = vec + (h_step / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if flags[i + 1]:
            record(ns, vec)
            ns += 1

    if np.max(np.abs(tr_out - 1.0)) > NORM_DRIFT_TOL:
        raise StepSizeError(
            f"trace drifted by {np.max(np.abs(tr_out - 1.0)):.2e}; reduce dt_max")
    worst_top = float(np.max(top_out))
    if worst_top > TOP_FOCK_TOL:
        raise TruncationError(n_max, worst_top)

    t = np.arange(n_samp) * (Td / samples_per_period)
    series_meta = {
        "level": "lindblad",
        "model": params.kind.value,
        "n_spins": n_spins,
        "n_max": n_max,
        "omega_d": protocol.omega_d,
        "lam0": protocol.lam0,
        "kappa": params.kappa,
        "dt_max": dt_max,
    }
    if meta:
        series_meta.update(meta)
    return TrajectorySeries(
        t=t, jx=jx_out / n_spins, jy=jy_out / n_spins, jz=jz_out / n_spins,
        a=None, n_photon=n_out, samples_per_period=samples_per_period,
        period=Td, meta=series_meta,
        extra={"trace_or_norm": tr_out, "top_fock_pop": top_out})


def lindblad_series(
    params: ModelParams,
    spec: InitialStateSpec,
    n_spins: int,
    horizon: float,
    *,
    n_max: int | None = None,
    samples_per_period: int = 32,
    dt_max: float | None = None,
    max_retries: int = 3,
    meta: dict | None = None,
) -> TrajectorySeries:
    """Build the initial density matrix and evolve, growing n_max on demand."""
    if n_max is None:
        n_max = default_n_max(params, params.drive.lam0, n_spins)
    last_err = None
    for _ in range(max_retries + 1):
        rho0 = initial_state(spec, n_spins, n_max=n_max, density=True)
        try:
            return evolve_lindblad(params, rho0, horizon,
                                   samples_per_period=samples_per_period,
                                   dt_max=dt_max, meta=meta)
        except TruncationError as err:
            last_err = err
            n_max = err.required_n_max
    raise last_err


# ---------------------------------------------------------------------------
# envelope diagnostics
# ---------------------------------------------------------------------------

def peak_envelope(series: TrajectorySeries) -> tuple[np.ndarray, np.ndarray]:
    """Upper envelope of jx(t): positive local maxima, parabolically refined.

    For an oscillation symmetric about zero the positive peaks trace the
    modulation envelope; negative-valued local maxima (tops of the negative
    lobes) carry no envelope information and are dropped.
    """
    if series.samples_per_period < 16:
        raise ValueError("need at least 16 samples per drive period")
    x = series.jx
    t = series.t
    if len(x) < 3:
        raise ValueError("need at least 3 samples")
    mid = (x[1:-1] > x[:-2]) & (x[1:-1] >= x[2:]) & (x[1:-1] > 0)
    idx = np.nonzero(mid)[0] + 1
    times = np.empty(len(idx))
    values = np.empty(len(idx))
    dt = series.sample_dt
    for k, i in enumerate(idx):
        denom = x[i - 1] - 2.0 * x[i] + x[i + 1]
        if denom < 0:
            shift = 0.5 * (x[i - 1] - x[i + 1]) / denom
            shift = min(max(shift, -0.5), 0.5)
            times[k] = t[i] + shift * dt
            values[k] = x[i] - 0.25 * (x[i - 1] - x[i + 1]) * shift
        else:
            times[k] = t[i]
            values[k] = x[i]
    return times, values


def beat_period(env_times: np.ndarray, env_values: np.ndarray) -> float:
    """Dominant modulation period of a peak envelope.

    Returns ``math.inf`` (the exceeds-horizon sentinel) unless the envelope
    actually collapses within the series: it must hold an interior local
    minimum and dip below half of its maximum.  Shallow wobble on top of a
    beat whose node lies beyond the horizon does not count as a beat.
    """
    env_times = np.asarray(env_times, dtype=float)
    env_values = np.asarray(env_values, dtype=float)
    if len(env_values) < 4:
        return math.inf
    interior = (env_values[1:-1] < env_values[:-2]) & (env_values[1:-1] < env_values[2:])
    if not np.any(interior) or env_values.min() >= 0.5 * env_values.max():
        return math.inf
    n = 4 * len(env_values)
    grid = np.linspace(env_times[0], env_times[-1], n)
    resampled = np.interp(grid, env_times, env_values)
    spec = np.abs(np.fft.rfft(resampled - resampled.mean())) ** 2
    if len(spec) < 2:
        return math.inf
    k = 1 + int(np.argmax(spec[1:]))
    return (env_times[-1] - env_times[0]) / k
