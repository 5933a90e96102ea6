import math

import numpy as np
import pytest

from dicketc.drive import BinaryDrive, SinusoidalDrive
from dicketc.integrate import (
    IntegrationDivergedError,
    TrajectorySeries,
    build_event_schedule,
    integrate_mean_field,
    integrate_ode,
    integrate_sde,
)
from dicketc.models import (
    MeanFieldBroken,
    MeanFieldState,
    ModelKind,
    ModelParams,
    mean_field_derivative,
)

TWO_PI = 2 * math.pi


def harmonic(t, y):
    return np.array([y[1], -y[0]])


def test_harmonic_oscillator_closes():
    path = integrate_ode(harmonic, [1.0, 0.0], TWO_PI, dt_max=1e-3,
                         samples_per_period=32, period=TWO_PI)
    np.testing.assert_allclose(path.y[-1], [1.0, 0.0], atol=1e-8)


def test_lmg_free_precession_closes():
    drv = BinaryDrive(lam0=0.0, duty=0.5, omega_d=1.0)
    p = ModelParams(1.0, 1.0, math.inf, drv)
    s0 = MeanFieldState(a=0j, jx=0.5, jy=0.0, jz=0.0)
    ser = integrate_mean_field(p, s0, TWO_PI)
    assert abs(ser.jx[-1] - 0.5) < 1e-8
    assert abs(ser.jy[-1]) < 1e-8


def test_rk4_fourth_order_convergence():
    # halving the step shrinks the phase error by about 2^4; after a full
    # period the velocity component carries the phase error at first order
    errs = []
    for dt in (2e-2, 1e-2):
        path = integrate_ode(harmonic, [1.0, 0.0], TWO_PI, dt_max=dt,
                             samples_per_period=32, period=TWO_PI)
        errs.append(abs(path.y[-1, 1]))
    ratio = errs[0] / errs[1]
    assert 12 < ratio < 24


def test_diverging_rhs_raises_with_time():
    def blow_up(t, y):
        return y * 50.0
    with pytest.raises(IntegrationDivergedError) as err:
        integrate_ode(blow_up, [1.0], 10.0, dt_max=1e-2,
                      samples_per_period=32, period=1.0)
    assert 0 <= err.value.t_last <= 10.0


def test_no_step_straddles_a_switch():
    # instrumented rhs records the coupling value at every stage evaluation;
    # within one RK4 step all stages must see the same binary coupling
    drv = BinaryDrive(lam0=1.0, duty=0.37, omega_d=1.1)
    p = ModelParams(1.0, 1.0, 1.0, drv)
    Td = drv.period
    from dicketc.drive import coupling_at
    step_lams = []

    def rhs(t, y):
        lam = coupling_at(drv, min(t, 5 * Td * (1 - 1e-12)))
        step_lams.append((t, lam))
        return mean_field_derivative(ModelKind.DM, p, lam, y)

    from dicketc.drive import switch_times
    sw = switch_times(drv, 5 * Td)
    integrate_ode(rhs, [0.01, 0, 0.28, 0, -0.41], 5 * Td, dt_max=Td / 64,
                  samples_per_period=32, period=Td, switch_times=sw)
    # group stage evaluations into RK4 steps of 4; the opening stage and the
    # two midpoint stages must see one coupling value (a closing stage may
    # land exactly on a switch, which is alignment, not straddling)
    assert len(step_lams) % 4 == 0
    for k in range(0, len(step_lams), 4):
        lams = {lam for _, lam in step_lams[k:k + 3]}
        assert len(lams) == 1


def test_sde_wiener_variance():
    # pure diffusion: variance at time t is amp^2 * t, Monte Carlo over paths
    kap = 1.0
    amp = math.sqrt(kap / 2)
    t_end = 2.0
    n_paths = 10_000
    finals = np.empty(n_paths)
    for i in range(n_paths):
        path = integrate_sde(lambda t, y: np.zeros(1), [amp], [0.0], t_end,
                             dt=0.01, samples_per_period=4, period=1.0, seed=i)
        finals[i] = path.y[-1, 0]
    var = finals.var()
    expect = amp**2 * t_end
    # chi-square spread of the sample variance is ~ sqrt(2/n)
    assert abs(var - expect) < 0.05 * expect


def test_sde_zero_noise_matches_euler_bitwise():
    def drift(t, y):
        return np.array([y[1], -y[0]])
    dt = 1 / 64
    path = integrate_sde(drift, [0.0, 0.0], [1.0, 0.0], 1.0, dt=dt,
                         samples_per_period=64, period=1.0, seed=3)
    y = np.array([1.0, 0.0])
    manual = [y.copy()]
    for k in range(64):
        y = y + drift(k * dt, y) * dt
        manual.append(y.copy())
    np.testing.assert_array_equal(path.y, np.array(manual))


def test_sde_noise_components_independent():
    # increments on distinct components are uncorrelated: 3 sigma check
    n_paths = 4000
    prods = np.empty(n_paths)
    for i in range(n_paths):
        path = integrate_sde(lambda t, y: np.zeros(2), [1.0, 1.0], [0.0, 0.0],
                             1.0, dt=0.5, samples_per_period=2, period=1.0, seed=i)
        prods[i] = path.y[-1, 0] * path.y[-1, 1]
    # E[W1 W2] = 0, Var[W1 W2] = t^2 for independent Wieners
    sigma = 1.0 / math.sqrt(n_paths)
    assert abs(prods.mean()) < 3 * sigma


def test_sde_determinism():
    drift = lambda t, y: -y
    a = integrate_sde(drift, [0.5], [1.0], 1.0, dt=0.01,
                      samples_per_period=8, period=1.0, seed=42)
    b = integrate_sde(drift, [0.5], [1.0], 1.0, dt=0.01,
                      samples_per_period=8, period=1.0, seed=42)
    np.testing.assert_array_equal(a.y, b.y)


# ---------------------------------------------------------------------------
# mean-field fast path
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("kappa,kind", [(1.0, ModelKind.DM), (1e3, ModelKind.ADM),
                                        (math.inf, ModelKind.LMG)])
def test_kernel_matches_reference_rk4(kappa, kind):
    # compiled kernel against the generic RK4 driven by the Python reference
    # derivative, identical steps: agreement to rounding noise
    drv = BinaryDrive(lam0=1.1, duty=1.0, omega_d=1.0)
    p = ModelParams(1.0, 1.0, kappa, drv)
    y0 = np.array([0.05, -0.02, 0.2, 0.1, -0.4])
    Td = drv.period
    ser = integrate_mean_field(p, MeanFieldState.from_array(y0), Td,
                               dt_max=Td / 512, samples_per_period=32)
    path = integrate_ode(lambda t, y: mean_field_derivative(kind, p, 1.1, y),
                         y0, Td, dt_max=Td / 512, samples_per_period=32,
                         period=Td, switch_times=[Td])
    np.testing.assert_allclose(ser.jx, path.y[:, 2], atol=1e-13)
    np.testing.assert_allclose(ser.jz, path.y[:, 4], atol=1e-13)


def test_mean_field_determinism_bytes():
    drv = BinaryDrive(lam0=1.1, duty=0.65, omega_d=1.3)
    p = ModelParams(1.0, 1.0, 1.0, drv)
    a = integrate_mean_field(p, MeanFieldBroken(lam_ref=1.1), 10 * drv.period)
    b = integrate_mean_field(p, MeanFieldBroken(lam_ref=1.1), 10 * drv.period)
    assert a.jx.tobytes() == b.jx.tobytes()
    assert a.a.tobytes() == b.a.tobytes()


def test_stroboscopic_extraction():
    drv = BinaryDrive(lam0=1.1, duty=0.65, omega_d=1.3)
    p = ModelParams(1.0, 1.0, 1.0, drv)
    ser = integrate_mean_field(p, MeanFieldBroken(lam_ref=1.1), 10 * drv.period)
    idx = ser.stroboscopic_indices()
    assert len(idx) == 11
    np.testing.assert_allclose(ser.t[idx] / drv.period, np.arange(11), atol=1e-12)


def test_series_length_and_uniform_stride():
    drv = BinaryDrive(lam0=1.1, duty=0.3, omega_d=1.4)
    p = ModelParams(1.0, 1.0, 1.0, drv)
    S = 32
    n = 7
    ser = integrate_mean_field(p, MeanFieldBroken(lam_ref=1.1), n * drv.period,
                               samples_per_period=S)
    assert ser.n_samples == n * S + 1
    np.testing.assert_allclose(np.diff(ser.t), drv.period / S, rtol=1e-12)


def test_samples_per_period_power_of_two_enforced():
    with pytest.raises(ValueError):
        TrajectorySeries(t=np.arange(3.0), jx=np.zeros(3), jy=np.zeros(3),
                         jz=np.zeros(3), a=None, n_photon=None,
                         samples_per_period=12, period=1.0)


def test_event_schedule_snaps_switches_onto_samples():
    # duty 0.5 at S = 32: the switch coincides with sample 16 exactly
    drv = BinaryDrive(lam0=1.0, duty=0.5, omega_d=1.0)
    ev, ev_r, flags, n = build_event_schedule(drv, 2 * drv.period, 32)
    assert len(ev) == n  # no extra events inserted
    assert flags.all()


def test_sinusoidal_schedule_is_pure_samples():
    drv = SinusoidalDrive(lam0=1.0, f_d=0.5, omega_d=1.0)
    ev, ev_r, flags, n = build_event_schedule(drv, 3 * drv.period, 32)
    assert len(ev) == n
    assert flags.all()


def test_csv_roundtrip(tmp_path):
    drv = BinaryDrive(lam0=1.1, duty=0.65, omega_d=1.3)
    p = ModelParams(1.0, 1.0, 1.0, drv)
    ser = integrate_mean_field(p, MeanFieldBroken(lam_ref=1.1), 3 * drv.period)
    path = tmp_path / "traj.csv"
    ser.to_csv(path)
    back = TrajectorySeries.from_csv(path)
    np.testing.assert_allclose(back.jx, ser.jx, rtol=0, atol=0)
    np.testing.assert_allclose(back.a, ser.a)
    assert back.samples_per_period == ser.samples_per_period
    assert back.period == pytest.approx(ser.period)
    assert back.meta["omega_d"] == ser.meta["omega_d"]


def test_cache_roundtrip(tmp_path):
    drv = BinaryDrive(lam0=1.1, duty=0.3, omega_d=1.4)
    p = ModelParams(1.0, 1.0, math.inf, drv)
    ser = integrate_mean_field(p, MeanFieldBroken(lam_ref=1.1), 2 * drv.period)
    path = tmp_path / "traj.npz"
    ser.to_cache(path)
    back = TrajectorySeries.from_cache(path)
    np.testing.assert_array_equal(back.jx, ser.jx)
    np.testing.assert_array_equal(back.jz, ser.jz)


def test_sinusoidal_mean_field_runs():
    drv = SinusoidalDrive(lam0=1.1, f_d=0.5, omega_d=1.3)
    p = ModelParams(1.0, 1.0, 1.0, drv)
    ser = integrate_mean_field(p, MeanFieldBroken(lam_ref=1.1), 5 * drv.period)
    assert np.all(np.isfinite(ser.jx))
    norm = np.sqrt(ser.jx**2 + ser.jy**2 + ser.jz**2)
    assert np.max(np.abs(norm - 0.5)) < 1e-8
