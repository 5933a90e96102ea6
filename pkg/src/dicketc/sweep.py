"""Phase-diagram grids, decay-rate scans, disorder scans and parameter sweeps.

Every grid cell is an independent job: build the drive for the cell's duty
cycle and drive frequency, pick the model for the decay rate, integrate the
base trajectory and its displaced twin, then classify.  Cell seeds derive
from the master seed and the cell's indices, so diagrams are reproducible
for any worker count and can be resumed from a partial record file.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from .analysis import (
    AnalysisThresholds,
    DEFAULT_THRESHOLDS,
    Phase,
    classify_phase,
    crystalline_fraction,
    decorrelator_from_series,
    tc_lifetime,
)
from .drive import (
    BinaryDrive,
    BinaryNoisyAmplitudeDrive,
    BinaryNoisyDutyDrive,
    SinusoidalDrive,
    sample_disorder,
    split_seed,
)
from .dtwa import evolve_dtwa
from .integrate import integrate_mean_field
from .models import (
    MeanFieldBroken,
    ModelParams,
    PolarizedNegZ,
    PolarizedX,
    mean_field_initial_state,
    perturbed_initial_state,
)

INITIAL_STATE_NAMES = ("broken", "polarized_x", "polarized_neg_z")

MAX_NON_MEANFIELD_CELLS = 1000


@dataclass(frozen=True)
class GridAxis:
    lo: float
    hi: float
    count: int

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("grid count must be >= 1")

    def values(self) -> np.ndarray:
        if self.count == 1:
            return np.array([self.lo])
        return np.linspace(self.lo, self.hi, self.count)


@dataclass(frozen=True)
class MeanFieldLevel:
    kind: str = "meanfield"


@dataclass(frozen=True)
class DTWALevel:
    n_spins: int
    n_traj: int
    kind: str = "dtwa"


@dataclass(frozen=True)
class QuantumLevel:
    n_spins: int
    n_max: int | None = None
    kind: str = "quantum"


@dataclass(frozen=True)
class SweepSpec:
    """Full description of a sweep; everything needed to reproduce it."""

    duty: GridAxis = GridAxis(0.0, 1.0, 101)
    omega_d: GridAxis = GridAxis(0.5, 2.5, 101)
    kappa: float = 1.0                    # math.inf selects the closed limit
    lam0: float = 1.1                     # units of the critical coupling
    omega_p: float = 1.0
    initial_state: str = "broken"
    branch: int = +1
    drive_kind: str = "binary"            # binary | sinusoidal
    f_d: float = 0.5                      # sinusoidal modulation strength
    horizon_periods: int = 100
    samples_per_period: int = 32
    level: MeanFieldLevel | DTWALevel | QuantumLevel = field(default_factory=MeanFieldLevel)
    thresholds: AnalysisThresholds = DEFAULT_THRESHOLDS
    ode_steps_per_period: int = 2048
    seed: int = 0

    def __post_init__(self):
        if self.initial_state not in INITIAL_STATE_NAMES:
            raise ValueError(f"initial_state must be one of {INITIAL_STATE_NAMES}")
        if self.drive_kind not in ("binary", "sinusoidal"):
            raise ValueError("drive_kind must be binary or sinusoidal")

    @property
    def n_cells(self) -> int:
        return self.duty.count * self.omega_d.count

    def to_jsonable(self) -> dict:
        level = {"kind": self.level.kind}
        if isinstance(self.level, DTWALevel):
            level.update(n_spins=self.level.n_spins, n_traj=self.level.n_traj)
        if isinstance(self.level, QuantumLevel):
            level.update(n_spins=self.level.n_spins, n_max=self.level.n_max)
        return {
            "duty": [self.duty.lo, self.duty.hi, self.duty.count],
            "omega_d": [self.omega_d.lo, self.omega_d.hi, self.omega_d.count],
            "kappa": "inf" if math.isinf(self.kappa) else self.kappa,
            "lam0": self.lam0,
            "omega_p": self.omega_p,
            "initial_state": self.initial_state,
            "branch": self.branch,
            "drive_kind": self.drive_kind,
            "f_d": self.f_d,
            "horizon_periods": self.horizon_periods,
            "samples_per_period": self.samples_per_period,
            "level": level,
            "thresholds": vars(self.thresholds).copy(),
            "ode_steps_per_period": self.ode_steps_per_period,
            "seed": self.seed,
            "version": __version__,
        }

    def spec_hash(self) -> str:
        import hashlib
        blob = json.dumps(self.to_jsonable(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def build_drive(spec: SweepSpec, duty: float, omega_d: float,
                disorder_kind: str | None = None, strength: float = 0.0):
    if spec.drive_kind == "sinusoidal":
        return SinusoidalDrive(lam0=spec.lam0, f_d=spec.f_d, omega_d=omega_d)
    if disorder_kind == "duty":
        return BinaryNoisyDutyDrive(lam0=spec.lam0, duty=duty, omega_d=omega_d,
                                    delta_duty=strength)
    if disorder_kind == "amplitude":
        return BinaryNoisyAmplitudeDrive(lam0=spec.lam0, duty=duty, omega_d=omega_d,
                                         delta_lam=strength)
    return BinaryDrive(lam0=spec.lam0, duty=duty, omega_d=omega_d)


def build_initial_spec(spec: SweepSpec):
    if spec.initial_state == "broken":
        return MeanFieldBroken(lam_ref=spec.lam0, branch=spec.branch)
    if spec.initial_state == "polarized_x":
        return PolarizedX()
    return PolarizedNegZ()


def _cell_series(spec: SweepSpec, params: ModelParams, cell_seed: int,
                 realization=None):
    """Base and perturbed series for one cell at the spec's level."""
    Td = params.drive.period
    horizon = spec.horizon_periods * Td
    init = build_initial_spec(spec)
    dt_max = Td / spec.ode_steps_per_period
    if isinstance(spec.level, MeanFieldLevel):
        base = mean_field_initial_state(init, params)
        pert = perturbed_initial_state(base)
        sb = integrate_mean_field(params, base, horizon, realization=realization,
                                  dt_max=dt_max,
                                  samples_per_period=spec.samples_per_period)
        sp = integrate_mean_field(params, pert, horizon, realization=realization,
                                  dt_max=dt_max,
                                  samples_per_period=spec.samples_per_period)
        return sb, sp
    if isinstance(spec.level, DTWALevel):
        sb = evolve_dtwa(params, init, spec.level.n_spins, spec.level.n_traj,
                         horizon, cell_seed, realization=realization,
                         samples_per_period=spec.samples_per_period)
        # the displaced twin is evolved at mean-field level: the decorrelator
        # probes the classical flow, not sampling noise
        pert_dir = perturbed_initial_state(mean_field_initial_state(init, params))
        sp = integrate_mean_field(params, pert_dir, horizon, realization=realization,
                                  dt_max=dt_max,
                                  samples_per_period=spec.samples_per_period)
        return sb, sp
    from .quantum import default_n_max, evolve_schrodinger, initial_state, lindblad_series
    n = spec.level.n_spins
    if math.isinf(params.kappa) or params.kappa == 0:
        n_max = None
        if params.kappa == 0:
            n_max = spec.level.n_max or default_n_max(params, spec.lam0, n)
        psi0 = initial_state(init, n, n_max=n_max)
        sb = evolve_schrodinger(params, psi0, horizon,
                                samples_per_period=spec.samples_per_period)
    else:
        sb = lindblad_series(params, init, n, horizon, n_max=spec.level.n_max,
                             samples_per_period=spec.samples_per_period)
    pert = perturbed_initial_state(mean_field_initial_state(init, params))
    sp = integrate_mean_field(params, pert, horizon,
                              dt_max=dt_max,
                              samples_per_period=spec.samples_per_period)
    return sb, sp


def evaluate_cell(spec: SweepSpec, row: int, col: int) -> dict:
    """Diagnostics record for grid cell (row: omega_d index, col: duty index)."""
    duty = float(spec.duty.values()[col])
    omega_d = float(spec.omega_d.values()[row])
    cell_seed = split_seed(spec.seed, row, col, 0)
    drive = build_drive(spec, duty, omega_d)
    params = ModelParams(1.0, spec.omega_p, spec.kappa, drive)
    Td = drive.period
    record = {
        "row": row, "col": col, "D": duty, "wd": omega_d,
        "kappa": "inf" if math.isinf(spec.kappa) else spec.kappa,
        "seed": cell_seed,
    }
    try:
        sb, sp = _cell_series(spec, params, cell_seed)
        # short-horizon runs fall back to averaging over the second half
        t_i = min(spec.thresholds.t_i_periods * Td, 0.5 * sb.horizon)
        d = decorrelator_from_series(sb, sp, t_i, sb.horizon)
        t_tc = tc_lifetime(sb, omega_d, thresholds=spec.thresholds)
        cls = classify_phase(sb, d, t_tc, spec.lam0, spec.thresholds)
        record.update(cls.to_jsonable())
    except Exception as err:  # per-cell failures never abort the sweep
        record.update(label=Phase.ERROR.value, error=f"{type(err).__name__}: {err}",
                      d=math.nan, T_TC_over_Td=math.nan, xi=math.nan,
                      n_photon_late=math.nan, subharmonic_order=0)
    return record


@dataclass
class PhaseDiagram:
    """Grid of labels plus per-cell diagnostics."""

    spec: SweepSpec
    labels: np.ndarray          # (n_omega_d, n_duty) of str
    d: np.ndarray
    t_tc_over_td: np.ndarray
    xi: np.ndarray
    n_photon_late: np.ndarray
    records: list

    @classmethod
    def from_records(cls, spec: SweepSpec, records: list) -> "PhaseDiagram":
        ny, nx = spec.omega_d.count, spec.duty.count
        labels = np.full((ny, nx), "", dtype=object)
        arrays = {k: np.full((ny, nx), math.nan) for k in
                  ("d", "T_TC_over_Td", "xi", "n_photon_late")}
        ordered = sorted(records, key=lambda r: (r["row"], r["col"]))
        for r in ordered:
            labels[r["row"], r["col"]] = r["label"]
            for k in arrays:
                arrays[k][r["row"], r["col"]] = r.get(k, math.nan)
        return cls(spec=spec, labels=labels, d=arrays["d"],
                   t_tc_over_td=arrays["T_TC_over_Td"], xi=arrays["xi"],
                   n_photon_late=arrays["n_photon_late"], records=ordered)

    def count(self, label: Phase) -> int:
        return int(np.sum(self.labels == label.value))

    def cell(self, row: int, col: int) -> dict:
        for r in self.records:
            if r["row"] == row and r["col"] == col:
                return r
        raise KeyError((row, col))

    def export_csv(self, out_dir) -> list:
        """One CSV matrix per diagnostic; columns are duty values."""
        os.makedirs(out_dir, exist_ok=True)
        duty = self.spec.duty.values()
        wd = self.spec.omega_d.values()
        paths = []
        matrices = {"labels": self.labels, "d": self.d,
                    "t_tc_over_td": self.t_tc_over_td, "xi": self.xi,
                    "n_photon_late": self.n_photon_late}
        for name, m in matrices.items():
            path = os.path.join(out_dir, f"{name}.csv")
            with open(path, "w") as fh:
                fh.write("# meta: " + json.dumps(
                    {"spec_hash": self.spec.spec_hash(), "version": __version__}) + "\n")
                fh.write("omega_d\\duty," + ",".join(f"{v:.10g}" for v in duty) + "\n")
                for i, w in enumerate(wd):
                    row = ",".join(str(m[i, j]) for j in range(len(duty)))
                    fh.write(f"{w:.10g},{row}\n")
            paths.append(path)
        return paths


def _cell_worker(args):
    spec, row, col = args
    return evaluate_cell(spec, row, col)


def _meta_record(spec: SweepSpec) -> dict:
    return {"meta": {"spec": spec.to_jsonable(), "spec_hash": spec.spec_hash(),
                     "version": __version__}}


def run_phase_diagram(
    spec: SweepSpec,
    workers: int = 1,
    out_path=None,
    resume: bool = False,
    progress: bool = False,
) -> PhaseDiagram:
    """Evaluate every grid cell, optionally appending records to a JSONL file.

    With ``resume`` the record file is scanned first and completed cells are
    kept (the spec hash must match).  Cells run in parallel but the result
    is independent of the worker count.
    """
    if not isinstance(spec.level, MeanFieldLevel) and spec.n_cells > MAX_NON_MEANFIELD_CELLS:
        raise ValueError(
            f"{spec.n_cells} cells at level {spec.level.kind!r}: grids above "
            f"{MAX_NON_MEANFIELD_CELLS} cells are mean-field only")
    done: dict[tuple[int, int], dict] = {}
    fh = None
    if out_path is not None:
        if resume and os.path.exists(out_path):
            with open(out_path) as f:
                for line in f:
                    rec = json.loads(line)
                    if "meta" in rec:
                        if rec["meta"]["spec_hash"] != spec.spec_hash():
                            raise ValueError("record file belongs to a different spec")
                        continue
                    done[(rec["row"], rec["col"])] = rec
            fh = open(out_path, "a")
        else:
            fh = open(out_path, "w")
            fh.write(json.dumps(_meta_record(spec)) + "\n")
            fh.flush()

    pending = [(row, col)
               for row in range(spec.omega_d.count)
               for col in range(spec.duty.count)
               if (row, col) not in done]
    records = list(done.values())
    bar = None
    if progress:
        from tqdm import tqdm
        bar = tqdm(total=len(pending), desc="cells", unit="cell")
    try:
        if workers > 1 and len(pending) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for rec in pool.map(_cell_worker,
                                    [(spec, r, c) for r, c in pending],
                                    chunksize=max(1, len(pending) // (8 * workers))):
                    records.append(rec)
                    if fh is not None:
                        fh.write(json.dumps(rec) + "\n")
                    if bar:
                        bar.update(1)
        else:
            for row, col in pending:
                rec = evaluate_cell(spec, row, col)
                records.append(rec)
                if fh is not None:
                    fh.write(json.dumps(rec) + "\n")
                if bar:
                    bar.update(1)
    finally:
        if bar:
            bar.close()
        if fh is not None:
            fh.close()
    return PhaseDiagram.from_records(spec, records)


def run_kappa_scan(
    point: tuple[float, float],
    kappa_list,
    spec: SweepSpec,
    workers: int = 1,
) -> list:
    """One classified record per decay rate at a fixed (duty, omega_d) point."""
    if len(kappa_list) == 0:
        raise ValueError("kappa_list must be nonempty")
    duty, omega_d = point
    rows = []
    for i, kappa in enumerate(kappa_list):
        cell_spec = replace(spec, kappa=float(kappa),
                            duty=GridAxis(duty, duty, 1),
                            omega_d=GridAxis(omega_d, omega_d, 1),
                            seed=split_seed(spec.seed, i))
        rec = evaluate_cell(cell_spec, 0, 0)
        rec["kappa"] = "inf" if math.isinf(kappa) else float(kappa)
        rows.append(rec)
    return rows


def run_disorder_scan(
    point: tuple[float, float],
    kappa_list,
    disorder_kind: str,
    strengths,
    spec: SweepSpec,
    n_realizations: int = 100,
) -> list:
    """Relative crystalline fraction vs disorder strength per decay rate."""
    if disorder_kind not in ("duty", "amplitude"):
        raise ValueError("disorder_kind must be 'duty' or 'amplitude'")
    duty, omega_d = point
    init = build_initial_spec(spec)
    rows = []
    for ik, kappa in enumerate(kappa_list):
        clean_drive = build_drive(spec, duty, omega_d)
        params = ModelParams(1.0, spec.omega_p, float(kappa), clean_drive)
        Td = clean_drive.period
        horizon = spec.horizon_periods * Td
        dt_max = Td / spec.ode_steps_per_period
        base = mean_field_initial_state(init, params)
        clean = integrate_mean_field(params, base, horizon, dt_max=dt_max,
                                     samples_per_period=spec.samples_per_period)
        for istr, strength in enumerate(strengths):
            noisy_drive = build_drive(spec, duty, omega_d, disorder_kind, float(strength))
            noisy_params = ModelParams(1.0, spec.omega_p, float(kappa), noisy_drive)
            series = []
            for r in range(n_realizations):
                seed = split_seed(spec.seed, ik, istr, r)
                realization = sample_disorder(noisy_drive, seed, spec.horizon_periods)
                series.append(integrate_mean_field(
                    noisy_params, base, horizon, realization=realization,
                    dt_max=dt_max, samples_per_period=spec.samples_per_period))
            cf = crystalline_fraction(series, clean, omega_d)
            rows.append({
                "kappa": "inf" if math.isinf(kappa) else float(kappa),
                "disorder_kind": disorder_kind,
                "strength": float(strength),
                "xi": cf.xi, "xi_err": cf.xi_err, "xi0": cf.xi0,
                "xi_rel": cf.relative, "xi_rel_err": cf.relative_err,
                "n_realizations": cf.n_realizations,
            })
    return rows


def run_parameter_sweep(axis: str, values, base_spec: SweepSpec,
                        workers: int = 1) -> list:
    """One phase diagram per value of ``lam0`` or ``omega_p``."""
    if axis not in ("lam0", "omega_p"):
        raise ValueError("axis must be 'lam0' or 'omega_p'")
    if len(values) == 0:
        raise ValueError("values must be nonempty")
    diagrams = []
    for v in values:
        spec = replace(base_spec, **{axis: float(v)})
        diagrams.append(run_phase_diagram(spec, workers=workers))
    return diagrams
