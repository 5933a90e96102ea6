import json
import math

import pytest

from dicketc.analysis import Phase
from dicketc.sweep import (
    DTWALevel,
    GridAxis,
    QuantumLevel,
    SweepSpec,
    evaluate_cell,
    run_disorder_scan,
    run_kappa_scan,
    run_parameter_sweep,
    run_phase_diagram,
)

SMALL = SweepSpec(duty=GridAxis(0.25, 0.7, 2), omega_d=GridAxis(1.3, 1.4, 2),
                  kappa=1.0, seed=7)


def test_single_cell_lmg_instability_point():
    spec = SweepSpec(duty=GridAxis(0.3, 0.3, 1), omega_d=GridAxis(1.4, 1.4, 1),
                     kappa=math.inf, seed=1)
    diagram = run_phase_diagram(spec)
    assert diagram.labels[0, 0] == Phase.TC.value
    assert diagram.t_tc_over_td[0, 0] == 100.0


def test_single_cell_dissipative_tc():
    spec = SweepSpec(duty=GridAxis(0.65, 0.65, 1), omega_d=GridAxis(1.3, 1.3, 1),
                     kappa=1.0, seed=1)
    diagram = run_phase_diagram(spec)
    assert diagram.labels[0, 0] == Phase.TC.value


def test_diagram_deterministic_across_worker_counts():
    serial = run_phase_diagram(SMALL, workers=1)
    parallel = run_phase_diagram(SMALL, workers=2)
    assert serial.records == parallel.records


def test_records_jsonl_and_resume(tmp_path):
    path = tmp_path / "cells.jsonl"
    full = run_phase_diagram(SMALL, out_path=str(path))
    lines = path.read_text().splitlines()
    assert "meta" in json.loads(lines[0])
    assert len(lines) == 1 + SMALL.n_cells
    # truncate after two completed cells and resume
    partial = tmp_path / "partial.jsonl"
    partial.write_text("\n".join(lines[:3]) + "\n")
    resumed = run_phase_diagram(SMALL, out_path=str(partial), resume=True)
    assert resumed.records == full.records
    # resuming against a different spec is refused
    other = SweepSpec(duty=GridAxis(0.2, 0.7, 2), omega_d=GridAxis(1.3, 1.4, 2),
                      kappa=1.0, seed=8)
    with pytest.raises(ValueError):
        run_phase_diagram(other, out_path=str(partial), resume=True)


def test_cell_seed_derivation_stable():
    # the documented contract: cell seed = split(master, row, col, realization)
    from dicketc.drive import split_seed
    rec = evaluate_cell(SMALL, 1, 0)
    assert rec["seed"] == split_seed(SMALL.seed, 1, 0, 0)


def test_export_csv_matrices(tmp_path):
    diagram = run_phase_diagram(SMALL)
    paths = diagram.export_csv(tmp_path)
    names = {p.split("/")[-1] for p in map(str, paths)}
    assert names == {"labels.csv", "d.csv", "t_tc_over_td.csv", "xi.csv",
                     "n_photon_late.csv"}
    text = (tmp_path / "labels.csv").read_text()
    assert "spec_hash" in text.splitlines()[0]


def test_kappa_scan_rows():
    spec = SweepSpec(duty=GridAxis(0, 1, 2), omega_d=GridAxis(1, 2, 2), seed=3)
    rows = run_kappa_scan((0.65, 1.3), [0.0, 1.0, math.inf], spec)
    assert [r["kappa"] for r in rows] == [0.0, 1.0, "inf"]
    assert rows[1]["label"] == Phase.TC.value
    assert rows[0]["label"] == Phase.THERMAL.value
    assert rows[2]["label"] == Phase.THERMAL.value


def test_kappa_scan_empty_list_rejected():
    with pytest.raises(ValueError):
        run_kappa_scan((0.5, 1.5), [], SMALL)


def test_disorder_scan_zero_strength_is_unity():
    spec = SweepSpec(duty=GridAxis(0, 1, 2), omega_d=GridAxis(1, 2, 2),
                     seed=11, horizon_periods=100)
    rows = run_disorder_scan((0.65, 1.3), [1.0], "duty", [0.0], spec,
                             n_realizations=3)
    assert rows[0]["xi_rel"] == 1.0
    assert rows[0]["xi_rel_err"] == 0.0


def test_disorder_scan_rejects_bad_kind():
    with pytest.raises(ValueError):
        run_disorder_scan((0.5, 1.3), [1.0], "phase", [0.1], SMALL)


def test_disorder_amplitude_gentler_than_duty():
    # timing noise breaks the dark-time condition directly; amplitude noise
    # leaves the switching times intact, so the subharmonic weight survives
    # much better in the closed limit
    spec = SweepSpec(duty=GridAxis(0, 1, 2), omega_d=GridAxis(1, 2, 2), seed=31)
    duty = run_disorder_scan((0.3, 1.4), [math.inf], "duty", [0.05], spec,
                             n_realizations=50)
    amp = run_disorder_scan((0.3, 1.4), [math.inf], "amplitude", [0.05], spec,
                            n_realizations=50)
    assert amp[0]["xi_rel"] > 3 * duty[0]["xi_rel"]


def test_records_file_byte_identical(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    run_phase_diagram(SMALL, out_path=str(a))
    run_phase_diagram(SMALL, out_path=str(b))
    assert a.read_bytes() == b.read_bytes()


def test_parameter_sweep_tc_persistence():
    base = SweepSpec(duty=GridAxis(0.0, 1.0, 11), omega_d=GridAxis(0.5, 2.5, 11),
                     kappa=1.0, seed=32)
    lam_diagrams = run_parameter_sweep("lam0", [1.1, 1.5], base)
    counts = [d.count(Phase.TC) for d in lam_diagrams]
    assert counts[0] > 0
    assert counts[1] >= counts[0] // 2  # TCs persist at stronger coupling
    wp_diagrams = run_parameter_sweep("omega_p", [1.0, 2.0], base)
    wp_counts = [d.count(Phase.TC) for d in wp_diagrams]
    assert wp_counts[1] > 0
    assert wp_counts[1] >= wp_counts[0] // 2  # photon frequency acts weakly


def test_parameter_sweep_single_value_equals_base():
    base = run_phase_diagram(SMALL)
    sweep = run_parameter_sweep("lam0", [SMALL.lam0], SMALL)
    assert len(sweep) == 1
    assert sweep[0].records == base.records


def test_parameter_sweep_axis_validation():
    with pytest.raises(ValueError):
        run_parameter_sweep("kappa", [1.0], SMALL)


def test_error_cells_do_not_abort():
    # an invalid per-cell configuration (broken init needs lam0 > lam_cr)
    spec = SweepSpec(duty=GridAxis(0.3, 0.3, 1), omega_d=GridAxis(1.4, 1.4, 1),
                     kappa=1.0, lam0=0.9, initial_state="broken", seed=2)
    diagram = run_phase_diagram(spec)
    assert diagram.labels[0, 0] == Phase.ERROR.value
    assert "error" in diagram.cell(0, 0)


def test_quantum_grid_size_guard():
    spec = SweepSpec(duty=GridAxis(0, 1, 40), omega_d=GridAxis(1, 2, 40),
                     level=QuantumLevel(n_spins=4, n_max=8), seed=0)
    with pytest.raises(ValueError):
        run_phase_diagram(spec)


def test_dtwa_level_cell():
    # a finite ensemble at finite N carries weak physical sidebands around
    # the subharmonic, so the label may read TQC; the subharmonic must
    # dominate either way
    spec = SweepSpec(duty=GridAxis(0.3, 0.3, 1), omega_d=GridAxis(1.4, 1.4, 1),
                     kappa=math.inf, lam0=4.0, initial_state="polarized_x",
                     level=DTWALevel(n_spins=8, n_traj=64), seed=5,
                     horizon_periods=100)
    diagram = run_phase_diagram(spec)
    rec = diagram.cell(0, 0)
    assert rec["label"] in (Phase.TC.value, Phase.TQC.value)
    assert rec["xi"] > 0.9
    assert rec["subharmonic_order"] == 2
    assert rec["d"] < 0.01


def test_quantum_level_cell():
    spec = SweepSpec(duty=GridAxis(0.3, 0.3, 1), omega_d=GridAxis(1.4, 1.4, 1),
                     kappa=math.inf, lam0=4.0, initial_state="polarized_x",
                     level=QuantumLevel(n_spins=8), seed=5, horizon_periods=100)
    diagram = run_phase_diagram(spec)
    assert diagram.labels[0, 0] == Phase.TC.value


def test_quantum_level_closed_photon_cell():
    # kappa = 0 keeps the photon mode: the cell must pick a Fock cutoff
    # itself and clamp the decorrelator window to the short horizon
    spec = SweepSpec(duty=GridAxis(0.6, 0.6, 1), omega_d=GridAxis(1.3, 1.3, 1),
                     kappa=0.0, lam0=1.1, initial_state="broken",
                     level=QuantumLevel(n_spins=4), seed=2, horizon_periods=20)
    rec = evaluate_cell(spec, 0, 0)
    assert rec["label"] != Phase.ERROR.value


def test_sinusoidal_sweep_ignores_duty_axis():
    spec = SweepSpec(duty=GridAxis(0.2, 0.8, 2), omega_d=GridAxis(1.3, 1.3, 1),
                     kappa=1.0, drive_kind="sinusoidal", f_d=0.5, seed=9,
                     horizon_periods=60)
    diagram = run_phase_diagram(spec)
    assert diagram.labels[0, 0] == diagram.labels[0, 1]
    assert diagram.d[0, 0] == diagram.d[0, 1]
