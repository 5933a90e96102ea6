"""Command-line front end.

Subcommands map one-to-one onto the library's run modes::

    dicketc trajectory     --config cfg.json --out outdir
    dicketc phase-diagram  --config cfg.json --out outdir [--workers K]
    dicketc kappa-scan     --config cfg.json --out outdir
    dicketc disorder-scan  --config cfg.json --out outdir
    dicketc quantum        --config cfg.json --out outdir
    dicketc dtwa           --config cfg.json --out outdir
    dicketc classify       series.csv [--out outdir]

Configuration is a JSON document with a fixed key schema (unknown keys are
rejected); ``--preset NAME`` loads a packaged example configuration.  Every
output file carries a metadata header holding the effective configuration,
its hash, the seed and the package version, which suffices to re-run the
identical computation.  Exit codes: 0 success, 2 configuration error,
3 numerical failure, 4 Fock-truncation failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from importlib import resources

import numpy as np

from . import __version__
from .analysis import (
    AnalysisThresholds,
    classify_phase,
    decorrelator_from_series,
    power_spectrum,
    tc_lifetime,
)
from .drive import ConfigurationError
from .integrate import IntegrationDivergedError, TrajectorySeries, integrate_mean_field
from .models import (
    MeanFieldBroken,
    ModelParams,
    PolarizedNegZ,
    PolarizedX,
)
from .sweep import (
    DTWALevel,
    GridAxis,
    MeanFieldLevel,
    QuantumLevel,
    SweepSpec,
    run_disorder_scan,
    run_kappa_scan,
    run_phase_diagram,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_TRUNCATION = 4


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration schema
# ---------------------------------------------------------------------------

DEFAULT_CONFIG = {
    "physics": {"omega_p": 1.0, "kappa": 1.0, "lam0": 1.1},
    "drive": {"protocol": "binary", "duty": 0.65, "omega_d": 1.3,
              "delta_duty": 0.0, "delta_lam": 0.0, "f_d": 0.5},
    "initial_state": {"kind": "broken", "branch": 1, "a0": None},
    "level": {"kind": "meanfield", "n_spins": 8, "n_traj": 1000, "n_max": None},
    "horizon_periods": 100,
    "samples_per_period": 32,
    "integration": {"ode_steps_per_period": 2048, "sde_steps_per_period": 4096,
                    "lindblad_steps_per_period": 1024},
    "analysis": {"d_threshold": 0.01, "ln_p_threshold": -8.0, "exclusion_bins": 2,
                 "tc_min_periods": 16, "tc_settle_periods": 8,
                 "photon_threshold": 1e-4, "jx_threshold": 1e-3,
                 "late_window_periods": 25, "strobe_rel_tol": 0.1,
                 "t_i_periods": 50},
    "grid": {"duty": [0.0, 1.0, 101], "omega_d": [0.5, 2.5, 101]},
    "scan": {"point": [0.65, 1.3], "kappa_list": [0.0, 0.1, 1.0, 5.0, 10.0, 21.0,
                                                  100.0, 1000.0, "inf"],
             "disorder_kind": "duty",
             "strengths": [0.0, 0.025, 0.05, 0.075, 0.1],
             "n_realizations": 100},
    "seed": 12345,
}

_PROTOCOLS = ("binary", "binary_noisy_duty", "binary_noisy_amplitude", "sinusoidal")
_INIT_KINDS = ("broken", "polarized_x", "polarized_neg_z")
_LEVELS = ("meanfield", "dtwa", "quantum")


def _merge(defaults, user, path=""):
    """Defaults overlaid with user values; unknown keys rejected."""
    if not isinstance(user, dict):
        raise ConfigError(f"expected an object at {path or 'top level'}")
    merged = {}
    for key, dval in defaults.items():
        if key in user and isinstance(dval, dict):
            merged[key] = _merge(dval, user[key], f"{path}{key}.")
        elif key in user:
            merged[key] = user[key]
        else:
            merged[key] = dval
    unknown = set(user) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown configuration key(s): "
                          f"{', '.join(path + k for k in sorted(unknown))}")
    return merged


def load_config(path=None, preset=None, overrides=None) -> dict:
    user = {}
    if preset is not None:
        ref = resources.files("dicketc").joinpath(f"presets/{preset}.json")
        if not ref.is_file():
            available = sorted(p.name[:-5] for p in
                               resources.files("dicketc").joinpath("presets").iterdir()
                               if p.name.endswith(".json"))
            raise ConfigError(f"unknown preset {preset!r}; available: {available}")
        user = json.loads(ref.read_text())
        user.pop("description", None)
    if path is not None:
        try:
            with open(path) as fh:
                file_cfg = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as err:
            raise ConfigError(f"config file {path} is not valid JSON: {err}")
        file_cfg.pop("description", None)
        user = _merge(user, file_cfg) if user else file_cfg
    cfg = _merge(DEFAULT_CONFIG, user)
    if overrides:
        for key, value in overrides.items():
            if value is not None:
                cfg[key] = value
    _validate(cfg)
    return cfg


def _validate(cfg):
    kappa = cfg["physics"]["kappa"]
    if kappa != "inf" and not (isinstance(kappa, (int, float)) and kappa >= 0):
        raise ConfigError('physics.kappa must be a number >= 0 or "inf"')
    if cfg["physics"]["lam0"] < 0:
        raise ConfigError("physics.lam0 must be >= 0")
    if cfg["drive"]["protocol"] not in _PROTOCOLS:
        raise ConfigError(f"drive.protocol must be one of {_PROTOCOLS}")
    if not 0 <= cfg["drive"]["duty"] <= 1:
        raise ConfigError("drive.duty must lie in [0, 1]")
    if cfg["drive"]["omega_d"] <= 0:
        raise ConfigError("drive.omega_d must be > 0")
    if cfg["initial_state"]["kind"] not in _INIT_KINDS:
        raise ConfigError(f"initial_state.kind must be one of {_INIT_KINDS}")
    if cfg["level"]["kind"] not in _LEVELS:
        raise ConfigError(f"level.kind must be one of {_LEVELS}")
    if cfg["horizon_periods"] < 1:
        raise ConfigError("horizon_periods must be >= 1")
    s = cfg["samples_per_period"]
    if s < 1 or (s & (s - 1)):
        raise ConfigError("samples_per_period must be a power of two")


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# config -> objects
# ---------------------------------------------------------------------------

def _kappa(cfg) -> float:
    k = cfg["physics"]["kappa"]
    return math.inf if k == "inf" else float(k)


def _drive(cfg):
    from .drive import (BinaryDrive, BinaryNoisyAmplitudeDrive,
                        BinaryNoisyDutyDrive, SinusoidalDrive)
    d = cfg["drive"]
    lam0 = cfg["physics"]["lam0"]
    if d["protocol"] == "binary":
        return BinaryDrive(lam0=lam0, duty=d["duty"], omega_d=d["omega_d"])
    if d["protocol"] == "binary_noisy_duty":
        return BinaryNoisyDutyDrive(lam0=lam0, duty=d["duty"], omega_d=d["omega_d"],
                                    delta_duty=d["delta_duty"])
    if d["protocol"] == "binary_noisy_amplitude":
        return BinaryNoisyAmplitudeDrive(lam0=lam0, duty=d["duty"], omega_d=d["omega_d"],
                                         delta_lam=d["delta_lam"])
    return SinusoidalDrive(lam0=lam0, f_d=d["f_d"], omega_d=d["omega_d"])


def _params(cfg) -> ModelParams:
    return ModelParams(1.0, cfg["physics"]["omega_p"], _kappa(cfg), _drive(cfg))


def _initial_spec(cfg):
    init = cfg["initial_state"]
    if init["kind"] == "broken":
        return MeanFieldBroken(lam_ref=cfg["physics"]["lam0"], branch=init["branch"],
                               a0=init["a0"])
    cls = PolarizedX if init["kind"] == "polarized_x" else PolarizedNegZ
    return cls() if init["a0"] is None else cls(a0=init["a0"])


def _thresholds(cfg) -> AnalysisThresholds:
    return AnalysisThresholds(**cfg["analysis"])


def _sweep_spec(cfg) -> SweepSpec:
    level_cfg = cfg["level"]
    if level_cfg["kind"] == "meanfield":
        level = MeanFieldLevel()
    elif level_cfg["kind"] == "dtwa":
        level = DTWALevel(n_spins=level_cfg["n_spins"], n_traj=level_cfg["n_traj"])
    else:
        level = QuantumLevel(n_spins=level_cfg["n_spins"], n_max=level_cfg["n_max"])
    duty = cfg["grid"]["duty"]
    wd = cfg["grid"]["omega_d"]
    return SweepSpec(
        duty=GridAxis(duty[0], duty[1], int(duty[2])),
        omega_d=GridAxis(wd[0], wd[1], int(wd[2])),
        kappa=_kappa(cfg),
        lam0=cfg["physics"]["lam0"],
        omega_p=cfg["physics"]["omega_p"],
        initial_state=cfg["initial_state"]["kind"],
        branch=cfg["initial_state"]["branch"],
        drive_kind="sinusoidal" if cfg["drive"]["protocol"] == "sinusoidal" else "binary",
        f_d=cfg["drive"]["f_d"],
        horizon_periods=cfg["horizon_periods"],
        samples_per_period=cfg["samples_per_period"],
        level=level,
        thresholds=_thresholds(cfg),
        ode_steps_per_period=cfg["integration"]["ode_steps_per_period"],
        seed=cfg["seed"],
    )


def _meta(cfg, command) -> dict:
    return {"command": command, "config": cfg, "config_hash": config_hash(cfg),
            "seed": cfg["seed"], "version": __version__}


def _write_rows_csv(path, rows, columns, meta):
    with open(path, "w") as fh:
        fh.write("# meta: " + json.dumps(meta) + "\n")
        fh.write(",".join(columns) + "\n")
        for r in rows:
            fh.write(",".join(str(r.get(c, "")) for c in columns) + "\n")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_trajectory(cfg, out_dir, args) -> int:
    params = _params(cfg)
    Td = params.drive.period
    horizon = cfg["horizon_periods"] * Td
    init = _initial_spec(cfg)
    dt_max = Td / cfg["integration"]["ode_steps_per_period"]
    meta = _meta(cfg, "trajectory")
    series = integrate_mean_field(params, init, horizon, dt_max=dt_max,
                                  samples_per_period=cfg["samples_per_period"],
                                  meta={"config_hash": meta["config_hash"],
                                        "seed": cfg["seed"], "version": __version__})
    csv_path = os.path.join(out_dir, "trajectory.csv")
    series.to_csv(csv_path)
    written = [csv_path]
    if args.spectrum:
        ps = power_spectrum(series, 0.0, series.horizon)
        sp_path = os.path.join(out_dir, "spectrum.csv")
        ps.to_csv(sp_path, meta=meta)
        written.append(sp_path)
    if not args.no_figures:
        from .plotting import save_trajectory_figure
        fig_path = os.path.join(out_dir, "trajectory.png")
        save_trajectory_figure(series, fig_path)
        written.append(fig_path)
    for p in written:
        print(p)
    return EXIT_OK


def cmd_phase_diagram(cfg, out_dir, args) -> int:
    spec = _sweep_spec(cfg)
    jsonl = os.path.join(out_dir, "cells.jsonl")
    diagram = run_phase_diagram(spec, workers=args.workers, out_path=jsonl,
                                resume=args.resume, progress=not args.quiet)
    written = [jsonl] + diagram.export_csv(out_dir)
    if not args.no_figures:
        from .plotting import save_phase_diagram_figure
        fig_path = os.path.join(out_dir, "phase_diagram.png")
        save_phase_diagram_figure(diagram, fig_path)
        written.append(fig_path)
    for p in written:
        print(p)
    return EXIT_OK


_SCAN_COLUMNS = ["kappa", "label", "d", "T_TC_over_Td", "xi", "n_photon_late",
                 "subharmonic_order", "D", "wd", "seed"]


def cmd_kappa_scan(cfg, out_dir, args) -> int:
    spec = _sweep_spec(cfg)
    point = tuple(cfg["scan"]["point"])
    kappas = [math.inf if k == "inf" else float(k) for k in cfg["scan"]["kappa_list"]]
    rows = run_kappa_scan(point, kappas, spec, workers=args.workers)
    for r in rows:
        r["kappa"] = "inf" if r["kappa"] == "inf" or (
            isinstance(r["kappa"], float) and math.isinf(r["kappa"])) else r["kappa"]
    path = os.path.join(out_dir, "kappa_scan.csv")
    _write_rows_csv(path, rows, _SCAN_COLUMNS, _meta(cfg, "kappa-scan"))
    written = [path]
    if not args.no_figures:
        from .plotting import save_kappa_scan_figure
        fig_path = os.path.join(out_dir, "kappa_scan.png")
        save_kappa_scan_figure(rows, fig_path)
        written.append(fig_path)
    for p in written:
        print(p)
    return EXIT_OK


def cmd_disorder_scan(cfg, out_dir, args) -> int:
    spec = _sweep_spec(cfg)
    scan = cfg["scan"]
    point = tuple(scan["point"])
    kappas = [math.inf if k == "inf" else float(k) for k in scan["kappa_list"]]
    rows = run_disorder_scan(point, kappas, scan["disorder_kind"],
                             scan["strengths"], spec,
                             n_realizations=scan["n_realizations"])
    path = os.path.join(out_dir, "disorder_scan.csv")
    cols = ["kappa", "disorder_kind", "strength", "xi", "xi_err", "xi0",
            "xi_rel", "xi_rel_err", "n_realizations"]
    _write_rows_csv(path, rows, cols, _meta(cfg, "disorder-scan"))
    written = [path]
    if not args.no_figures:
        from .plotting import save_disorder_scan_figure
        fig_path = os.path.join(out_dir, "disorder_scan.png")
        save_disorder_scan_figure(rows, fig_path)
        written.append(fig_path)
    for p in written:
        print(p)
    return EXIT_OK


def cmd_quantum(cfg, out_dir, args) -> int:
    from .quantum import evolve_schrodinger, initial_state, lindblad_series, peak_envelope
    params = _params(cfg)
    Td = params.drive.period
    horizon = cfg["horizon_periods"] * Td
    init = _initial_spec(cfg)
    n = cfg["level"]["n_spins"]
    meta_extra = {"config_hash": config_hash(cfg), "seed": cfg["seed"],
                  "version": __version__}
    if math.isinf(params.kappa) or params.kappa == 0:
        n_max = cfg["level"]["n_max"] if params.kappa == 0 else None
        psi0 = initial_state(init, n, n_max=n_max)
        series = evolve_schrodinger(params, psi0, horizon,
                                    samples_per_period=cfg["samples_per_period"],
                                    meta=meta_extra)
    else:
        series = lindblad_series(
            params, init, n, horizon, n_max=cfg["level"]["n_max"],
            samples_per_period=cfg["samples_per_period"],
            dt_max=Td / cfg["integration"]["lindblad_steps_per_period"],
            meta=meta_extra)
    csv_path = os.path.join(out_dir, "quantum.csv")
    series.to_csv(csv_path)
    env_t, env_x = peak_envelope(series)
    env_path = os.path.join(out_dir, "envelope.csv")
    with open(env_path, "w") as fh:
        fh.write("# meta: " + json.dumps(_meta(cfg, "quantum")) + "\n")
        fh.write("t,jx_peak\n")
        np.savetxt(fh, np.column_stack([env_t, env_x]), delimiter=",", fmt="%.17g")
    written = [csv_path, env_path]
    if not args.no_figures:
        from .plotting import save_envelope_figure
        fig_path = os.path.join(out_dir, "quantum.png")
        save_envelope_figure(series, env_t, env_x, fig_path)
        written.append(fig_path)
    for p in written:
        print(p)
    return EXIT_OK


def cmd_dtwa(cfg, out_dir, args) -> int:
    from .dtwa import evolve_dtwa
    params = _params(cfg)
    Td = params.drive.period
    horizon = cfg["horizon_periods"] * Td
    series = evolve_dtwa(params, _initial_spec(cfg), cfg["level"]["n_spins"],
                         cfg["level"]["n_traj"], horizon, cfg["seed"],
                         samples_per_period=cfg["samples_per_period"],
                         meta={"config_hash": config_hash(cfg),
                               "version": __version__})
    csv_path = os.path.join(out_dir, "dtwa.csv")
    series.to_csv(csv_path)
    written = [csv_path]
    if not args.no_figures:
        from .plotting import save_trajectory_figure
        fig_path = os.path.join(out_dir, "dtwa.png")
        save_trajectory_figure(series, fig_path)
        written.append(fig_path)
    for p in written:
        print(p)
    return EXIT_OK


def cmd_classify(cfg, out_dir, args) -> int:
    series = TrajectorySeries.from_csv(args.series)
    omega_d = series.meta.get("omega_d")
    if omega_d is None:
        omega_d = 2 * math.pi / series.period
    thresholds = _thresholds(cfg)
    Td = series.period
    t_i = thresholds.t_i_periods * Td
    if args.perturbed is not None:
        pert = TrajectorySeries.from_csv(args.perturbed)
        d = decorrelator_from_series(series, pert, t_i, series.horizon)
    else:
        d = 0.0
    t_tc = tc_lifetime(series, omega_d, thresholds=thresholds)
    lam_ratio = series.meta.get("lam0", cfg["physics"]["lam0"])
    cls = classify_phase(series, d, t_tc, lam_ratio, thresholds)
    result = cls.to_jsonable()
    result["meta"] = {"series": args.series, "config_hash": config_hash(cfg),
                      "version": __version__,
                      "decorrelator_source": "perturbed series" if args.perturbed
                      else "not computed (single series)"}
    text = json.dumps(result, indent=2)
    print(text)
    if out_dir is not None:
        path = os.path.join(out_dir, "label.json")
        with open(path, "w") as fh:
            fh.write(text + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def list_presets() -> list:
    base = resources.files("dicketc").joinpath("presets")
    return sorted(p.name[:-5] for p in base.iterdir() if p.name.endswith(".json"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dicketc",
        description="Driven-dissipative Dicke/LMG simulations and "
                    "time-crystal phase diagnostics")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--preset", help="named packaged configuration "
                                        f"(one of: {', '.join(list_presets())})")
        p.add_argument("--out", default=None if not needs_out else "out",
                       help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the seed")
        p.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                       help="parallel worker processes")
        p.add_argument("--no-figures", action="store_true",
                       help="skip rendering figures next to the data files")
        p.add_argument("--quiet", action="store_true", help="suppress progress bars")

    p = sub.add_parser("trajectory", help="single mean-field trajectory")
    common(p)
    p.add_argument("--spectrum", action="store_true",
                   help="also write the full-horizon power spectrum")

    p = sub.add_parser("phase-diagram", help="grid over duty cycle and drive frequency")
    common(p)
    p.add_argument("--resume", action="store_true",
                   help="continue an interrupted sweep from its record file")

    common(sub.add_parser("kappa-scan", help="fixed drive point across decay rates"))
    common(sub.add_parser("disorder-scan",
                          help="crystalline fraction vs drive disorder"))
    common(sub.add_parser("quantum", help="exact quantum evolution (state vector "
                                          "or density matrix)"))
    common(sub.add_parser("dtwa", help="discrete truncated Wigner ensemble"))

    p = sub.add_parser("classify", help="label a stored trajectory series")
    p.add_argument("series", help="trajectory CSV produced by this tool")
    p.add_argument("--perturbed", help="matching displaced-twin series CSV "
                                       "(enables the decorrelator)")
    common(p, needs_out=False)
    return parser


_COMMANDS = {
    "trajectory": cmd_trajectory,
    "phase-diagram": cmd_phase_diagram,
    "kappa-scan": cmd_kappa_scan,
    "disorder-scan": cmd_disorder_scan,
    "quantum": cmd_quantum,
    "dtwa": cmd_dtwa,
    "classify": cmd_classify,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.preset,
                          overrides={"seed": args.seed})
    except (ConfigError, ConfigurationError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = args.out
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    try:
        return _COMMANDS[args.command](cfg, out_dir, args)
    except (ConfigError, ConfigurationError, ValueError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except IntegrationDivergedError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except Exception as err:
        from .quantum import StepSizeError, TruncationError
        if isinstance(err, TruncationError):
            print(f"truncation failure: {err}", file=sys.stderr)
            return EXIT_TRUNCATION
        if isinstance(err, StepSizeError):
            print(f"numerical failure: {err}", file=sys.stderr)
            return EXIT_NUMERICAL
        raise


if __name__ == "__main__":
    sys.exit(main())
