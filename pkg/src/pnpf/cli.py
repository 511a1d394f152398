"""
Command-line interface.

Subcommands: run, varcheck, decay, plotdata, defaults.  Configuration is
a JSON file (see DEFAULTS for the full key set and `pnpf defaults` to
print it); individual values can be overridden on the command line with
repeated --set dotted.key=json-value flags.  The default output root is
$PNPF_OUT, else the current directory.

Exit codes: 0 success, 2 configuration/validation error, 3 runtime abort
(positivity breach, non-finite values).  Runs are deterministic: the same
config and seed produce bit-identical CSV artifacts on one platform
(counter-based Philox streams, fixed 17-significant-digit formatting).
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import decay as decay_mod
from . import snapshot, varcheck
from .dynamics import StepAbort, StepperConfig
from .fields import PhysParams, PositivityError, State
from .grid import GridSpec, ScalarField
from .poisson import NonNeutralSource
from .thermo_audit import audit_run

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

DEFAULTS = {
    "grid": {"dim": 3, "n": 32, "length": 6.283185307179586},
    "params": {"c_p": 1.5, "c_n": 1.5, "D_p": 1.0, "D_n": 1.0, "k": 1.0, "eps": 1.0},
    "stepper": {
        "scheme": "RK4",
        "dt": 1e-3,
        "t_end": 0.1,
        "dealias": True,
        "positivity_floor": 1e-8,
    },
    "initial_condition": {
        "type": "equilibrium",
        # single_mode keys: field (theta|u|v|n|p), axis, amplitude
        # random_band keys: seed, amplitude, band
    },
    "outputs": None,  # default: $PNPF_OUT or "."
    "audit_every": 10,
    "varcheck": {
        "seed": 0,
        "amplitude": 1e-3,
        "kmax": 1,
        "fd_rel_tol": 1e-6,
        "balance_tol": 1e-8,
    },
    "decay": {
        "delta0": 1e-2,
        "seed": 0,
        "mode_profile": "single_mode",
        "sample_every": 10,
        "scaling_check": False,
    },
}

# published shape of the config document; values show the expected types
CONFIG_SCHEMA = {
    "grid": {"dim": "int in {1,2,3}", "n": "power-of-two int >= 8", "length": "float > 0"},
    "params": {k: "float > 0" for k in ("c_p", "c_n", "D_p", "D_n", "k", "eps")},
    "stepper": {
        "scheme": "RK4 | IMEX1",
        "dt": "float > 0",
        "t_end": "float > 0",
        "dealias": "bool",
        "positivity_floor": "float",
    },
    "initial_condition": {
        "type": "equilibrium | single_mode | random_band",
        "field": "theta | u | v | n | p (single_mode)",
        "axis": "int (single_mode)",
        "amplitude": "float (single_mode, random_band)",
        "seed": "int (random_band)",
        "band": "int >= 1 (random_band)",
    },
    "outputs": "directory path or null",
    "audit_every": "int >= 1",
    "varcheck": {
        "seed": "int",
        "amplitude": "float",
        "kmax": "int",
        "fd_rel_tol": "float",
        "balance_tol": "float",
    },
    "decay": {
        "delta0": "float >= 0",
        "seed": "int",
        "mode_profile": "single_mode | random_band",
        "sample_every": "int >= 1",
        "scaling_check": "bool",
    },
}


class ConfigError(ValueError):
    pass


def _deep_update(base: dict, extra: dict) -> dict:
    for key, val in extra.items():
        if key not in base:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(base[key], dict) and isinstance(val, dict):
            _deep_update(base[key], val)
        else:
            base[key] = val
    return base


def _apply_set(config: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"--set expects dotted.key=value, got {assignment!r}")
    key, _, raw = assignment.partition("=")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = config
    parts = key.split(".")
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise ConfigError(f"unknown config key {key!r}")
        node = node[part]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config key {key!r}")
    node[parts[-1]] = value


def load_config(path: str | None, sets: list[str]) -> dict:
    config = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path) as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise ConfigError("config file must hold a JSON object")
        _deep_update(config, file_cfg)
    for assignment in sets:
        _apply_set(config, assignment)
    return config


def _build_objects(config: dict):
    try:
        grid = GridSpec(**config["grid"])
        params = PhysParams(**config["params"])
        cfg = StepperConfig(**config["stepper"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return grid, params, cfg


def _outputs_dir(config: dict) -> Path:
    out = config.get("outputs") or os.environ.get("PNPF_OUT") or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise ConfigError(f"outputs directory {path} is not writable")
    return path


def build_initial_state(config: dict, grid: GridSpec) -> State:
    """Initial State from the configured profile.  Neutrality and
    positivity are enforced by State construction; a profile that breaks
    them (a bare n or p mode) is reported as a config error."""
    ic = config["initial_condition"]
    kind = ic.get("type", "equilibrium")
    ones = np.ones(grid.shape)
    n, p, theta = ones.copy(), ones.copy(), ones.copy()
    if kind == "equilibrium":
        pass
    elif kind == "single_mode":
        field = ic.get("field", "theta")
        axis = int(ic.get("axis", 0))
        amp = float(ic.get("amplitude", 1e-2))
        offset = float(ic.get("offset", 0.0))
        if not 0 <= axis < grid.dim:
            raise ConfigError(f"single_mode axis {axis} out of range for dim {grid.dim}")
        x = grid.axes_coordinates()[axis]
        wave = amp * np.sin(2.0 * np.pi * x / grid.length) + offset
        if field == "theta":
            theta += wave
        elif field == "u":
            n += 0.5 * wave
            p += 0.5 * wave
        elif field == "v":
            n += 0.5 * wave
            p -= 0.5 * wave
        elif field == "n":
            # offset != 0 here yields a non-neutral profile, rejected below
            n += wave
        elif field == "p":
            p += wave
        else:
            raise ConfigError(f"unknown single_mode field {field!r}")
    elif kind == "random_band":
        seed = int(ic.get("seed", 0))
        amp = float(ic.get("amplitude", 1e-2))
        band = int(ic.get("band", 2))
        gen = np.random.Generator(np.random.Philox(key=seed))
        ut = decay_mod._band_field(grid, gen, band) * amp
        v = decay_mod._band_field(grid, gen, band) * amp
        tt = decay_mod._band_field(grid, gen, band) * amp
        n = 1.0 + 0.5 * (ut + v)
        p = 1.0 + 0.5 * (ut - v)
        theta = 1.0 + tt
    else:
        raise ConfigError(f"unknown initial_condition type {kind!r}")
    return State.from_primitives(
        ScalarField(grid, n), ScalarField(grid, p), ScalarField(grid, theta)
    )


def cmd_run(config: dict) -> int:
    grid, params, cfg = _build_objects(config)
    outdir = _outputs_dir(config)
    audit_every = int(config["audit_every"])
    if audit_every < 1:
        raise ConfigError("audit_every must be >= 1")
    state = build_initial_state(config, grid)
    final, records, abort_reason, steps_done = audit_run(
        state, cfg, params, outdir / "audit.csv", audit_every=audit_every
    )
    snapshot.write_checkpoint(
        outdir / "final", final,
        t=cfg.dt * steps_done, step=steps_done, cfg=cfg, params=params,
    )
    if abort_reason is not None:
        print(f"run aborted: {abort_reason}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"run complete: {len(records)} audit samples -> {outdir / 'audit.csv'}")
    return EXIT_OK


def cmd_varcheck(config: dict) -> int:
    grid, params, _ = _build_objects(config)
    outdir = _outputs_dir(config)
    vc = config["varcheck"]
    amp = float(vc["amplitude"])
    if amp == 0.0:
        state = State.equilibrium(grid)
    else:
        gen = np.random.Generator(np.random.Philox(key=int(vc["seed"])))
        kmax = int(vc["kmax"])
        ut = decay_mod._band_field(grid, gen, kmax) * amp
        v = decay_mod._band_field(grid, gen, kmax) * amp
        tt = decay_mod._band_field(grid, gen, kmax) * amp
        state = State.from_primitives(
            ScalarField(grid, 1 + 0.5 * (ut + v)),
            ScalarField(grid, 1 + 0.5 * (ut - v)),
            ScalarField(grid, 1 + tt),
        )
    report = varcheck.varcheck_report(
        state, params,
        seed=int(vc["seed"]),
        fd_tol=float(vc["fd_rel_tol"]),
        balance_tol=float(vc["balance_tol"]),
        probe_kmax=int(vc["kmax"]),
    )
    varcheck.write_report_json(report, outdir / "varcheck-report.json")
    print(
        "varcheck: conservative {:.3e}, dissipative {:.3e}, balance {:.3e} -> {}".format(
            report["conservative"]["best_rel_err"],
            report["dissipative"]["best_rel_err"],
            report["force_balance_residual"],
            "pass" if report["pass"] else "FAIL",
        )
    )
    return EXIT_OK if report["pass"] else 1


def cmd_decay(config: dict) -> int:
    grid, params, cfg = _build_objects(config)
    outdir = _outputs_dir(config)
    dc = config["decay"]
    exp = decay_mod.DecayExperiment(
        delta0=float(dc["delta0"]),
        seed=int(dc["seed"]),
        mode_profile=dc["mode_profile"],
        cfg=cfg,
        sample_every=int(dc["sample_every"]),
    )
    series = decay_mod.run(exp, grid, params)
    decay_mod.write_series_csv(series, outdir / "decay.csv")
    scaling_ratio = None
    if dc.get("scaling_check") and exp.delta0 > 0:
        from dataclasses import replace

        half = decay_mod.run(replace(exp, delta0=0.5 * exp.delta0), grid, params)
        if len(half.lyapunov) and half.lyapunov[-1] > 0:
            scaling_ratio = float(series.lyapunov[-1] / half.lyapunov[-1])
    result = decay_mod.summary(exp, series, scaling_ratio)
    decay_mod.write_summary_json(result, outdir / "decay-summary.json")
    if exp.outside_smallness_regime:
        print("decay: flagged outside smallness regime (delta0 > 0.1)")
    flagged = [k for k in ("monotonicity_verdict", "rate_ordering_verdict", "scaling_verdict")
               if result.get(k) == "flagged"]
    if flagged:
        print(f"decay: flagged verdicts: {', '.join(flagged)}")
    print(f"decay: monotonicity {result['monotonicity_verdict']}, "
          f"artifacts in {outdir}")
    if not series.completed:
        print(f"decay run aborted: {series.abort_reason}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_plotdata(config: dict, run_dir: str) -> int:
    """Reshape audit/decay CSVs into tidy (series, t, value) rows; the
    original numeric strings are carried through unchanged so a pivot
    reproduces the source exactly."""
    run_path = Path(run_dir)
    sources = [p for p in (run_path / "audit.csv", run_path / "decay.csv") if p.exists()]
    if not sources:
        raise ConfigError(f"no audit.csv or decay.csv in {run_path}")
    outdir = _outputs_dir(config)
    out_path = outdir / "plotdata.csv"
    with open(out_path, "w") as out:
        out.write("series,t,value\n")
        for src in sources:
            lines = src.read_text().strip().split("\n")
            header = lines[0].split(",")
            for line in lines[1:]:
                cells = line.split(",")
                t = cells[0]
                for name, cell in zip(header[1:], cells[1:]):
                    out.write(f"{src.stem}.{name},{t},{cell}\n")
    print(f"plotdata: wrote {out_path}")
    return EXIT_OK


def cmd_defaults(show_schema: bool) -> int:
    doc = CONFIG_SCHEMA if show_schema else DEFAULTS
    json.dump(doc, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pnpf",
        description="Charge/temperature transport on a periodic box with "
        "thermodynamic-structure audits",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("run", "integrate and write audit.csv, checkpoints, final snapshot"),
        ("varcheck", "variational-identity checks -> varcheck-report.json"),
        ("decay", "small-perturbation decay experiment -> decay.csv + summary"),
        ("plotdata", "tidy run CSVs into long-format plotdata.csv"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config value (dotted path, JSON value)",
        )
        p.add_argument("--outputs", help="output directory (overrides config)")
        if name == "plotdata":
            p.add_argument("run_dir", help="directory holding audit.csv/decay.csv")
    p = sub.add_parser("defaults", help="print the default config (or schema)")
    p.add_argument("--schema", action="store_true", help="print the config schema")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "defaults":
        return cmd_defaults(args.schema)
    try:
        config = load_config(args.config, args.set)
        if args.outputs:
            config["outputs"] = args.outputs
        if args.command == "run":
            return cmd_run(config)
        if args.command == "varcheck":
            return cmd_varcheck(config)
        if args.command == "decay":
            return cmd_decay(config)
        if args.command == "plotdata":
            return cmd_plotdata(config, args.run_dir)
    except (ConfigError, NonNeutralSource, PositivityError, ValueError) as exc:
        print(f"config error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StepAbort as exc:
        print(f"runtime abort: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
