"""Command-line entry point: ``socest <subcommand> ...``.

Exit codes: 0 success, 1 validation/config error, 2 I/O error, 3 numerical
failure. Errors print one ``error: <category>: <detail>`` line to stderr.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from socest import __version__
from socest.cell_model import CellParamsTable, CellState, curve_at, ocv_inverse, params_at, simulate, synthesize_telemetry
from socest.data_io import (
    ColumnMapping,
    format_float,
    load_config,
    load_mapping,
    load_ocv,
    load_params,
    load_profile,
    load_telemetry,
    save_ocv,
    save_params,
    save_profile,
    save_telemetry,
    save_trace,
)
from socest.defaults import default_ocv, default_params
from socest.errors import ConfigError, SocError
from socest.estimators import EstimateTrace, cc_trace, ekf_run
from socest.experiment import EstimatorInit, SweepConfig, format_temp, render_report, run_sweep
from socest.hppc import fit_hppc, generate_profile

log = logging.getLogger("socest")


class UsageError(ConfigError):
    category = "usage"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _global_options(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", metavar="PATH", default=default, help="JSON config overriding estimator/noise defaults")
    parser.add_argument("--seed", metavar="U64", type=int, default=default, help="random seed")
    parser.add_argument("--out", metavar="DIR", default=argparse.SUPPRESS if suppress else ".", help="output directory (default: .)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="socest", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"socest {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    _global_options(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, help_text, parent=sub):
        p = parent.add_parser(name, help=help_text, description=help_text)
        _global_options(p, suppress=True)
        return p

    def cell_files(p):
        p.add_argument("--params", metavar="P.json", help="parameter table (default: built-in illustrative cell)")
        p.add_argument("--ocv", metavar="O.json", help="OCV curves (default: built-in illustrative curve)")

    p = add("simulate", "simulate the 2RC cell over a current profile and write the truth trace")
    cell_files(p)
    p.add_argument("--profile", metavar="PROF.csv", required=True, help="current profile CSV (telemetry schema)")
    p.add_argument("--temp", type=float, default=25.0, help="cell temperature in C (default: 25)")
    p.add_argument("--init-soc", type=float, default=1.0, help="initial SOC fraction (default: 1.0)")
    p.add_argument("--dt", type=float, default=1.0, help="simulation/sample step in s (default: 1)")

    p = add("estimate", "estimate SOC from telemetry by Coulomb counting and/or EKF")
    cell_files(p)
    p.add_argument("--telemetry", metavar="T.csv", required=True, help="telemetry CSV")
    p.add_argument("--mapping", metavar="M.json", help="column mapping for third-party CSV")
    p.add_argument("--method", choices=("cc", "ekf", "both"), default="both", help="estimator(s) to run (default: both)")
    p.add_argument("--init-soc", type=float, help="initial SOC (default: truth column, else OCV of first reading)")
    p.add_argument("--init-offset", type=float, default=0.0, help="offset added to the initial SOC of both estimators")
    p.add_argument("--capacity", type=float, help="override capacity in Ah")

    hppc = add("hppc", "HPPC profile generation and parameter identification")
    hsub = hppc.add_subparsers(dest="hppc_command", required=True, metavar="ACTION")
    p = add("gen", "generate an HPPC current profile", hsub)
    p.add_argument("--capacity", type=float, required=True, help="nominal capacity in Ah")
    p.add_argument("--discharge-c", type=float, default=1.0, help="discharge pulse C-rate (default: 1)")
    p.add_argument("--regen-c", type=float, default=0.75, help="regen pulse C-rate (default: 0.75)")
    p.add_argument("--soc-step", type=float, default=0.1, help="SOC decrement per stage (default: 0.1)")
    p.add_argument("--step-c", type=float, default=1.0, help="C-rate of the SOC-step discharge (default: 1)")
    p.add_argument("--final-rest", type=float, default=3600.0, help="trailing rest at empty in s, 0 to omit (default: 3600)")
    p.add_argument("--temp", type=float, help="temperature column value")
    p = add("fit", "identify 2RC parameters and OCV from an HPPC run", hsub)
    p.add_argument("--telemetry", metavar="T.csv", required=True, help="HPPC telemetry CSV")
    p.add_argument("--capacity", type=float, required=True, help="nominal capacity in Ah")
    p.add_argument("--mapping", metavar="M.json", help="column mapping for third-party CSV")
    p.add_argument("--temp", type=float, help="temperature in C (default: median of temp_c column, else 25)")
    p.add_argument("--initial-soc", type=float, default=1.0, help="SOC at the first sample (default: 1.0)")
    p.add_argument("--noise-v", type=float, default=1e-5, help="voltage noise floor for the 1RC degeneracy test")
    p.add_argument("--cell", default="cell", help="cell name written to the parameter JSON")

    p = add("sweep", "multi-temperature CC vs EKF comparison report")
    cell_files(p)
    p.add_argument("--dataset-dir", metavar="D", help="directory of telemetry_<T>.csv files (switches to dataset mode)")
    p.add_argument("--workers", type=int, help="parallel temperature runs")
    return parser


def _cell(args, config_dir: Path | None = None, config: dict | None = None):
    config = config or {}
    params_path = args.params or (config.get("params") and str((config_dir or Path(".")) / config["params"]))
    ocv_path = args.ocv or (config.get("ocv") and str((config_dir or Path(".")) / config["ocv"]))
    table = load_params(params_path) if params_path else default_params()
    curves = load_ocv(ocv_path) if ocv_path else default_ocv()
    return table, curves


def _config(args) -> tuple[dict, Path | None]:
    if not args.config:
        return {}, None
    return load_config(args.config), Path(args.config).parent


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> None:
    table, curves = _cell(args)
    profile = load_profile(args.profile)
    params = params_at(table, args.temp)
    curve = curve_at(curves, args.temp)
    drive = profile.to_drive(args.dt)
    initial = CellState(args.init_soc)
    series = synthesize_telemetry(params, curve, initial, drive, temp_c=args.temp)
    trace = simulate(params, curve, initial, drive)
    path = _out_dir(args) / "truth.csv"
    save_telemetry(series, path, {"u1_v": trace.u1_v, "u2_v": trace.u2_v})
    log.info("wrote %s (%d rows)", path, len(series))


def _mapping(args) -> ColumnMapping | None:
    return load_mapping(args.mapping) if args.mapping else None


def cmd_estimate(args) -> None:
    config, config_dir = _config(args)
    table, curves = _cell(args, config_dir, config)
    init = EstimatorInit.from_dict(config["init"], "init") if "init" in config else EstimatorInit()
    series = load_telemetry(args.telemetry, _mapping(args))
    temps = series.temp_c[~np.isnan(series.temp_c)]
    t0 = float(temps[0]) if temps.size else 25.0
    if args.init_soc is not None:
        start = args.init_soc
    elif series.soc_true is not None:
        start = float(series.soc_true[0])
    else:
        first = np.flatnonzero(~np.isnan(series.voltage_v))
        if first.size == 0:
            raise ConfigError("telemetry has no voltage; pass --init-soc", path="--init-soc")
        start = ocv_inverse(curve_at(curves, t0), float(series.voltage_v[first[0]]))
    start = min(max(start + args.init_offset, 0.0), 1.0)
    capacity = args.capacity or series.capacity_ah or params_at(table, t0).capacity_ah

    if args.method == "cc":
        trace = cc_trace(start, series, capacity)
    else:
        belief = EstimatorInit(0.0, 0.0, init.q, init.r, init.p0, init.joseph).belief(start)
        trace = ekf_run(belief, series, table, curves, args.capacity, joseph=init.joseph, default_temp_c=t0,
                        cc_initial_soc=start)
        if args.method == "ekf":
            trace = EstimateTrace(
                trace.t_s, np.full(len(trace), np.nan), trace.soc_ekf, trace.soc_true, trace.v_measured,
                trace.v_predicted, trace.innovation_v, trace.cov_soc,
            )
    path = _out_dir(args) / "estimate.csv"
    save_trace(trace, path)
    log.info("wrote %s (%d rows)", path, len(trace))


def cmd_hppc_gen(args) -> None:
    profile = generate_profile(
        args.capacity, args.discharge_c, args.regen_c, args.soc_step, args.step_c, args.final_rest,
    )
    path = _out_dir(args) / "hppc_profile.csv"
    save_profile(profile, path, args.temp)
    log.info("wrote %s (%d segments)", path, len(profile))


def cmd_hppc_fit(args) -> None:
    series = load_telemetry(args.telemetry, _mapping(args))
    fit = fit_hppc(series, args.capacity, args.temp, initial_soc=args.initial_soc, noise_v=args.noise_v)
    out = _out_dir(args)
    save_params(CellParamsTable((fit.params,), cell=args.cell), out / "params.json")
    save_ocv(fit.ocv, out / "ocv.json", fit.params.temp_c)
    lines = ["soc_level,r0_ohm,r1_ohm,c1_farad,r2_ohm,c2_farad,ocv_v,fit_residual_v,status"]
    for f in fit.features:
        vals = (f.soc_level, f.r0_ohm, f.r1_ohm, f.c1_farad, f.r2_ohm, f.c2_farad, f.ocv_v, f.fit_residual_v)
        lines.append(",".join(format_float(v) for v in vals) + ",ok")
    for level, reason in fit.skipped:
        lines.append(format_float(level) + ",,,,,,,," + '"skipped: ' + reason.replace('"', "'") + '"')
    (out / "fit_report.csv").write_text("\n".join(lines) + "\n", encoding="utf-8", newline="")
    log.info("identified %d pulses, skipped %d", len(fit.features), len(fit.skipped))


def cmd_sweep(args) -> None:
    config, config_dir = _config(args)
    table, curves = _cell(args, config_dir, config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.dataset_dir:
        overrides["mode"] = "dataset"
    sweep = SweepConfig.from_dict({**config, **overrides})
    datasets = None
    if sweep.mode == "dataset":
        if not args.dataset_dir:
            raise ConfigError("dataset mode needs --dataset-dir", path="--dataset-dir")
        datasets = {}
        for temp in sweep.temperatures:
            path = Path(args.dataset_dir) / f"telemetry_{format_temp(temp)}.csv"
            if not path.exists():
                raise ConfigError(f"missing dataset file {path}", path="datasets")
            datasets[temp] = load_telemetry(path)
    report = run_sweep(sweep, table, curves, datasets)
    for path in render_report(report, args.out):
        log.info("wrote %s", path)


COMMANDS = {
    ("simulate", None): cmd_simulate,
    ("estimate", None): cmd_estimate,
    ("hppc", "gen"): cmd_hppc_gen,
    ("hppc", "fit"): cmd_hppc_fit,
    ("sweep", None): cmd_sweep,
}


def _fail(category: str, detail: str, code: int) -> int:
    detail = " ".join(str(detail).split())
    print(f"error: {category}: {detail}", file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SocError as exc:
        return _fail(exc.category, exc, exc.exit_code)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    handler = COMMANDS[(args.command, getattr(args, "hppc_command", None))]
    try:
        handler(args)
    except SocError as exc:
        return _fail(exc.category, exc, exc.exit_code)
    except OSError as exc:
        where = exc.filename if exc.filename is not None else ""
        return _fail("io", f"{where}: {exc.strerror or exc}" if where else (exc.strerror or exc), 2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
