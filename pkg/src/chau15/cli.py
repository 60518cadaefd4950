"""Command-line entry point: ``chau15 {simulate,keyrate,scan,optimize,validate,attack}``.

Exit codes: 0 success, 1 validation failure, 2 usage error, 3 configuration
error, 4 runtime error, 5 infeasible decoy statistics.

Run artefacts go under ``<workspace>/runs/<run_id>/``; the workspace is
``--out``, else ``$CHAU15_WORKSPACE``, else ``./chau15_workspace``. A run
directory is written once and never modified; repeating a run with the same
configuration and seed reuses it.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .analytic import expected_stats
from .config import ConfigError, MEASURED_FORMAT, load_config, load_measured, parse_measured, preset_names, read_structured
from .eve import EigensolverError, induced_statistics, load_attack, pair_basis_intercept_resend, random_attack, time_basis_attack
from .montecarlo import ATTACKS, RunConfig, provenance, run
from .optimizer import OptimizationSpec, optimize, results_csv
from .protocol import TALLY_FORMAT, SiftTally, UndefinedEstimatorError
from .security import (
    CONVENTIONS,
    SETTING_CONDITIONED,
    InfeasibleStatisticsError,
    KeyRateResult,
    UndefinedBoundError,
    decoy_inputs_from_expected,
    decoy_inputs_from_tally,
    keyrate_packet,
)
from .validation import all_passed, compare, format_report

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_CONFIG = 3
EXIT_RUNTIME = 4
EXIT_INFEASIBLE = 5

WORKSPACE_ENV = "CHAU15_WORKSPACE"


def _count(text: str) -> int:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if v < 1 or v != int(v):
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return int(v)


def _range(text: str) -> tuple:
    try:
        lo, hi = (float(x) for x in text.split(".."))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO..HI, got {text!r}") from None
    if lo < 0 or hi < lo:
        raise argparse.ArgumentTypeError(f"empty or negative range {text!r}")
    return lo, hi


def workspace(out) -> Path:
    return Path(out or os.environ.get(WORKSPACE_ENV) or "chau15_workspace")


def _log(msg: str):
    print(msg, file=sys.stderr)


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _write_once(target: Path, files: dict) -> bool:
    """Write ``files`` into ``target`` atomically; False if it already exists."""
    if target.exists():
        return False
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".tmp-", dir=target.parent))
    for name, text in files.items():
        (tmp / name).write_text(text)
    try:
        tmp.rename(target)
    except OSError:
        # a concurrent writer got there first; its content is identical
        for f in tmp.iterdir():
            f.unlink()
        tmp.rmdir()
        return False
    return True


def cmd_simulate(args) -> int:
    spec = load_config(args.config)
    cfg = RunConfig(
        n_packets=args.packets,
        params=spec.params,
        devices=spec.devices,
        seed=args.seed,
        workers=args.workers,
        attack=None if args.attack == "none" else args.attack,
    )
    prov = {"config_name": spec.name, **provenance(cfg)}
    target = workspace(args.out) / "runs" / prov["run_id"]
    if target.exists():
        _log(f"run {prov['run_id']} already recorded; reusing {target}")
    else:
        _log(f"simulating {cfg.n_packets} packets of '{spec.name}' (seed {cfg.seed}, {cfg.workers} workers)")
        res = run(cfg, progress=not args.quiet)
        _write_once(
            target,
            {
                "tally.json": res.tally.dumps(),
                "estimates.json": _dump(res.estimates.to_dict()),
                "provenance.json": _dump(prov),
                "config.json": _dump(cfg.to_dict()),
            },
        )
    est = json.loads((target / "estimates.json").read_text())["pooled"]
    print(f"run_id {prov['run_id']}")
    print(f"tally  {target / 'tally.json'}")
    print(f"Q  = {est['Q']:.6e} +- {est['Q_se']:.2e}")
    print(f"Q' = {est['Q_prime']:.6e} +- {est['Q_prime_se']:.2e}")
    E = est["E"]
    print(f"E  = {E:.6f} +- {est['E_se']:.2e}" if E is not None else "E  = undefined (no matched detections)")
    return EXIT_OK


def _keyrate_inputs(source: str):
    """``(inputs, params, f_ec, convention, reference)`` from any supported file."""
    path = Path(source)
    if path.is_dir():
        path = path / "tally.json"
    if path.exists():
        data, doc = read_structured(path)
        fmt = data.get("format")
        if fmt == TALLY_FORMAT:
            tally = SiftTally.from_dict(data)
            return decoy_inputs_from_tally(tally), None, None, None, {}
        if fmt == MEASURED_FORMAT:
            row = parse_measured(data, doc, path.stem)
            return row.inputs, row.params(), row.f_ec, row.convention, row.reference
        raise ConfigError(f"{path}: unknown format {fmt!r} (expected {TALLY_FORMAT} or {MEASURED_FORMAT})")
    row = load_measured(source)
    return row.inputs, row.params(), row.f_ec, row.convention, row.reference


def cmd_keyrate(args) -> int:
    inputs, params, f_ec, convention, reference = _keyrate_inputs(args.file)
    f_ec = args.f_ec if args.f_ec is not None else (f_ec or 1.0)
    convention = args.convention or convention or SETTING_CONDITIONED
    res = keyrate_packet(inputs, None, params, f_ec=f_ec, convention=convention)
    if args.format == "json":
        out = res.to_dict()
        if reference:
            out["reference"] = reference
        print(_dump(out), end="")
    elif args.format == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=KeyRateResult.CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerow(res.csv_row())
        print(buf.getvalue(), end="")
    else:
        print(f"R_inf (per packet)   {res.R_packet:.4e}   raw {res.R_packet_raw:.4e}")
        print(f"R (per sifted bit)   {res.R_sifted:.4f}")
        print(f"I_AE bound           {res.I_AE:.4e} bits")
        for key in ("h2_E", "privacy_term", "error_correction_term", "single_photon_fraction", "Y1_lower", "Y1p_upper", "sift_factor", "f_ec", "convention"):
            v = res.components[key]
            print(f"  {key:<22} {v:.4e}" if isinstance(v, float) else f"  {key:<22} {v}")
        if reference.get("R_inf"):
            print(f"reference R_inf      {reference['R_inf']:.3e}   ratio {res.R_packet / reference['R_inf']:.3f}")
    return EXIT_OK


def cmd_scan(args) -> int:
    spec = load_config(args.config)
    lo, hi = args.range
    n = int(round((hi - lo) / args.step)) + 1
    lengths = lo + args.step * np.arange(n)
    rows = []
    for length in lengths:
        dev = spec.devices.with_length(float(length))
        inputs = decoy_inputs_from_expected(spec.params, expected_stats(spec.params, dev))
        try:
            r = keyrate_packet(inputs, None, spec.params, f_ec=args.f_ec, convention=args.convention)
            rate, raw, hE, iae = r.R_packet, r.R_packet_raw, r.components["h2_E"], r.I_AE
        except InfeasibleStatisticsError:
            rate, raw, hE, iae = 0.0, float("nan"), float("nan"), float("nan")
        rows.append({"length_km": float(length), "R_inf": rate, "R_raw": raw, "E_mu": inputs.signal.E,
                     "Q_mu": inputs.signal.Q, "Q_prime_mu": inputs.signal.Q_prime, "h2_E": hE, "I_AE": iae})
    _emit_csv(rows, args.out)
    return EXIT_OK


def _emit_csv(rows, out):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: f"{v:.10g}" if isinstance(v, float) else v for k, v in r.items()})
    _emit(buf.getvalue(), out)


def _emit(text, out):
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
        _log(f"wrote {out}")
    else:
        print(text, end="")


def cmd_optimize(args) -> int:
    spec_cfg = load_config(args.config)
    lengths = tuple(args.length) if args.length else (spec_cfg.devices.channel.length_km,)
    spec = OptimizationSpec(
        lengths=lengths,
        params=spec_cfg.params,
        devices=spec_cfg.devices,
        optimize_intensities=not args.fixed_intensities,
        optimize_probabilities=not args.fixed_probabilities,
        vacuum_decoy=args.vacuum,
        n_starts=args.starts,
        seed=args.seed,
        workers=args.workers,
        f_ec=args.f_ec,
        convention=args.convention,
    )
    results = optimize(spec)
    _emit(results_csv(results), args.out)
    for r in results:
        if r.no_key:
            _log(f"no key at {r.length_km:g} km (best raw rate {r.rate:.3e})")
    return EXIT_OK


def cmd_validate(args) -> int:
    names = [n for chunk in args.configs for n in chunk.split(",") if n]
    ok = True
    report = []
    for k, name in enumerate(names):
        spec = load_config(name)
        cfg = RunConfig(args.packets, spec.params, spec.devices, seed=args.seed + k, workers=args.workers)
        _log(f"validating '{spec.name}' with {args.packets} packets")
        res = run(cfg)
        rows = compare(res.tally, expected_stats(spec.params, spec.devices), sigma=args.sigma)
        passed = all_passed(rows)
        ok &= passed
        report.append(f"== {spec.name} (seed {cfg.seed}): {'PASS' if passed else 'FAIL'}\n{format_report(rows)}\n")
    _emit("\n".join(report), args.out)
    return EXIT_OK if ok else EXIT_VALIDATION


def cmd_attack(args) -> int:
    if args.file:
        outcomes = [induced_statistics(load_attack(args.file))]
    else:
        rng = np.random.default_rng(args.seed)
        outcomes = [induced_statistics(random_attack(args.L, rng)) for _ in range(args.random)]
        outcomes += [induced_statistics(time_basis_attack(args.L)), pair_basis_intercept_resend(args.L)]
    worst = min(o.margin for o in outcomes)
    print(f"{'kind':<20} {'Q':>10} {'Q_prime':>10} {'E':>8} {'I_Eve':>10} {'bound':>10} {'margin':>11}")
    for o in outcomes:
        print(f"{o.kind:<20} {o.Q:10.4e} {o.Q_prime:10.4e} {o.E:8.4f} {o.information:10.4e} {o.bound:10.4e} {o.margin:11.3e}")
    print(f"worst margin {worst:.3e} over {len(outcomes)} attacks")
    return EXIT_OK if worst >= -1e-9 else EXIT_VALIDATION


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chau15", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    presets = ", ".join(["default"] + preset_names())

    p = sub.add_parser("simulate", help="run the Monte Carlo engine and record the tally")
    p.add_argument("--config", default="default", help=f"preset name ({presets}) or YAML path")
    p.add_argument("--packets", type=_count, default=10**7, help="number of packets, e.g. 1e8")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--attack", choices=ATTACKS, default="none")
    p.add_argument("--out", help="workspace directory")
    p.add_argument("--quiet", action="store_true", help="no progress on stderr")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("keyrate", help="key rate from a tally, run directory or measured-values file")
    p.add_argument("file", help="tally.json, run directory, measured YAML or packaged fixture name")
    p.add_argument("--f-ec", type=float, default=None, help="error-correction inefficiency (file value, else 1.0)")
    p.add_argument("--convention", choices=CONVENTIONS, default=None)
    p.add_argument("--format", choices=("text", "json", "csv"), default="text")
    p.set_defaults(func=cmd_keyrate)

    p = sub.add_parser("scan", help="analytic key rate versus fibre length (CSV)")
    p.add_argument("range", nargs="?", type=_range, default=(0.0, 160.0), help="LO..HI in km")
    p.add_argument("--step", type=float, default=10.0)
    p.add_argument("--config", default="default")
    p.add_argument("--f-ec", type=float, default=1.0)
    p.add_argument("--convention", choices=CONVENTIONS, default=SETTING_CONDITIONED)
    p.add_argument("--out", help="CSV path (stdout if omitted)")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("optimize", help="optimise source parameters (CSV)")
    p.add_argument("--length", type=float, action="append", help="fibre length in km; repeat for a sweep")
    p.add_argument("--config", default="default")
    p.add_argument("--starts", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--fixed-intensities", action="store_true")
    p.add_argument("--fixed-probabilities", action="store_true")
    p.add_argument("--vacuum", action="store_true", help="allow nu2 = 0")
    p.add_argument("--f-ec", type=float, default=1.0)
    p.add_argument("--convention", choices=CONVENTIONS, default=SETTING_CONDITIONED)
    p.add_argument("--out")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("validate", help="Monte Carlo versus analytic oracle")
    p.add_argument("--configs", action="append", default=None, help="comma-separated preset names or paths")
    p.add_argument("--packets", type=_count, default=10**7)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--sigma", type=float, default=3.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("attack", help="compare Eve's information with the bound")
    p.add_argument("--file", help="attack JSON")
    p.add_argument("--random", type=int, default=20, help="number of random attacks")
    p.add_argument("--L", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_attack)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "configs", "unset") is None:
        args.configs = ["default"]
    if getattr(args, "workers", 1) < 1:
        _log("error: --workers must be at least 1")
        return 2
    try:
        return args.func(args)
    except ConfigError as exc:
        _log(f"config error: {exc}")
        return EXIT_CONFIG
    except InfeasibleStatisticsError as exc:
        _log(f"infeasible statistics: {exc}")
        return EXIT_INFEASIBLE
    except (UndefinedEstimatorError, UndefinedBoundError, EigensolverError, ValueError, OSError) as exc:
        _log(f"error: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
