"""Command-line front end.

Subcommands: simulate | estimate | select-q | eigengap | mc-study |
compare-gdfm.  Every run writes a settings echo (JSON) recording the
seed and every constant used, sufficient to reproduce the outputs
bit-exactly.  Exit codes: 0 success, 2 configuration error, 3 data
error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__
from .errors import ConfigError, DataError, NumericError
from .field import LatticeField, demean, load_field, store_field
from .spectral import default_bandwidths, make_kernel
from .dynpca import eigengap_curve, write_eigengap_csv, eigenvalue_curve_by_size
from .commoncomp import estimate_common_component
from .qselect import NoSecondIntervalError, scan_summary_json, scan_to_csv, stability_scan
from .simlab import (
    SimConfig,
    gdfm_baseline,
    run_mc_study,
    simulate_field,
    write_mc_csv,
    write_mc_summary_json,
)


def _parse_triple(text: str, name: str) -> tuple[int, int, int]:
    try:
        parts = tuple(int(p) for p in text.split(","))
    except ValueError:
        raise ConfigError(f"--{name} expects three comma-separated integers, got {text!r}")
    if len(parts) != 3:
        raise ConfigError(f"--{name} expects three comma-separated integers, got {text!r}")
    return parts


def _parse_cgrid(text: str) -> np.ndarray:
    try:
        start, step, stop = (float(p) for p in text.split(":"))
    except ValueError:
        raise ConfigError(f"--cgrid expects start:step:stop, got {text!r}")
    if step <= 0 or stop < start:
        raise ConfigError(f"invalid c grid {text!r}")
    count = int(np.floor((stop - start) / step + 1e-9)) + 1
    return start + step * np.arange(count)


def _write_settings(path_prefix: str, payload: dict) -> None:
    payload = dict(payload)
    payload["version"] = __version__
    payload["argv"] = sys.argv[1:]
    with open(f"{path_prefix}.settings.json", "w", encoding="ascii") as fh:
        json.dump(payload, fh, indent=2, default=str)


def _demeaned_input(path: str) -> LatticeField:
    field = load_field(path)
    return demean(field)


def cmd_simulate(args) -> int:
    cfg = SimConfig(
        model="model_a" if args.model in ("a", "model_a") else "model_b",
        n=args.n, dims=_parse_triple(args.dims, "dims"), q=args.q,
        idio="correlated" if args.idio == "correlated" else "iid_gaussian",
        seed=args.seed, r_a=args.ra,
    )
    x, chi = simulate_field(cfg, rep=args.rep)
    store_field(x, args.output)
    if args.truth_output:
        store_field(chi, args.truth_output)
    _write_settings(args.output, {
        "command": "simulate", "model": cfg.model, "n": cfg.n, "dims": list(cfg.dims),
        "q": cfg.q, "idio": cfg.idio, "seed": cfg.seed, "r_a": cfg.r_a, "rep": args.rep,
    })
    return 0


def cmd_estimate(args) -> int:
    field = _demeaned_input(args.input)
    bw = _parse_triple(args.bw, "bw") if args.bw else default_bandwidths(field.dims)
    trunc = _parse_triple(args.trunc, "trunc") if args.trunc else None
    est = estimate_common_component(field, args.q, args.kernel, bw, trunc)
    store_field(LatticeField(est.chi), args.output)
    est.to_json_sidecar(f"{args.output}.json")
    _write_settings(args.output, {
        "command": "estimate", "input": args.input, "q": args.q,
        "kernel": make_kernel(args.kernel).kind,
        "bw": list(bw), "trunc": est.settings["trunc"], "n": field.n,
        "dims": list(field.dims),
    })
    return 0


def cmd_select_q(args) -> int:
    field = _demeaned_input(args.input)
    bw = _parse_triple(args.bw, "bw") if args.bw else default_bandwidths(field.dims)
    c_grid = _parse_cgrid(args.cgrid)
    sizes = None
    if args.subsamples:
        sizes = [int(s) for s in args.subsamples.split(",")]
    try:
        scan = stability_scan(
            field, args.qmax, c_grid, subsample_sizes=sizes, kernels=args.kernel,
            bw=bw, seed=args.seed, c_manual=args.c_manual,
        )
    except NoSecondIntervalError as exc:
        scan_to_csv(exc.scan, f"{args.output}.csv")
        scan_summary_json(exc.scan, f"{args.output}.json")
        print(f"error: {exc}", file=sys.stderr)
        return 4
    if np.any(np.diff(scan.q_by_c) > 0):
        raise NumericError("full-sample estimate is not non-increasing in c")
    scan_to_csv(scan, f"{args.output}.csv")
    scan_summary_json(scan, f"{args.output}.json")
    _write_settings(args.output, {
        "command": "select-q", "input": args.input, "qmax": args.qmax,
        "kernel": make_kernel(args.kernel).kind, "bw": list(bw),
        "cgrid": args.cgrid, "seed": args.seed, "c_manual": args.c_manual,
        "subsamples": scan.settings["subsample_sizes"],
        "selected_q": scan.selected_q, "selected_c": scan.selected_c,
    })
    print(f"selected_q={scan.selected_q} at c={scan.selected_c}")
    return 0


def cmd_eigengap(args) -> int:
    field = _demeaned_input(args.input)
    if args.m_values:
        m_values = [int(m) for m in args.m_values.split(",")]
    else:
        step = max(1, field.n // 10)
        m_values = list(range(step, field.n + 1, step))
    bw = _parse_triple(args.bw, "bw") if args.bw else None
    if args.gdfm:
        from .field import stack_to_time_series, stacked_series_as_field
        from .simlab import _as_demeaned_field

        stacked = stack_to_time_series(field)
        sfield = _as_demeaned_field(stacked_series_as_field(stacked).values)
        bw_t = bw[2] if bw else default_bandwidths((1, 1, field.dims[2]))[2]
        curve = eigenvalue_curve_by_size(
            sfield, [min(m, sfield.n) for m in m_values], args.topk,
            args.kernel, (0, 0, bw_t),
        )
        write_eigengap_csv(args.output, [min(m, sfield.n) for m in m_values], curve)
    else:
        eigengap_curve(field, m_values, args.topk, args.kernel, bw, csv_path=args.output)
    _write_settings(args.output, {
        "command": "eigengap", "input": args.input, "m_values": m_values,
        "topk": args.topk, "kernel": make_kernel(args.kernel).kind,
        "bw": list(bw) if bw else "default", "gdfm": bool(args.gdfm),
    })
    return 0


def _mc_common(args, study: str) -> int:
    overrides = {}
    if args.config:
        with open(args.config, "r", encoding="ascii") as fh:
            overrides = json.load(fh)
    cfg = SimConfig(
        model=overrides.get("model", "model_a" if args.model == "a" else "model_b"),
        n=overrides.get("n", args.n),
        dims=tuple(overrides.get("dims", _parse_triple(args.dims, "dims"))),
        q=overrides.get("q", args.q),
        idio=overrides.get("idio", "correlated" if args.idio == "correlated" else "iid_gaussian"),
        seed=overrides.get("seed", args.seed),
        r_a=overrides.get("r_a", args.ra),
        n_reps=overrides.get("n_reps", args.reps),
    )
    bw = _parse_triple(args.bw, "bw") if args.bw else None
    trunc = _parse_triple(args.trunc, "trunc") if args.trunc else None
    result = run_mc_study(
        cfg, study=study, q_fit=args.q_fit, kernels=args.kernel, bw=bw, trunc=trunc,
        q_max=args.qmax, threads=args.threads, region=args.region,
    )
    write_mc_csv(result, f"{args.output}.csv")
    write_mc_summary_json(result, f"{args.output}.json")
    _write_settings(args.output, {"command": study, **result.settings, "seed": cfg.seed})
    for name in result.metrics:
        print(f"{name}: mean={result.mean(name):.6g} se={result.standard_error(name):.3g}")
    return 0


def cmd_mc_study(args) -> int:
    return _mc_common(args, args.study)


def cmd_compare_gdfm(args) -> int:
    return _mc_common(args, "comparison")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stfactor",
        description="Spatio-temporal dynamic factor analysis on lattice data",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--kernel", default="ep", help="ep | bartlett | trunc")
        p.add_argument("--bw", default=None, help="bandwidths B1,B2,B3")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("simulate", help="draw a synthetic panel")
    p.add_argument("--model", choices=["a", "b"], default="b")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--dims", required=True, help="S1,S2,T")
    p.add_argument("--q", type=int, default=2)
    p.add_argument("--idio", choices=["iid", "correlated"], default="iid")
    p.add_argument("--ra", type=int, default=40)
    p.add_argument("--rep", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.add_argument("--truth-output", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate the common component")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--q", type=int, required=True)
    p.add_argument("--trunc", default=None, help="truncations M1,M2,M3")
    add_common(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("select-q", help="stability scan for the factor count")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True, help="output prefix (.csv/.json)")
    p.add_argument("--qmax", type=int, default=10)
    p.add_argument("--cgrid", default="0:0.0005:3", help="start:step:stop")
    p.add_argument("--subsamples", default=None, help="comma list of subsample sizes")
    p.add_argument("--c-manual", type=float, default=None, dest="c_manual")
    add_common(p)
    p.set_defaults(func=cmd_select_q)

    p = sub.add_parser("eigengap", help="averaged eigenvalues vs panel size")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True, help="CSV path")
    p.add_argument("--m-values", default=None, help="comma list of panel sizes")
    p.add_argument("--topk", type=int, default=10)
    p.add_argument("--gdfm", action="store_true", help="stacked purely-temporal variant")
    add_common(p)
    p.set_defaults(func=cmd_eigengap)

    for name, study_default in (("mc-study", None), ("compare-gdfm", "comparison")):
        p = sub.add_parser(name, help="Monte Carlo reproduction study")
        if study_default is None:
            p.add_argument("--study", choices=["accuracy", "comparison", "selection"],
                           default="accuracy")
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--model", choices=["a", "b"], default="b")
        p.add_argument("--n", type=int, default=40)
        p.add_argument("--dims", default="20,20,20")
        p.add_argument("--q", type=int, default=2)
        p.add_argument("--q-fit", type=int, default=None, dest="q_fit")
        p.add_argument("--qmax", type=int, default=10)
        p.add_argument("--idio", choices=["iid", "correlated"], default="iid")
        p.add_argument("--ra", type=int, default=40)
        p.add_argument("--reps", type=int, default=20)
        p.add_argument("--trunc", default=None)
        p.add_argument("--region", choices=["all", "interior"], default="all")
        p.add_argument("--output", required=True, help="output prefix")
        add_common(p)
        p.set_defaults(func=cmd_mc_study if study_default is None else cmd_compare_gdfm)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
