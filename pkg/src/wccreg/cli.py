"""Batch entry points: fit a CSV dataset, run the simulation studies.

Exit codes: 0 success, 2 validation/usage error, 3 fatal solver error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import io as wio
from . import selection, simulation
from .admm import fit as admm_fit
from .grouping import extract_partition, refit_oracle
from .penalty import ScadSpec
from .types import AdmmConfig, Dataset, LocationBlock, SingularSystemError, ValidationError, validate

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SOLVER = 3

CLAMP_RULE = ("design scores: nonfinite/nonpositive scores are replaced by the smallest "
              "positive finite score in the location (1e-12 if none), normalized to sum "
              "to the expected sample size, then clamped into [1e-6, 1]")


def _parse_grid(text: str) -> np.ndarray:
    try:
        lo_s, hi_s, n_s = text.split(":")
        lo, hi, n = float(lo_s), float(hi_s), int(n_s)
    except ValueError:
        raise ValidationError(f"--lambda-grid expects lo:hi:count, got {text!r}") from None
    if lo <= 0 or hi <= lo or n < 2:
        raise ValidationError("--lambda-grid needs 0 < lo < hi and count >= 2")
    return np.geomspace(lo, hi, n)


def _unweighted_copy(data: Dataset) -> Dataset:
    """Replace every inclusion probability by the overall sampling fraction."""
    n_tot = sum(b.n for b in data.locations)
    N_tot = sum(b.N for b in data.locations)
    const = min(1.0, n_tot / N_tot)
    blocks = tuple(replace(b, pi=np.full(b.n, const)) for b in data.locations)
    return Dataset(locations=blocks, p=data.p, q=data.q)


def _standardize(data: Dataset):
    """Center/scale y and the non-constant X columns, pooled over all rows.

    Returns the transformed dataset plus the scales needed to report
    coefficients on the original scale.
    """
    ys = np.concatenate([b.y for b in data.locations])
    Xs = np.vstack([b.X for b in data.locations])
    y_mean, y_sd = float(ys.mean()), float(ys.std())
    if y_sd == 0:
        y_sd = 1.0
    x_mean = Xs.mean(axis=0)
    x_sd = Xs.std(axis=0)
    constant = x_sd == 0
    x_mean = np.where(constant, 0.0, x_mean)
    x_sd = np.where(constant, 1.0, x_sd)
    blocks = tuple(
        replace(b, y=(b.y - y_mean) / y_sd, X=(b.X - x_mean) / x_sd)
        for b in data.locations
    )
    info = {"y_mean": y_mean, "y_sd": y_sd, "x_mean": x_mean.tolist(),
            "x_sd": x_sd.tolist(), "constant_columns": constant.tolist()}
    return Dataset(locations=blocks, p=data.p, q=data.q), info


def _alpha_original_scale(alpha: np.ndarray, info: dict) -> list:
    """Back-transform group coefficients after --standardize."""
    y_sd, y_mean = info["y_sd"], info["y_mean"]
    x_mean = np.asarray(info["x_mean"])
    x_sd = np.asarray(info["x_sd"])
    constant = np.asarray(info["constant_columns"], dtype=bool)
    out = []
    for row in np.atleast_2d(alpha):
        raw = y_sd * row / x_sd
        if constant.sum() == 1:
            j0 = int(np.nonzero(constant)[0][0])
            shift = y_mean - y_sd * float(np.sum(row[~constant] * x_mean[~constant] / x_sd[~constant]))
            raw[j0] = y_sd * row[j0] + shift
        out.append(raw.tolist())
    return out


def cmd_fit(args) -> int:
    data = wio.load_dataset_csv(args.csv, p=args.p, q=args.q)
    validate(data)
    if args.unweighted:
        data = _unweighted_copy(data)
    std_info = None
    if args.standardize:
        data, std_info = _standardize(data)

    cfg = AdmmConfig(vartheta=args.vartheta, tol=args.tol, max_iter=args.max_iter,
                     init_ridge=args.init_ridge)
    variant = selection.BicVariant(kind=args.bic_variant)
    report: dict = {
        "schema_version": wio.SCHEMA_VERSION,
        "command": "fit",
        "config": {
            "p": args.p, "q": args.q, "gamma": args.gamma, "vartheta": args.vartheta,
            "tol": args.tol, "max_iter": args.max_iter, "zero_tol": args.zero_tol,
            "init_ridge": args.init_ridge, "bic_variant": args.bic_variant,
            "unweighted": bool(args.unweighted), "standardize": bool(args.standardize),
        },
        "location_ids": data.location_ids(),
    }

    if args.lam is not None:
        spec = ScadSpec(lam=args.lam, gamma=args.gamma)
        fit = admm_fit(data, spec, cfg)
        part = extract_partition(fit, args.zero_tol)
        bic = selection.modified_bic(data, fit, part, variant)
        lam_star = args.lam
        path = None
    else:
        if args.lambda_grid is not None:
            grid = _parse_grid(args.lambda_grid)
        else:
            grid = selection.default_lambda_grid(data, cfg)
        lam_star, fit, part, path = selection.select_lambda(
            data, grid, ScadSpec(lam=1.0, gamma=args.gamma), cfg, variant, args.zero_tol)
        bic = selection.modified_bic(data, fit, part, variant)

    report["selection"] = {"lambda_star": float(lam_star), "bic": float(bic)}
    report["fit"] = wio.fit_result_to_dict(fit)
    report["partition"] = wio.partition_to_dict(part, data.location_ids())
    if std_info is not None:
        report["standardization"] = std_info
        report["partition"]["alpha_original_scale"] = _alpha_original_scale(part.alpha, std_info)
    if path is not None:
        report["lambda_path"] = [
            {"lambda": r.lam, "bic": r.bic, "K_hat": int(r.partition.K_hat),
             "converged": bool(r.converged), "iterations": int(r.fit.iterations),
             "final_residual": float(r.fit.final_residual)}
            for r in path.records
        ]
    if args.refit_oracle:
        eta_or, alpha_or = refit_oracle(data, part)
        report["refit_oracle"] = {"eta": eta_or.tolist(), "alpha": alpha_or.tolist()}

    if args.out:
        Path(args.out).write_text(wio.dumps(report), encoding="utf-8")

    print(f"K_hat = {part.K_hat}")
    for k in range(part.K_hat):
        coef = ", ".join(repr(float(c)) for c in part.alpha[k])
        print(f"group {k + 1} (size {int(part.group_sizes[k])}): alpha = [{coef}]")
    print(f"lambda_star = {lam_star!r}")
    print(f"bic = {bic!r}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    kind = {"mean": simulation.MEAN_MODEL, "regression": simulation.REGRESSION}.get(args.scenario)
    if kind is None:
        raise ValidationError(f"unknown scenario {args.scenario!r} (use mean|regression)")
    if args.n not in (10, 30):
        raise ValidationError("--n must be 10 or 30")
    methods = tuple(s.strip().lower() for s in args.methods.split(","))
    for meth in methods:
        if meth not in ("wcc", "cc"):
            raise ValidationError(f"unknown method {meth!r} (use wcc,cc)")

    spec = simulation.ScenarioSpec(kind=kind, expected_n=args.n, seed=args.seed, reps=args.reps)
    summary = simulation.run_monte_carlo(spec, AdmmConfig(), methods=methods, jobs=args.jobs)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    simulation.write_rep_csv(summary, out_dir / "reps.csv")
    (out_dir / "summary.json").write_text(wio.dumps(summary.to_dict()), encoding="utf-8")

    print(simulation.format_summary_table(summary))
    if args.reps == 1:
        print("note: single replicate, standard deviations reported as n/a")
    print(f"wrote {out_dir / 'reps.csv'} and {out_dir / 'summary.json'}")
    return EXIT_OK


def cmd_version(_args) -> int:
    print(f"wccreg {__version__}")
    print("defaults: gamma=3, vartheta=1, tol=1e-06, max_iter=2000, zero_tol=1e-06, init_ridge=0")
    print("BIC: C_m = log(m*p+q), complexity C_m*(log m/m)*(K_hat*p + q); "
          "mean_model variant drops q")
    print(f"lambda grid: {selection.GRID_RULE}")
    print(f"clamping rule: {CLAMP_RULE}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wccreg",
                                 description="Survey-weighted clustered-coefficients regression")
    sub = ap.add_subparsers(dest="command", required=True)

    fp = sub.add_parser("fit", help="fit a CSV dataset, optionally selecting lambda by BIC")
    fp.add_argument("csv", help="input CSV (location_id,N,y,pi,[sigma2,]x1..xp,[z1..zq])")
    fp.add_argument("--p", type=int, required=True, help="number of location-specific covariates")
    fp.add_argument("--q", type=int, default=0, help="number of shared covariates")
    fp.add_argument("--lambda", dest="lam", type=float, default=None,
                    help="single fusion strength (skips selection)")
    fp.add_argument("--lambda-grid", default=None, metavar="LO:HI:COUNT",
                    help="log-spaced selection grid")
    fp.add_argument("--gamma", type=float, default=3.0)
    fp.add_argument("--vartheta", type=float, default=1.0)
    fp.add_argument("--tol", type=float, default=1e-6)
    fp.add_argument("--max-iter", type=int, default=2000)
    fp.add_argument("--zero-tol", type=float, default=1e-6)
    fp.add_argument("--init-ridge", type=float, default=0.0)
    fp.add_argument("--bic-variant", choices=[selection.MEAN_MODEL, selection.REGRESSION],
                    default=selection.REGRESSION)
    fp.add_argument("--unweighted", action="store_true",
                    help="replace inclusion probabilities by the overall sampling fraction")
    fp.add_argument("--refit-oracle", action="store_true",
                    help="also refit with coefficients tied inside the extracted groups")
    fp.add_argument("--standardize", action="store_true",
                    help="center/scale y and x; report coefficients on both scales")
    fp.add_argument("--out", default=None, help="write the JSON report here")
    fp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("simulate", help="run a Monte Carlo study")
    sp.add_argument("--scenario", required=True, help="mean | regression")
    sp.add_argument("--n", type=int, required=True, help="expected per-location sample size (10 or 30)")
    sp.add_argument("--reps", type=int, default=100)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--methods", default="wcc,cc")
    sp.add_argument("--out-dir", default="mc_out")
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_simulate)

    vp = sub.add_parser("version", help="print version and the defaults in force")
    vp.set_defaults(func=cmd_version)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except SingularSystemError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
