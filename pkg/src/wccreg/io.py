"""CSV ingestion and deterministic JSON serialization.

The CSV schema is one row per sampled observation:
``location_id, N, y, pi, [sigma2,] x1..xp, [z1..zq]`` with a mandatory header.
JSON reports keep a fixed field order and rely on shortest round-trip float
formatting, so identical inputs produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
from typing import Optional

import numpy as np

from .types import Dataset, FitResult, LocationBlock, Partition, ValidationError

SCHEMA_VERSION = 1


def expected_columns(p: int, q: int, has_sigma2: bool) -> list[str]:
    cols = ["location_id", "N", "y", "pi"]
    if has_sigma2:
        cols.append("sigma2")
    cols += [f"x{j + 1}" for j in range(p)]
    cols += [f"z{j + 1}" for j in range(q)]
    return cols


def load_dataset_csv(path, p: int, q: int = 0) -> Dataset:
    """Read a dataset; locations ordered by first appearance in the file.

    The optional ``sigma2`` column is detected from the header.  Any missing
    or misnamed column fails with the offending name.
    """
    if p < 1:
        raise ValidationError("p must be at least 1")
    if q < 0:
        raise ValidationError("q must be nonnegative")
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError("empty CSV: header row required") from None
        header = [h.strip() for h in header]
        has_sigma2 = "sigma2" in header
        expected = expected_columns(p, q, has_sigma2)
        for col in expected:
            if col not in header:
                raise ValidationError(f"missing column {col!r} in CSV header")
        extra = [h for h in header if h not in expected]
        if extra:
            raise ValidationError(f"unexpected column {extra[0]!r} in CSV header")
        idx = {col: header.index(col) for col in expected}

        order: list[str] = []
        rows: dict[str, list] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ValidationError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
            lid = row[idx["location_id"]].strip()
            if lid not in rows:
                rows[lid] = []
                order.append(lid)
            try:
                parsed = {col: float(row[idx[col]]) for col in expected if col != "location_id"}
            except ValueError as exc:
                raise ValidationError(f"line {lineno} (location {lid!r}): {exc}") from None
            rows[lid].append(parsed)

    if not order:
        raise ValidationError("CSV contains no data rows")

    blocks = []
    for lid in order:
        recs = rows[lid]
        Ns = {r["N"] for r in recs}
        if len(Ns) != 1:
            raise ValidationError(f"location {lid!r}: inconsistent N values {sorted(Ns)}")
        N = Ns.pop()
        if N != int(N):
            raise ValidationError(f"location {lid!r}: N must be an integer, got {N}")
        blocks.append(LocationBlock(
            location_id=lid,
            N=int(N),
            y=np.array([r["y"] for r in recs]),
            X=np.array([[r[f"x{j + 1}"] for j in range(p)] for r in recs]),
            Z=np.array([[r[f"z{j + 1}"] for j in range(q)] for r in recs]).reshape(len(recs), q),
            pi=np.array([r["pi"] for r in recs]),
            sigma2=np.array([r["sigma2"] for r in recs]) if has_sigma2 else None,
        ))
    return Dataset(locations=tuple(blocks), p=p, q=q)


def fit_result_to_dict(fit: FitResult) -> dict:
    return {
        "beta": fit.beta.tolist(),
        "eta": fit.eta.tolist(),
        "zeta": fit.zeta.tolist(),
        "v": fit.v.tolist(),
        "iterations": int(fit.iterations),
        "final_residual": float(fit.final_residual),
        "converged": bool(fit.converged),
        "final_dual_residual": float(fit.final_dual_residual),
    }


def fit_result_from_dict(d: dict) -> FitResult:
    m = len(d["beta"])
    p = len(d["beta"][0]) if m else 0
    npairs = m * (m - 1) // 2
    zeta = np.asarray(d["zeta"], dtype=float).reshape(p, npairs)
    v = np.asarray(d["v"], dtype=float).reshape(p, npairs)
    return FitResult(
        beta=np.asarray(d["beta"], dtype=float),
        eta=np.asarray(d["eta"], dtype=float),
        zeta=zeta,
        v=v,
        iterations=int(d["iterations"]),
        final_residual=float(d["final_residual"]),
        converged=bool(d["converged"]),
        final_dual_residual=float(d["final_dual_residual"]),
    )


def partition_to_dict(partition: Partition, location_ids: Optional[list[str]] = None) -> dict:
    # groups are reported 1-based in the interchange format
    out = {
        "K_hat": int(partition.K_hat),
        "assignment": [int(g) + 1 for g in partition.assignment],
        "alpha": partition.alpha.tolist(),
        "group_sizes": [int(s) for s in partition.group_sizes],
    }
    if location_ids is not None:
        out["location_ids"] = list(location_ids)
    return out


def partition_from_dict(d: dict) -> Partition:
    labels = np.asarray(d["assignment"], dtype=int) - 1
    return Partition(
        assignment=labels,
        K_hat=int(d["K_hat"]),
        alpha=np.asarray(d["alpha"], dtype=float),
        group_sizes=np.asarray(d["group_sizes"], dtype=int),
    )


def dumps(obj: dict) -> str:
    """Deterministic JSON text: fixed key order, round-trip float formatting."""
    return json.dumps(obj, indent=2, allow_nan=True) + "\n"
