"""Fusion-strength selection by a modified BIC over a grid of candidates."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

import wccreg.admm as admm
from .grouping import extract_partition
from .penalty import ScadSpec
from .types import AdmmConfig, Dataset, FitResult, LocationBlock, Partition, ValidationError

logger = logging.getLogger(__name__)

_RESIDUAL_FLOOR = 1e-300

MEAN_MODEL = "mean_model"
REGRESSION = "regression"

GRID_RULE = ("30 log-spaced values in [0.01*anchor, anchor], anchor = largest pairwise "
             "distance between unpenalized per-location coefficient estimates")


@dataclass(frozen=True)
class BicVariant:
    """Which complexity count to use, and the scale constant.

    ``regression`` charges ``K_hat * p + q`` parameters, ``mean_model``
    charges ``K_hat * p`` (intended for intercept-only designs, where p = 1).
    ``C_m`` defaults to ``log(m p + q)`` of the dataset being scored.
    """

    kind: str = REGRESSION
    C_m: Optional[float] = None

    def __post_init__(self):
        if self.kind not in (MEAN_MODEL, REGRESSION):
            raise ValidationError(f"unknown BIC variant kind {self.kind!r}")
        if self.C_m is not None and not self.C_m > 0:
            raise ValidationError("C_m must be positive")

    def resolve_cm(self, data: Dataset) -> float:
        if self.C_m is not None:
            return self.C_m
        return math.log(data.m * data.p + data.q)


@dataclass(frozen=True)
class LambdaRecord:
    lam: float
    fit: FitResult
    partition: Partition
    bic: float
    converged: bool


@dataclass(frozen=True)
class LambdaPath:
    """Per-candidate records, ordered by increasing fusion strength."""

    grid: tuple
    records: tuple = field(default_factory=tuple)

    def __post_init__(self):
        g = tuple(float(x) for x in self.grid)
        if not g:
            raise ValidationError("lambda grid must be nonempty")
        if any(x <= 0 for x in g):
            raise ValidationError("lambda grid values must be positive")
        if any(b <= a for a, b in zip(g, g[1:])):
            raise ValidationError("lambda grid must be strictly increasing")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "records", tuple(self.records))


def normalized_weights(block: LocationBlock) -> np.ndarray:
    """Inverse inclusion probabilities normalized to sum to one in the block."""
    w = 1.0 / block.pi
    return w / w.sum()


def modified_bic(data: Dataset, fit: FitResult, partition: Partition,
                 variant: BicVariant = BicVariant()) -> float:
    """Log of the weight-normalized residual average plus a complexity charge.

    The residual term averages, over locations, the normalized-weight mean of
    squared residuals at the fitted per-location coefficients; the complexity
    term is ``C_m * (log m / m)`` per counted parameter.
    """
    m = data.m
    total = 0.0
    for i, block in enumerate(data.locations):
        resid = block.y - block.X @ fit.beta[i]
        if data.q > 0:
            resid = resid - block.Z @ fit.eta
        total += float(np.sum(normalized_weights(block) * resid * resid))
    avg = total / m
    if avg < _RESIDUAL_FLOOR:
        logger.warning("BIC residual term clamped at %g (perfect interpolation?)", _RESIDUAL_FLOOR)
        avg = _RESIDUAL_FLOOR
    units = partition.K_hat * data.p + (data.q if variant.kind == REGRESSION else 0)
    return math.log(avg) + variant.resolve_cm(data) * (math.log(m) / m) * units


def default_lambda_grid(data: Dataset, cfg: AdmmConfig = AdmmConfig(), num: int = 30,
                        lo_frac: float = 0.01, hi_frac: float = 1.0) -> np.ndarray:
    """Log-spaced grid anchored to the unpenalized fit's coefficient spread.

    The anchor is the largest pairwise distance between the per-location
    coefficients of the unpenalized (ridge-free) fit; the grid spans
    ``[lo_frac * anchor, hi_frac * anchor]``.
    """
    if num < 1:
        raise ValidationError("grid size must be at least 1")
    beta0 = admm.initialize(data, replace(cfg, init_ridge=0.0)).beta
    if data.m > 1:
        pairs = admm.build_pair_index(data.m)
        anchor = float(np.linalg.norm(beta0[pairs.i_idx] - beta0[pairs.j_idx], axis=1).max())
    else:
        anchor = 0.0
    if anchor <= 0:
        anchor = 1.0
    if num == 1:
        return np.array([hi_frac * anchor])
    return np.geomspace(lo_frac * anchor, hi_frac * anchor, num)


def select_lambda(data: Dataset, grid: Sequence[float], spec_base: ScadSpec,
                  cfg: AdmmConfig = AdmmConfig(),
                  variant: BicVariant = BicVariant(),
                  zero_tol: float = 1e-6) -> tuple[float, FitResult, Partition, LambdaPath]:
    """Fit every candidate, score with the modified BIC, return the argmin.

    Ties break toward the smaller candidate.  Candidates whose solver hit the
    iteration cap are skipped (with a warning) as long as at least one
    converged; fatal solver errors propagate.
    """
    grid = np.sort(np.asarray(list(grid), dtype=float))
    records = []
    for lam in grid:
        spec = ScadSpec(lam=float(lam), gamma=spec_base.gamma)
        fit = admm.fit(data, spec, cfg)
        part = extract_partition(fit, zero_tol)
        bic = modified_bic(data, fit, part, variant)
        records.append(LambdaRecord(lam=float(lam), fit=fit, partition=part,
                                    bic=bic, converged=fit.converged))

    path = LambdaPath(grid=tuple(float(x) for x in grid), records=tuple(records))
    candidates = [r for r in records if r.converged]
    if not candidates:
        logger.warning("no candidate converged; selecting among capped fits")
        candidates = records
    elif len(candidates) < len(records):
        skipped = [r.lam for r in records if not r.converged]
        logger.warning("skipping %d non-converged candidates: %s", len(skipped), skipped)

    best = candidates[0]
    for rec in candidates[1:]:
        if rec.bic < best.bic:
            best = rec
    return best.lam, best.fit, best.partition, path
