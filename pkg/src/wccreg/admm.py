"""ADMM solver for the survey-weighted fusion objective in the linear model.

The loss is ``0.5 * sum_i N_i^{-1} sum_h pi_ih^{-1} (y - z'eta - x'beta_i)^2``
(an extra ``1/sigma2`` factor per row when known variances are present) plus a
concave penalty on every pairwise difference ``beta_i - beta_j``.  Slack
vectors carry the differences, a proximal map handles the penalty, and the
coefficient update is a single dense solve whose matrix is constant across
iterations, so it is factored once per fit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .penalty import ScadSpec, check_prox_compatible, prox_columns, scad_value
from .types import AdmmConfig, Dataset, FitResult, LocationBlock, SingularSystemError, validate

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PairIndex:
    """Lexicographic index of the location pairs (i, j), i < j.

    ``i_idx``/``j_idx`` give the row pair of column l; ``column_of`` maps a
    pair back to its column in the slack/multiplier blocks.
    """

    m: int
    i_idx: np.ndarray
    j_idx: np.ndarray

    @property
    def n_pairs(self) -> int:
        return self.i_idx.size

    def column_of(self, i: int, j: int) -> int:
        if not 0 <= i < j < self.m:
            raise ValueError(f"need 0 <= i < j < m, got ({i}, {j})")
        # pairs (0,1),(0,2),...,(0,m-1),(1,2),... in row-major order
        return i * self.m - i * (i + 1) // 2 + (j - i - 1)

    def difference_matrix(self) -> np.ndarray:
        """Dense (n_pairs, m) signed incidence matrix; row l is e_i - e_j."""
        D = np.zeros((self.n_pairs, self.m))
        rows = np.arange(self.n_pairs)
        D[rows, self.i_idx] = 1.0
        D[rows, self.j_idx] = -1.0
        return D


def build_pair_index(m: int) -> PairIndex:
    if m < 1:
        raise ValueError("m must be at least 1")
    iu = np.triu_indices(m, k=1)
    return PairIndex(m=m, i_idx=iu[0].copy(), j_idx=iu[1].copy())


def fused_gram(m: int, p: int) -> np.ndarray:
    """Dense ``A'A`` for the pairwise difference operator.

    Never builds A itself: over the full pair set A'A equals
    ``(m I_m - J_m) (x) I_p`` with J the all-ones matrix.
    """
    return np.kron(m * np.eye(m) - np.ones((m, m)), np.eye(p))


@dataclass
class SolverState:
    """Mutable iterate: coefficients, slacks (one row per pair) and multipliers."""

    beta: np.ndarray          # (m, p)
    eta: np.ndarray           # (q,)
    zeta: np.ndarray          # (n_pairs, p)
    v: np.ndarray             # (n_pairs, p)
    r: int = 0


def composite_weights(block: LocationBlock) -> np.ndarray:
    """Per-row loss weights ``1/(N * pi)``, times ``1/sigma2`` when present."""
    w = 1.0 / (block.N * block.pi)
    if block.sigma2 is not None:
        w = w / block.sigma2
    return w


class _Bundle:
    """Per-dataset precomputations shared by initialization and iterations."""

    def __init__(self, data: Dataset):
        self.data = data
        m, p, q = data.m, data.p, data.q
        self.m, self.p, self.q = m, p, q
        self.pairs = build_pair_index(m)
        self.D = self.pairs.difference_matrix()

        slices = []
        start = 0
        for b in data.locations:
            slices.append(slice(start, start + b.n))
            start += b.n
        self.slices = slices
        self.n_total = start

        self.y = np.concatenate([b.y for b in data.locations])
        self.w = np.concatenate([composite_weights(b) for b in data.locations])
        self.X_blocks = [b.X for b in data.locations]

        # block pieces of the weighted normal equations
        self.XtWX = np.stack([b.X.T @ (composite_weights(b)[:, None] * b.X) for b in data.locations])
        self.XtWy = np.stack([b.X.T @ (composite_weights(b) * b.y) for b in data.locations])

        if q > 0:
            self.Z = np.concatenate([b.Z for b in data.locations], axis=0)
            wZ = self.w[:, None] * self.Z
            self.ZtWZ = self.Z.T @ wZ
            self.ZtWy = self.Z.T @ (self.w * self.y)
            self.ZtW = wZ.T                     # (q, n_total)
            self.gz_factor = _factor_spd(self.ZtWZ, "Z'WZ")
            self.XtWZ = np.stack([b.X.T @ (composite_weights(b)[:, None] * b.Z) for b in data.locations])
            B = self.XtWZ.reshape(m * p, q)
            # X'QX = blockdiag(X'WX) - B (Z'WZ)^{-1} B'
            self.XtQX = _block_diag(self.XtWX) - B @ cho_solve(self.gz_factor, B.T)
            self.XtQy = self.XtWy.reshape(-1) - B @ cho_solve(self.gz_factor, self.ZtWy)
        else:
            self.Z = np.zeros((self.n_total, 0))
            self.XtQX = _block_diag(self.XtWX)
            self.XtQy = self.XtWy.reshape(-1)

        self.fused = fused_gram(m, p) if m > 1 else np.zeros((p, p))
        self._factors: dict[float, tuple] = {}

    def factor(self, scale: float):
        """Cholesky factor of X'QX + scale * A'A, cached per scale."""
        key = float(scale)
        if key not in self._factors:
            M = self.XtQX + key * self.fused if self.m > 1 else self.XtQX
            self._factors[key] = _factor_spd(M, "coefficient update matrix")
        return self._factors[key]

    def solve_beta(self, scale: float, rhs: np.ndarray) -> np.ndarray:
        return cho_solve(self.factor(scale), rhs).reshape(self.m, self.p)

    def fitted_local(self, beta: np.ndarray) -> np.ndarray:
        """Stacked ``X_i beta_i`` over all rows."""
        out = np.empty(self.n_total)
        for i, sl in enumerate(self.slices):
            out[sl] = self.X_blocks[i] @ beta[i]
        return out

    def eta_update(self, beta: np.ndarray) -> np.ndarray:
        if self.q == 0:
            return np.zeros(0)
        resid = self.y - self.fitted_local(beta)
        return cho_solve(self.gz_factor, self.ZtW @ resid)

    def beta_rhs(self, zeta: np.ndarray, v: np.ndarray, vartheta: float) -> np.ndarray:
        if self.m == 1:
            return self.XtQy
        S = vartheta * zeta - v                    # (n_pairs, p)
        return self.XtQy + (self.D.T @ S).reshape(-1)

    def differences(self, beta: np.ndarray) -> np.ndarray:
        return beta[self.pairs.i_idx] - beta[self.pairs.j_idx]


def _block_diag(blocks: np.ndarray) -> np.ndarray:
    m, p, _ = blocks.shape
    out = np.zeros((m * p, m * p))
    for i in range(m):
        out[i * p:(i + 1) * p, i * p:(i + 1) * p] = blocks[i]
    return out


def _factor_spd(M: np.ndarray, what: str):
    """Cholesky with a single trace-jitter retry; fatal if still singular."""
    try:
        return cho_factor(M, lower=True)
    except LinAlgError:
        jitter = 1e-10 * np.trace(M)
        if jitter <= 0:
            raise SingularSystemError(
                f"{what} is singular; use vartheta > 0 or a positive init_ridge"
            ) from None
        try:
            return cho_factor(M + jitter * np.eye(M.shape[0]), lower=True)
        except LinAlgError:
            raise SingularSystemError(
                f"{what} is singular even after diagonal jitter; "
                "use vartheta > 0 or a positive init_ridge"
            ) from None


def initialize(data: Dataset, cfg: AdmmConfig, bundle: Optional[_Bundle] = None) -> SolverState:
    """Starting point: squared-difference fusion of strength ``init_ridge``.

    The normal matrix is the coefficient-update matrix with the augmented
    weight replaced by ``2 * init_ridge``; slacks start at the implied
    pairwise differences and multipliers at zero.
    """
    bundle = bundle or _Bundle(data)
    beta = bundle.solve_beta(2.0 * cfg.init_ridge, bundle.XtQy)
    eta = bundle.eta_update(beta)
    zeta = bundle.differences(beta)
    v = np.zeros_like(zeta)
    return SolverState(beta=beta, eta=eta, zeta=zeta, v=v, r=0)


def update_beta_eta(state: SolverState, data: Dataset, cfg: AdmmConfig,
                    bundle: Optional[_Bundle] = None) -> tuple[np.ndarray, np.ndarray]:
    """One coefficient update given the current slacks and multipliers."""
    bundle = bundle or _Bundle(data)
    rhs = bundle.beta_rhs(state.zeta, state.v, cfg.vartheta)
    beta = bundle.solve_beta(cfg.vartheta if bundle.m > 1 else 0.0, rhs)
    eta = bundle.eta_update(beta)
    return beta, eta


def update_zeta(state: SolverState, spec: ScadSpec, vartheta: float) -> np.ndarray:
    """Proximal step on every pair: ``kappa = (beta_i - beta_j) + v/vartheta``."""
    pairs = build_pair_index(state.beta.shape[0])
    diffs = state.beta[pairs.i_idx] - state.beta[pairs.j_idx]
    return prox_columns(diffs + state.v / vartheta, spec, vartheta)


def update_v(state: SolverState, vartheta: float) -> np.ndarray:
    """Multiplier ascent on the constraint residuals."""
    pairs = build_pair_index(state.beta.shape[0])
    diffs = state.beta[pairs.i_idx] - state.beta[pairs.j_idx]
    return state.v + vartheta * (diffs - state.zeta)


def primal_residual(state: SolverState) -> float:
    """Norm of the stacked constraint violations ``beta_i - beta_j - zeta_ij``."""
    pairs = build_pair_index(state.beta.shape[0])
    if pairs.n_pairs == 0:
        return 0.0
    diffs = state.beta[pairs.i_idx] - state.beta[pairs.j_idx]
    return float(np.linalg.norm(diffs - state.zeta))


def weighted_loss(data: Dataset, beta: np.ndarray, eta: np.ndarray,
                  bundle: Optional[_Bundle] = None) -> float:
    """Half the weighted residual sum of squares (no penalty)."""
    bundle = bundle or _Bundle(data)
    resid = bundle.y - bundle.fitted_local(np.atleast_2d(beta))
    if bundle.q > 0:
        resid = resid - bundle.Z @ np.atleast_1d(eta)
    return 0.5 * float(np.sum(bundle.w * resid * resid))


def objective(data: Dataset, beta: np.ndarray, eta: np.ndarray, spec: ScadSpec,
              bundle: Optional[_Bundle] = None) -> float:
    """Weighted loss plus the fusion penalty over all pairwise differences."""
    bundle = bundle or _Bundle(data)
    beta = np.atleast_2d(beta)
    loss = weighted_loss(data, beta, eta, bundle=bundle)
    if bundle.m == 1:
        return loss
    norms = np.linalg.norm(bundle.differences(beta), axis=1)
    return loss + float(np.sum(scad_value(norms, spec)))


def fit(data: Dataset, spec: ScadSpec, cfg: AdmmConfig = AdmmConfig()) -> FitResult:
    """Run the full solver: initialize, iterate, stop on the primal residual.

    Hitting ``max_iter`` is reported through ``converged=False`` but still
    returns the final iterate; only singular normal systems raise.
    """
    validate(data)
    check_prox_compatible(spec, cfg.vartheta)
    bundle = _Bundle(data)
    vt = cfg.vartheta

    state = initialize(data, cfg, bundle=bundle)
    beta, eta, zeta, v = state.beta, state.eta, state.zeta, state.v

    if bundle.m == 1:
        return FitResult(beta=beta, eta=eta, zeta=np.zeros((bundle.p, 0)),
                         v=np.zeros((bundle.p, 0)), iterations=0,
                         final_residual=0.0, converged=True, final_dual_residual=0.0)

    primal = np.inf
    dual = np.inf
    iterations = 0
    for r in range(cfg.max_iter):
        beta = bundle.solve_beta(vt, bundle.beta_rhs(zeta, v, vt))
        eta = bundle.eta_update(beta)
        diffs = bundle.differences(beta)
        zeta_new = prox_columns(diffs + v / vt, spec, vt)
        v = v + vt * (diffs - zeta_new)
        primal = float(np.linalg.norm(diffs - zeta_new))
        dual = vt * float(np.linalg.norm(bundle.D.T @ (zeta_new - zeta)))
        zeta = zeta_new
        iterations = r + 1
        if primal < cfg.tol:
            break

    converged = primal < cfg.tol
    if not converged:
        logger.warning("solver hit max_iter=%d with primal residual %.3e (tol %.1e)",
                       cfg.max_iter, primal, cfg.tol)
    logger.debug("fit finished: %d iterations, primal %.3e, dual %.3e", iterations, primal, dual)
    return FitResult(beta=beta, eta=eta, zeta=zeta.T.copy(), v=v.T.copy(),
                     iterations=iterations, final_residual=primal,
                     converged=converged, final_dual_residual=dual)


def per_location_wls(data: Dataset) -> np.ndarray:
    """Independent weighted least squares per location (q must be 0).

    Used to anchor the default fusion-strength grid; rank-deficient blocks
    fall back to the jittered solve.
    """
    if data.q != 0:
        raise ValueError("per-location solve is defined for q = 0")
    bundle = _Bundle(data)
    out = np.empty((bundle.m, bundle.p))
    for i in range(bundle.m):
        fac = _factor_spd(bundle.XtWX[i], f"location {data.locations[i].location_id!r} normal matrix")
        out[i] = cho_solve(fac, bundle.XtWy[i])
    return out
