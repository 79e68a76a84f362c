"""Concave fusion penalty: closed-form evaluation, derivative and proximal map.

The penalty on a pairwise difference of norm t is the integral of
``lam * min(1, (gamma - x/lam)_+ / (gamma - 1))`` from 0 to t, which is linear
up to ``lam``, blends quadratically on ``(lam, gamma*lam]`` and is flat
beyond.  The quadrature form lives only in the test oracles; everything here
is the closed-form piecewise version.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .types import ValidationError


@dataclass(frozen=True)
class ScadSpec:
    """Fusion strength ``lam`` (>= 0) and shape ``gamma`` (> 2).

    Inside the solver ``gamma`` must additionally exceed ``1 + 1/vartheta``
    so that the middle branch of the proximal map stays a convex problem;
    that is checked where vartheta is known.
    """

    lam: float
    gamma: float = 3.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValidationError("lam must be nonnegative")
        if not self.gamma > 2:
            raise ValidationError("gamma must exceed 2")


def check_prox_compatible(spec: ScadSpec, vartheta: float) -> None:
    """Reject (gamma, vartheta) pairs whose middle proximal branch is concave."""
    if not spec.gamma > 1.0 + 1.0 / vartheta:
        raise ValidationError(
            f"gamma={spec.gamma} must exceed 1 + 1/vartheta = {1.0 + 1.0 / vartheta}"
        )


def scad_value(t, spec: ScadSpec):
    """Penalty value at nonnegative ``t`` (scalar or array).

    Piecewise closed form: ``lam*t`` on [0, lam]; quadratic blend
    ``(gamma*lam*t - (t^2 + lam^2)/2) / (gamma - 1)`` on (lam, gamma*lam];
    constant ``lam^2 (gamma+1)/2`` beyond.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValidationError("t must be nonnegative (pass a norm)")
    lam, gam = spec.lam, spec.gamma
    if lam == 0:
        return np.zeros_like(t) if t.ndim else 0.0
    out = np.where(
        t <= lam,
        lam * t,
        np.where(
            t <= gam * lam,
            (gam * lam * t - 0.5 * (t * t + lam * lam)) / (gam - 1.0),
            0.5 * lam * lam * (gam + 1.0),
        ),
    )
    return out if t.ndim else float(out)


def scad_derivative(t, spec: ScadSpec):
    """Right derivative of :func:`scad_value` at nonnegative ``t``.

    Equals ``lam`` on [0, lam], decays linearly as ``(gamma*lam - t)/(gamma-1)``
    on (lam, gamma*lam], and is 0 beyond; kink points take the right limit.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValidationError("t must be nonnegative")
    lam, gam = spec.lam, spec.gamma
    if lam == 0:
        return np.zeros_like(t) if t.ndim else 0.0
    out = np.where(
        t <= lam,
        lam,
        np.where(t <= gam * lam, (gam * lam - t) / (gam - 1.0), 0.0),
    )
    return out if t.ndim else float(out)


def group_soft_threshold(w: np.ndarray, t: float) -> np.ndarray:
    """Shrink the whole vector toward zero: ``(1 - t/||w||)_+ w``.

    Returns the zero vector when ``||w|| <= t`` (including ``w = 0``).
    """
    if t < 0:
        raise ValidationError("threshold must be nonnegative")
    w = np.asarray(w, dtype=float)
    nrm = float(np.linalg.norm(w))
    if nrm <= t:
        return np.zeros_like(w)
    return (1.0 - t / nrm) * w


def zeta_proximal(kappa: np.ndarray, spec: ScadSpec, vartheta: float) -> np.ndarray:
    """Minimize ``vartheta/2 ||kappa - z||^2 + penalty(||z||)`` over z.

    Three cases keyed on ``||kappa||``: group soft-threshold at ``lam/vartheta``
    up to ``lam + lam/vartheta``; a rescaled soft-threshold on the middle band
    up to ``gamma*lam``; the identity beyond (large differences unshrunk).
    """
    check_prox_compatible(spec, vartheta)
    kappa = np.asarray(kappa, dtype=float)
    lam, gam = spec.lam, spec.gamma
    nrm = float(np.linalg.norm(kappa))
    if nrm > gam * lam:
        return kappa.copy()
    if nrm <= lam + lam / vartheta:
        return group_soft_threshold(kappa, lam / vartheta)
    shrink = 1.0 / ((gam - 1.0) * vartheta)
    return group_soft_threshold(kappa, gam * lam * shrink) / (1.0 - shrink)


def prox_columns(kappa: np.ndarray, spec: ScadSpec, vartheta: float) -> np.ndarray:
    """Column-vectorized :func:`zeta_proximal` for a (npairs, p) block of kappas."""
    check_prox_compatible(spec, vartheta)
    kappa = np.asarray(kappa, dtype=float)
    lam, gam = spec.lam, spec.gamma
    norms = np.linalg.norm(kappa, axis=1)
    out = kappa.copy()

    if lam == 0:
        return out

    safe = np.where(norms > 0, norms, 1.0)

    low = norms <= lam + lam / vartheta
    scale_low = np.maximum(0.0, 1.0 - (lam / vartheta) / safe)
    mid = ~low & (norms <= gam * lam)
    shrink = 1.0 / ((gam - 1.0) * vartheta)
    scale_mid = np.maximum(0.0, 1.0 - (gam * lam * shrink) / safe) / (1.0 - shrink)

    out[low] *= scale_low[low, None]
    out[mid] *= scale_mid[mid, None]
    return out
