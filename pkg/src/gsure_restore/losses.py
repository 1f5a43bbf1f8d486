"""Fidelity terms: least squares, back-projection and projected GSURE.

Every loss accepts :class:`~gsure_restore.autodiff.Tensor` inputs (and plain
arrays, which are treated as constants) and returns a scalar ``Tensor`` so the
solvers can backpropagate through it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, lift
from .linop import SpectralOperator

DEFAULT_EPSILON = 1e-6


@dataclass(frozen=True)
class GsureProbe:
    """Gaussian probe ``g`` and finite-difference step for the MC divergence."""

    g: np.ndarray
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")

    @classmethod
    def draw(cls, rng: np.random.Generator, shape, epsilon: float = DEFAULT_EPSILON) -> "GsureProbe":
        return cls(rng.standard_normal(shape), epsilon)


def _check_hr(op: SpectralOperator, t: Tensor, what: str) -> None:
    if t.shape[-2:] != op.hr_shape:
        raise ValueError(f"{what}: expected spatial shape {op.hr_shape}, got {t.shape[-2:]}")


def _check_lr(op: SpectralOperator, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-2:] != op.lr_shape:
        raise ValueError(f"observation: expected spatial shape {op.lr_shape}, got {y.shape[-2:]}")
    return y


def ls_loss(op: SpectralOperator, x_tilde, y) -> Tensor:
    """``||y - H x||^2``."""
    x = lift(x_tilde)
    _check_hr(op, x, "ls_loss")
    y = _check_lr(op, y)
    hx = ad.linear(x, op.H, op.Ht)
    return ad.sumsq(hx - y)


def bp_loss(op: SpectralOperator, x_tilde, y) -> Tensor:
    """``||H^+ (y - H x)||^2``."""
    x = lift(x_tilde)
    _check_hr(op, x, "bp_loss")
    y = _check_lr(op, y)
    residual = lift(y) - ad.linear(x, op.H, op.Ht)
    return ad.sumsq(ad.linear(residual, op.pinv, op.pinvT))


def mc_divergence(op: SpectralOperator, f_u, f_u_perturbed, probe: GsureProbe) -> Tensor:
    """``g^T P_H (f(u + eps g) - f(u)) / eps``, the MC estimate of ``div_u P_H f``."""
    f0, f1 = lift(f_u), lift(f_u_perturbed)
    if f0.shape != f1.shape or f0.shape != probe.g.shape:
        raise ValueError(f"probe/output shape mismatch: {f0.shape}, {f1.shape}, {probe.g.shape}")
    # P_H is self-adjoint, so project the probe once instead of the difference
    return ad.inner(f1 - f0, op.PH(probe.g)) * (1.0 / probe.epsilon)


def gsure_loss(
    op: SpectralOperator,
    f_u,
    f_u_perturbed,
    y,
    probe: GsureProbe,
    x_ml: np.ndarray | None = None,
    divergence: bool = True,
) -> Tensor:
    """Projected GSURE without its additive constant.

    ``||P_H f(u)||^2 - 2 f(u)^T H^+ y + 2 g^T P_H (f(u + eps g) - f(u)) / eps``

    The value estimates the projected MSE minus an unknown constant, so it
    can be negative. ``x_ml`` may be passed to avoid recomputing ``H^+ y``;
    ``divergence=False`` drops the last term (which makes the loss equivalent
    to :func:`bp_loss` up to a constant).
    """
    f0 = lift(f_u)
    _check_hr(op, f0, "gsure_loss")
    if x_ml is None:
        x_ml = op.pinv(_check_lr(op, y))
    loss = ad.sumsq(ad.linear(f0, op.PH, op.PH)) - 2.0 * ad.inner(f0, x_ml)
    if divergence:
        loss = loss + 2.0 * mc_divergence(op, f0, f_u_perturbed, probe)
    return loss


def gsure_loss_paired(op, f_u, f_plus, f_minus, y, probe: GsureProbe, x_ml=None) -> Tensor:
    """GSURE with the probe pair ``(g, -g)`` averaged (central difference)."""
    f0 = lift(f_u)
    if x_ml is None:
        x_ml = op.pinv(_check_lr(op, y))
    loss = ad.sumsq(ad.linear(f0, op.PH, op.PH)) - 2.0 * ad.inner(f0, x_ml)
    div = ad.inner(lift(f_plus) - lift(f_minus), op.PH(probe.g)) * (0.5 / probe.epsilon)
    return loss + 2.0 * div


def projected_mse(op: SpectralOperator, x_hat, x_true) -> float:
    """``||P_H x_hat - P_H x_true||^2`` (evaluation only; needs ground truth)."""
    x_hat = np.asarray(x_hat, dtype=np.float64)
    x_true = np.asarray(x_true, dtype=np.float64)
    if x_hat.shape != x_true.shape:
        raise ValueError(f"shape mismatch: {x_hat.shape} vs {x_true.shape}")
    d = op.PH(x_hat - x_true)
    return float(np.vdot(d, d))
