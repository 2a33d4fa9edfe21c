"""Recursive least squares for the ESN readout, and sampling of its uncertainty.

With discount ``gamma = 1`` and Gaussian output noise of covariance
``sigma_tilde`` the estimation error of the readout satisfies
``cov(vec(W - W_true)) = sigma_tilde (x) P``, where ``vec`` stacks columns.
:func:`weight_covariance_factor` returns Cholesky factors that realize this
covariance through the matrix-normal identity ``W + L_P G L_S^T``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .numerics import SeededRng, SingularMatrixError, cholesky_psd


class NumericalBreakdownError(ArithmeticError):
    pass


@dataclass(frozen=True)
class ReadoutState:
    """Readout weights ``w_out`` (N x L), inverse-Gram matrix ``p`` (N x N), discount ``gamma``."""

    w_out: np.ndarray
    p: np.ndarray
    gamma: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        n = self.w_out.shape[0]
        if self.p.shape != (n, n):
            raise ValueError(f"p has shape {self.p.shape}, expected {(n, n)}")

    @property
    def state_dim(self) -> int:
        return self.w_out.shape[0]

    @property
    def output_dim(self) -> int:
        return self.w_out.shape[1]


def init_readout(state_dim: int, output_dim: int, init_range: float = 0.1, p_scale: float = 1.0,
                 gamma: float = 1.0, rng: SeededRng | None = None) -> ReadoutState:
    if p_scale <= 0:
        raise ValueError("p_scale must be positive")
    if init_range > 0:
        if rng is None:
            raise ValueError("rng is required when init_range > 0")
        w = rng.uniform(-init_range, init_range, size=(state_dim, output_dim))
    else:
        w = np.zeros((state_dim, output_dim))
    return ReadoutState(w, p_scale * np.eye(state_dim), gamma)


def rls_update(s: ReadoutState, x, y) -> ReadoutState:
    x = np.asarray(x, dtype=float)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != (s.state_dim,) or y.shape != (s.output_dim,):
        raise ValueError(f"expected x of length {s.state_dim} and y of length {s.output_dim}")
    px = s.p @ x
    denom = s.gamma + x @ px
    if not denom > 0.0:
        raise NumericalBreakdownError(f"gamma + x'Px = {denom} is not positive")
    gain = px / denom
    resid = y - s.w_out.T @ x
    w = s.w_out + np.outer(gain, resid)
    p = (s.p - np.outer(gain, px)) / s.gamma
    p = 0.5 * (p + p.T)
    return ReadoutState(w, p, s.gamma)


def weight_covariance_factor(s: ReadoutState, sigma_tilde) -> tuple[np.ndarray, np.ndarray]:
    """Factors ``(chol_P, chol_S)`` with ``W + chol_P @ G @ chol_S.T ~ MN(W, P, S)``.

    ``sigma_tilde`` is the diagonal of the output-noise covariance (or the
    diagonal matrix itself).
    """
    sig = np.asarray(sigma_tilde, dtype=float)
    if sig.ndim == 2:
        if np.any(sig - np.diag(np.diag(sig))):
            raise ValueError("sigma_tilde must be diagonal")
        sig = np.diag(sig)
    sig = np.atleast_1d(sig)
    if sig.shape != (s.output_dim,) or np.any(sig < 0):
        raise ValueError("sigma_tilde must hold one nonnegative variance per output")
    if s.gamma != 1.0:
        warnings.warn("weight covariance is exact only for gamma = 1; using P regardless",
                      RuntimeWarning, stacklevel=2)
    try:
        chol_p, _ = cholesky_psd(s.p)
    except SingularMatrixError as exc:
        raise SingularMatrixError(f"precision matrix is not positive definite: {exc}") from exc
    return chol_p, np.diag(np.sqrt(sig))
