"""Sampling-based predictive control on a learned ESN (MPPI and its uncertainty-aware variant).

Each control cycle draws ``K`` input-noise sequences and, for the uncertainty
-aware variant, ``K_tilde`` sequences of readout weights from the RLS posterior.
The reservoir is propagated once per input sample; only the cheap readout is
re-evaluated per weight sample, so the rollout cost is dominated by ``K`` state
propagations regardless of ``K_tilde``.

Plans are ``(M, H)`` arrays: column ``j`` is the input applied ``j`` steps ahead.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .esn import EsnModel
from .numerics import SeededRng
from .rls import ReadoutState, weight_covariance_factor

WARM_STARTS = ("reuse", "shift_repeat_last")
ROLLOUT_DTYPES = ("float64", "float32")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MppiConfig:
    """Controller hyperparameters.

    ``perturb_weights=False`` selects plain MPPI: the readout is used as is and
    no weight samples are drawn.  The input-noise covariance is always derived
    as ``lam * inv(R)`` and never stored.  ``rollout_dtype`` sets the precision
    of the batched reservoir propagation only; costs are accumulated in float64.
    """

    K: int = 1000
    H: int = 10
    lam: float = 1.0
    R: np.ndarray = field(default_factory=lambda: np.eye(1))
    u_ref: np.ndarray = field(default_factory=lambda: np.zeros(1))
    K_tilde: int = 1
    sigma_tilde: np.ndarray = field(default_factory=lambda: np.zeros(1))
    perturb_weights: bool = False
    u_min: np.ndarray | None = None
    u_max: np.ndarray | None = None
    warm_start: str = "reuse"
    baseline_subtraction: bool = True
    rollout_dtype: str = "float64"

    def __post_init__(self):
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        u_ref = np.atleast_1d(np.asarray(self.u_ref, dtype=float))
        sig = np.atleast_1d(np.asarray(self.sigma_tilde, dtype=float))
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "u_ref", u_ref)
        object.__setattr__(self, "sigma_tilde", sig)
        for name in ("u_min", "u_max"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, np.broadcast_to(
                    np.asarray(v, dtype=float), u_ref.shape).copy())
        if self.K < 1 or self.K_tilde < 1 or self.H < 1:
            raise ConfigError("K, K_tilde and H must be >= 1")
        if not self.lam > 0:
            raise ConfigError("lam must be positive")
        if R.shape != (u_ref.size, u_ref.size):
            raise ConfigError(f"R has shape {R.shape} but u_ref has length {u_ref.size}")
        if np.any(sig < 0):
            raise ConfigError("sigma_tilde entries must be nonnegative")
        if self.warm_start not in WARM_STARTS:
            raise ConfigError(f"warm_start must be one of {WARM_STARTS}")
        if self.rollout_dtype not in ROLLOUT_DTYPES:
            raise ConfigError(f"rollout_dtype must be one of {ROLLOUT_DTYPES}")
        if self.u_min is not None and self.u_max is not None and np.any(self.u_min > self.u_max):
            raise ConfigError("u_min exceeds u_max")
        try:
            np.linalg.cholesky(R)
        except np.linalg.LinAlgError as exc:
            raise ConfigError("R must be positive definite") from exc

    @property
    def input_dim(self) -> int:
        return self.u_ref.size

    @property
    def sigma(self) -> np.ndarray:
        return self.lam * np.linalg.inv(self.R)

    @property
    def sigma_inv(self) -> np.ndarray:
        return self.R / self.lam

    def initial_plan(self) -> np.ndarray:
        return np.repeat(self.u_ref[:, None], self.H, axis=1)


@dataclass(frozen=True)
class CostSpec:
    """Output costs; both callables map ``(..., L)`` arrays to ``(...)`` arrays."""

    stage_cost: Callable[[np.ndarray], np.ndarray]
    terminal_cost: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class QuadraticCost(CostSpec):
    """``0.5 (y - y_ref)' Q (y - y_ref)`` for stages and ``Q_terminal`` at the horizon end."""

    Q: np.ndarray = None
    Q_terminal: np.ndarray = None
    y_ref: np.ndarray = None

    @classmethod
    def tracking(cls, Q, y_ref, Q_terminal=None) -> "QuadraticCost":
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        Qt = Q if Q_terminal is None else np.atleast_2d(np.asarray(Q_terminal, dtype=float))
        r = np.atleast_1d(np.asarray(y_ref, dtype=float))

        def quad(W):
            def f(y):
                d = y - r
                return 0.5 * np.einsum("...i,ij,...j->...", d, W, d)
            return f

        return cls(quad(Q), quad(Qt), Q, Qt, r)


@dataclass
class ControlDiagnostics:
    ess: float
    beta: float
    eta: float
    degenerate: bool
    n_nonfinite: int
    wall_time: float = 0.0


def sample_input_noise(cfg: MppiConfig, rng: SeededRng) -> np.ndarray:
    """``(K, H, M)`` array of ``N(0, lam R^-1)`` draws."""
    try:
        chol = np.linalg.cholesky(cfg.sigma)
    except np.linalg.LinAlgError as exc:
        raise ConfigError("input-noise covariance is not positive definite") from exc
    xi = rng.standard_normal((cfg.K, cfg.H, cfg.input_dim))
    return xi @ chol.T


def sample_weight_perturbations(readout: ReadoutState, sigma_tilde, K_tilde: int, H: int,
                                rng: SeededRng) -> np.ndarray:
    """``(K_tilde, H+1, N, L)`` readout samples, independent across samples and horizon steps."""
    chol_p, chol_s = weight_covariance_factor(readout, sigma_tilde)
    n, ell = readout.w_out.shape
    g = rng.standard_normal((K_tilde, H + 1, n, ell))
    return readout.w_out + np.matmul(np.matmul(chol_p, g), chol_s.T)


def nominal_weights(readout: ReadoutState, H: int) -> np.ndarray:
    """The readout repeated over the horizon, shaped like one weight sample."""
    return np.broadcast_to(readout.w_out, (1, H + 1) + readout.w_out.shape)


def _outputs(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    # x: (K, N); w: (K_tilde, N, L) -> (K, K_tilde, L), always float64
    kt, n, ell = w.shape
    flat = np.ascontiguousarray(np.transpose(w, (1, 0, 2))).reshape(n, kt * ell)
    return (x @ flat.astype(x.dtype)).astype(float).reshape(x.shape[0], kt, ell)


def output_costs(model: EsnModel, x_t, inputs: np.ndarray, weights: np.ndarray,
                 costs: CostSpec, dtype="float64") -> np.ndarray:
    """Output part of the rollout cost for inputs ``(K, H, M)`` and weights ``(K_tilde, H+1, N, L)``.

    Stage costs are charged at the states before each input is applied and the
    terminal cost at the state after the last one.  Returns ``(K, K_tilde)``.
    """
    K, H, _ = inputs.shape
    if weights.shape[1] != H + 1 or weights.shape[2] != model.state_dim:
        raise ValueError(f"weights of shape {weights.shape} do not match H={H}, N={model.state_dim}")
    x = np.broadcast_to(np.asarray(x_t, dtype=float), (K, model.state_dim)).astype(dtype)
    s = np.zeros((K, weights.shape[0]))
    with np.errstate(over="ignore", invalid="ignore"):
        for tau in range(H):
            s += costs.stage_cost(_outputs(x, weights[:, tau]))
            x = model.step_batch(x, inputs[:, tau])
        s += costs.terminal_cost(_outputs(x, weights[:, H]))
    return s


def rollout_costs(model: EsnModel, x_t, plan: np.ndarray, noise: np.ndarray, weights: np.ndarray,
                  cfg: MppiConfig, costs: CostSpec) -> np.ndarray:
    """Cost matrix ``S`` of shape ``(K, K_tilde)``.

    Adds to the output costs the importance-sampling term
    ``sum_tau (u_hat - u_ref)' R (v - u_ref)``, i.e. ``lam (u_hat - u_ref)' Sigma^-1 (v - u_ref)``.
    Non-finite entries are left in place for :func:`mppi_update` to discard.
    """
    plan = np.asarray(plan, dtype=float)
    if plan.shape != (cfg.input_dim, noise.shape[1]):
        raise ValueError(f"plan of shape {plan.shape} does not match noise {noise.shape}")
    v = plan.T[None, :, :] + noise
    s = output_costs(model, x_t, v, weights, costs, cfg.rollout_dtype)
    du = plan.T - cfg.u_ref
    cross = np.einsum("hm,mn,khn->k", du, cfg.R, v - cfg.u_ref)
    return s + cross[:, None]


def importance_weights(S: np.ndarray, lam: float, baseline_subtraction: bool = True):
    """Unnormalized weights ``exp(-(S - beta)/lam)``; non-finite costs get weight 0."""
    S = np.asarray(S, dtype=float)
    finite = np.isfinite(S)
    if baseline_subtraction:
        beta = float(S[finite].min()) if finite.any() else 0.0
    else:
        beta = 0.0
    w = np.zeros_like(S)
    with np.errstate(over="ignore"):
        w[finite] = np.exp(-(S[finite] - beta) / lam)
    return w, beta


def mppi_update(plan: np.ndarray, noise: np.ndarray, S: np.ndarray, lam: float,
                baseline_subtraction: bool = True) -> tuple[np.ndarray, ControlDiagnostics]:
    """Importance-weighted plan ``U + sum_k w_k eps_k / eta``.

    If every weight vanishes (all costs non-finite, or underflow without a
    baseline) the input plan is returned unchanged and flagged degenerate.
    """
    plan = np.asarray(plan, dtype=float)
    w, beta = importance_weights(S, lam, baseline_subtraction)
    eta = float(w.sum())
    n_bad = int(np.count_nonzero(~np.isfinite(S)))
    if not (eta > 0.0 and np.isfinite(eta)):
        return plan.copy(), ControlDiagnostics(0.0, beta, eta, True, n_bad)
    per_input = w.sum(axis=1)
    delta = np.tensordot(per_input, noise, axes=(0, 0)) / eta
    ess = eta ** 2 / float(np.sum(w * w))
    return plan + delta.T, ControlDiagnostics(ess, beta, eta, False, n_bad)


def project_plan(plan: np.ndarray, u_min=None, u_max=None) -> np.ndarray:
    plan = np.asarray(plan, dtype=float)
    lo = None if u_min is None else np.asarray(u_min, dtype=float).reshape(-1, 1)
    hi = None if u_max is None else np.asarray(u_max, dtype=float).reshape(-1, 1)
    if lo is None and hi is None:
        return plan.copy()
    if lo is not None and hi is not None and np.any(lo > hi):
        raise ValueError("lower bound exceeds upper bound")
    return np.clip(plan, lo, hi)


def warm_start(plan_prev: np.ndarray, mode: str) -> np.ndarray:
    if mode == "reuse":
        return np.array(plan_prev, dtype=float)
    if mode == "shift_repeat_last":
        return np.concatenate([plan_prev[:, 1:], plan_prev[:, -1:]], axis=1)
    raise ConfigError(f"unknown warm start {mode!r}")


def compute_control(model: EsnModel, x_t, readout: ReadoutState, plan_prev: np.ndarray,
                    cfg: MppiConfig, costs: CostSpec, rng: SeededRng,
                    weight_rng: SeededRng | None = None) -> tuple[np.ndarray, ControlDiagnostics]:
    """One MPPI/UMPPI cycle: warm start, sample, roll out, reweight, project.

    ``rng`` drives the input noise; ``weight_rng`` (required when
    ``cfg.perturb_weights``) drives the readout perturbations, so the two
    sample sets come from independent streams.
    """
    t0 = time.perf_counter()
    plan = warm_start(plan_prev, cfg.warm_start)
    noise = sample_input_noise(cfg, rng)
    if cfg.perturb_weights:
        if weight_rng is None:
            raise ValueError("weight_rng is required when perturb_weights is set")
        weights = sample_weight_perturbations(readout, cfg.sigma_tilde, cfg.K_tilde, cfg.H, weight_rng)
    else:
        weights = nominal_weights(readout, cfg.H)
    S = rollout_costs(model, x_t, plan, noise, weights, cfg, costs)
    new_plan, diag = mppi_update(plan, noise, S, cfg.lam, cfg.baseline_subtraction)
    new_plan = project_plan(new_plan, cfg.u_min, cfg.u_max)
    diag.wall_time = time.perf_counter() - t0
    return new_plan, diag


def free_energy(S: np.ndarray, lam: float) -> float:
    """Monte Carlo ``-lam log E[exp(-S/lam)]`` over the given cost samples."""
    S = np.ravel(np.asarray(S, dtype=float))
    return float(-lam * (logsumexp(-S / lam) - np.log(S.size)))
