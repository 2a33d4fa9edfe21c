"""Baseline MPC: linearize the learned ESN around the previous plan and solve a box QP.

The QP decision variable is the stacked plan correction ``dU`` with time-major
ordering (index ``tau * M + m``).  Its objective is ``0.5 dU' H dU + g' dU``
with ``H = 2 (G' Qbar G + Rbar)``, i.e. twice the tracking cost of the
linearized model up to a constant, which leaves the minimizer unchanged.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .esn import EsnModel
from .mppi import QuadraticCost, warm_start
from .numerics import spectral_radius
from .rls import ReadoutState


class UnsupportedCostError(TypeError):
    pass


@dataclass
class LinearizedEsn:
    """Jacobians of the reservoir update along a nominal trajectory.

    ``states[j]`` is the nominal state ``j`` steps ahead (``states[0] = x_t``),
    ``offsets[j] = F(states[j], u_j) = states[j+1]``, and ``A[j]``, ``B[j]`` are
    the state and input Jacobians at ``(states[j], u_j)``.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    states: np.ndarray
    offsets: np.ndarray

    @property
    def horizon(self) -> int:
        return self.A.shape[0]


@dataclass
class BoxQp:
    hessian: np.ndarray
    gradient: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def objective(self, z) -> float:
        return float(0.5 * z @ self.hessian @ z + self.gradient @ z)


@dataclass
class QpStatus:
    converged: bool
    iterations: int
    kkt_residual: float
    objective: float


@dataclass(frozen=True)
class QpmpcConfig:
    H: int = 10
    R: np.ndarray = field(default_factory=lambda: np.eye(1))
    u_ref: np.ndarray = field(default_factory=lambda: np.zeros(1))
    u_min: np.ndarray | None = None
    u_max: np.ndarray | None = None
    warm_start: str = "reuse"
    tol: float = 1e-8
    max_iters: int = 20000

    def __post_init__(self):
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        u_ref = np.atleast_1d(np.asarray(self.u_ref, dtype=float))
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "u_ref", u_ref)
        for name in ("u_min", "u_max"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, np.broadcast_to(
                    np.asarray(v, dtype=float), u_ref.shape).copy())
        if R.shape != (u_ref.size, u_ref.size):
            raise ValueError("R and u_ref dimensions disagree")

    @property
    def input_dim(self) -> int:
        return self.u_ref.size

    def initial_plan(self) -> np.ndarray:
        return np.repeat(self.u_ref[:, None], self.H, axis=1)


def linearize_esn(model: EsnModel, readout: ReadoutState, x_t, plan_nom) -> LinearizedEsn:
    plan_nom = np.atleast_2d(np.asarray(plan_nom, dtype=float))
    H = plan_nom.shape[1]
    n, m = model.state_dim, model.input_dim
    alpha = model.params.leak_rate
    w_res, w_in, bias = model.w_res_dense, model.w_in_eff, model.bias
    states = np.empty((H + 1, n))
    states[0] = x_t
    A = np.empty((H, n, n))
    B = np.empty((H, n, m))
    eye = np.eye(n)
    for j in range(H):
        pre = w_res @ states[j] + w_in @ plan_nom[:, j] + bias
        d = model.activation_derivative(pre)
        A[j] = (1.0 - alpha) * eye + alpha * d[:, None] * w_res
        B[j] = alpha * d[:, None] * w_in
        states[j + 1] = (1.0 - alpha) * states[j] + alpha * model.activation(pre)
    return LinearizedEsn(A, B, readout.w_out.T.copy(), states, states[1:].copy())


def output_sensitivity(lin: LinearizedEsn) -> np.ndarray:
    """``G`` with ``dy_{t+j} = G[j-1 block] @ dU`` for ``j = 1..H`` (shape ``(L*H, M*H)``)."""
    H = lin.horizon
    n, m = lin.B.shape[1], lin.B.shape[2]
    ell = lin.C.shape[0]
    phi = np.zeros((n, m * H))
    G = np.zeros((ell * H, m * H))
    for j in range(H):
        phi = lin.A[j] @ phi
        phi[:, j * m:(j + 1) * m] += lin.B[j]
        G[j * ell:(j + 1) * ell] = lin.C @ phi
    return G


def build_qp(lin: LinearizedEsn, cost: QuadraticCost, R, u_ref, plan_nom,
             u_min=None, u_max=None) -> BoxQp:
    if not isinstance(cost, QuadraticCost):
        raise UnsupportedCostError("the QP baseline supports quadratic output costs only")
    plan_nom = np.atleast_2d(np.asarray(plan_nom, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    u_ref = np.atleast_1d(np.asarray(u_ref, dtype=float))
    H = lin.horizon
    m = plan_nom.shape[0]
    G = output_sensitivity(lin)
    y_nom = (lin.states[1:] @ lin.C.T).ravel()
    r = np.tile(cost.y_ref, H)
    blocks = [cost.Q] * (H - 1) + [cost.Q_terminal]
    Qbar = _block_diag(blocks)
    Rbar = _block_diag([R] * H)
    u_nom = plan_nom.T.ravel()
    hessian = 2.0 * (G.T @ Qbar @ G + Rbar)
    hessian = 0.5 * (hessian + hessian.T)
    gradient = 2.0 * (G.T @ Qbar @ (y_nom - r) + Rbar @ (u_nom - np.tile(u_ref, H)))
    lo = np.full(m * H, -np.inf) if u_min is None else np.tile(u_min, H) - u_nom
    hi = np.full(m * H, np.inf) if u_max is None else np.tile(u_max, H) - u_nom
    return BoxQp(hessian, gradient, lo, hi)


def _block_diag(blocks) -> np.ndarray:
    rows = sum(b.shape[0] for b in blocks)
    cols = sum(b.shape[1] for b in blocks)
    out = np.zeros((rows, cols))
    i = j = 0
    for b in blocks:
        out[i:i + b.shape[0], j:j + b.shape[1]] = b
        i += b.shape[0]
        j += b.shape[1]
    return out


def solve_box_qp(qp: BoxQp, tol: float = 1e-8, max_iters: int = 20000,
                 z0=None) -> tuple[np.ndarray, QpStatus]:
    """Projected gradient descent with fixed step ``1/L``, ``L`` the largest Hessian eigenvalue.

    Stops once ``||z - clip(z - grad)||_inf <= tol``; that quantity is also the
    reported KKT residual.  With this step the objective is non-increasing.
    """
    Hm, g, lo, hi = qp.hessian, qp.gradient, qp.lower, qp.upper
    if np.any(lo > hi):
        raise ValueError("infeasible box")
    z = np.clip(np.zeros_like(g) if z0 is None else np.asarray(z0, dtype=float), lo, hi)
    lmax = spectral_radius(Hm, tol=1e-8).value
    if lmax == 0.0:
        # linear objective: every coordinate runs to the bound opposite its gradient
        z = np.where(g > 0, lo, np.where(g < 0, hi, z))
        resid = float(np.max(np.abs(z - np.clip(z - g, lo, hi)), initial=0.0))
        return z, QpStatus(bool(np.all(np.isfinite(z))), 0, resid, qp.objective(z))
    step = 1.0 / (lmax * (1.0 + 1e-9))
    resid = np.inf
    for it in range(max_iters + 1):
        grad = Hm @ z + g
        resid = float(np.max(np.abs(z - np.clip(z - grad, lo, hi)), initial=0.0))
        if resid <= tol:
            return z, QpStatus(True, it, resid, qp.objective(z))
        if it == max_iters:
            break
        z = np.clip(z - step * grad, lo, hi)
    return z, QpStatus(False, max_iters, resid, qp.objective(z))


@dataclass
class QpmpcDiagnostics:
    status: QpStatus
    wall_time: float = 0.0


def qpmpc_control(model: EsnModel, x_t, readout: ReadoutState, plan_prev, cfg: QpmpcConfig,
                  costs: QuadraticCost) -> tuple[np.ndarray, QpmpcDiagnostics]:
    """One linearization and one QP solve around the warm-started previous plan."""
    t0 = time.perf_counter()
    plan_nom = warm_start(np.asarray(plan_prev, dtype=float), cfg.warm_start)
    lin = linearize_esn(model, readout, x_t, plan_nom)
    qp = build_qp(lin, costs, cfg.R, cfg.u_ref, plan_nom, cfg.u_min, cfg.u_max)
    dz, status = solve_box_qp(qp, cfg.tol, cfg.max_iters)
    plan = plan_nom + dz.reshape(cfg.H, cfg.input_dim).T
    if cfg.u_min is not None or cfg.u_max is not None:
        lo = None if cfg.u_min is None else cfg.u_min[:, None]
        hi = None if cfg.u_max is None else cfg.u_max[:, None]
        plan = np.clip(plan, lo, hi)
    return plan, QpmpcDiagnostics(status, time.perf_counter() - t0)
