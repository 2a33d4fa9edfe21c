"""Fast invariant checks runnable from an installed package (``rppi selftest``)."""
from __future__ import annotations

import time
from typing import Callable

import numpy as np

from .esn import EsnParams, build_reservoir
from .mppi import MppiConfig, QuadraticCost, compute_control
from .numerics import SeededRng, SparseMatrix, cholesky_psd, spectral_radius
from .plants import DuffingParams, FourTankParams, duffing_step, fourtank_derivative, fourtank_step
from .qpmpc import BoxQp, solve_box_qp
from .rls import init_readout, rls_update


def check_cholesky() -> None:
    L, eps = cholesky_psd(np.array([[4.0, 2.0], [2.0, 3.0]]))
    assert eps == 0.0
    np.testing.assert_allclose(L, [[2.0, 0.0], [1.0, np.sqrt(2.0)]], atol=1e-15)


def check_spectral_radius() -> None:
    rng = np.random.default_rng(1)
    a = rng.uniform(-1, 1, (50, 50)) * (rng.random((50, 50)) < 0.2)
    est = spectral_radius(SparseMatrix.from_dense(a)).value
    ref = np.max(np.abs(np.linalg.eigvals(a)))
    assert abs(est - ref) <= 1e-6 * ref, (est, ref)


def check_reservoir() -> None:
    model = build_reservoir(EsnParams(60, 1, 0.5, 0.3, 0.8, 1.0), SeededRng(3, 0))
    rho = np.max(np.abs(np.linalg.eigvals(model.w_res.to_dense())))
    assert 0.99 * 0.8 <= rho <= 1.01 * 0.8


def check_rls_batch_oracle() -> None:
    rng = np.random.default_rng(2)
    n, ell, T, gamma = 20, 2, 200, 0.95
    X = rng.standard_normal((T, n))
    Y = rng.standard_normal((T, ell))
    s = init_readout(n, ell, 0.0, 1e6, gamma)
    for x, y in zip(X, Y):
        s = rls_update(s, x, y)
    w = gamma ** np.arange(T - 1, -1, -1)
    direct = np.linalg.solve(X.T @ (w[:, None] * X), X.T @ (w[:, None] * Y))
    err = np.linalg.norm(s.w_out - direct) / np.linalg.norm(direct)
    assert err < 1e-6, err


def check_degeneracy() -> None:
    model = build_reservoir(EsnParams(30, 1, 0.6, 0.3, 0.9, 1.0), SeededRng(5, 0))
    ro = init_readout(30, 1, 0.1, 1.0, 1.0, SeededRng(5, 1))
    costs = QuadraticCost.tracking(np.eye(1), [0.5])
    base = dict(K=64, H=5, lam=1.0, u_min=[-3.0], u_max=[3.0])
    plain = MppiConfig(**base)
    degenerate = MppiConfig(**base, K_tilde=1, sigma_tilde=[0.0], perturb_weights=True)
    x = np.random.default_rng(0).uniform(-1, 1, 30)
    a, _ = compute_control(model, x, ro, plain.initial_plan(), plain, costs, SeededRng(7, 2))
    b, _ = compute_control(model, x, ro, degenerate.initial_plan(), degenerate, costs,
                           SeededRng(7, 2), SeededRng(7, 3))
    assert np.array_equal(a, b)


def check_plants() -> None:
    z = duffing_step(DuffingParams(1.0, 1.0, 1.0, 1.0, 0.1), [1.0, 0.0], [0.0])
    np.testing.assert_allclose(z, [1.0, -0.2], atol=1e-15)
    p = FourTankParams()
    z = np.zeros(4)
    for _ in range(100_000):
        z = fourtank_step(p, z, [10.0, 10.0])
    assert np.max(np.abs(fourtank_derivative(p, z, [10.0, 10.0]))) < 1e-6


def check_box_qp() -> None:
    rng = np.random.default_rng(4)
    a = rng.standard_normal((10, 10))
    h = a @ a.T + np.eye(10)
    g = rng.standard_normal(10)
    z, status = solve_box_qp(BoxQp(h, g, np.full(10, -np.inf), np.full(10, np.inf)), tol=1e-12,
                             max_iters=200_000)
    assert status.converged
    np.testing.assert_allclose(z, np.linalg.solve(h, -g), atol=1e-8)


CHECKS: list[tuple[str, Callable[[], None]]] = [
    ("cholesky with jitter", check_cholesky),
    ("spectral radius vs dense eigenvalues", check_spectral_radius),
    ("reservoir spectral scaling", check_reservoir),
    ("recursive vs batch least squares", check_rls_batch_oracle),
    ("MPPI and degenerate UMPPI agree", check_degeneracy),
    ("plant one-step and fixed-point oracles", check_plants),
    ("box QP vs dense solve", check_box_qp),
]


def run_selftest(verbose: bool = False) -> list[str]:
    """Run every check; returns the names of the failing ones."""
    failures = []
    for name, fn in CHECKS:
        t0 = time.perf_counter()
        try:
            fn()
            ok, detail = True, ""
        except Exception as exc:  # noqa: BLE001 - every failure is reported, not raised
            ok, detail = False, f"{type(exc).__name__}: {exc}"
            failures.append(name)
        if verbose:
            status = "PASS" if ok else "FAIL"
            print(f"{status} {name} ({time.perf_counter() - t0:.2f}s) {detail}".rstrip())
    return failures
