"""Ground-truth plants integrated with one explicit Euler step per control period."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DuffingParams:
    m: float = 1.1
    k: float = 1.1
    k_nl: float = 0.9
    c: float = 0.9
    dt: float = 0.1

    def __post_init__(self):
        if self.m <= 0 or self.dt <= 0:
            raise ValueError("Duffing mass and time step must be positive")


@dataclass(frozen=True)
class FourTankParams:
    A: tuple = (28.0, 32.0, 28.0, 32.0)
    a: tuple = (0.071, 0.057, 0.071, 0.057)
    b: tuple = (0.693, 0.606)
    g: float = 981.0
    dt: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "A", tuple(float(v) for v in self.A))
        object.__setattr__(self, "a", tuple(float(v) for v in self.a))
        object.__setattr__(self, "b", tuple(float(v) for v in self.b))
        if len(self.A) != 4 or len(self.a) != 4 or len(self.b) != 2:
            raise ValueError("four-tank needs 4 tank areas, 4 outlet areas and 2 split ratios")
        if min(self.A) <= 0 or min(self.a) <= 0:
            raise ValueError("tank and outlet areas must be positive")
        if not all(0.0 < b < 1.0 for b in self.b):
            raise ValueError("split ratios must lie in (0, 1)")
        if self.g <= 0 or self.dt <= 0:
            raise ValueError("g and dt must be positive")


def duffing_step(p: DuffingParams, z, u) -> np.ndarray:
    z1, z2 = np.asarray(z, dtype=float)
    u = float(np.ravel(u)[0])
    dz1 = z2
    dz2 = (-p.k * z1 - p.c * z2 - p.k_nl * z1 ** 3 + u) / p.m
    return np.array([z1 + p.dt * dz1, z2 + p.dt * dz2])


def duffing_output(z) -> np.ndarray:
    return np.asarray(z, dtype=float)[:1].copy()


def duffing_energy(p: DuffingParams, z) -> float:
    z1, z2 = z
    return 0.5 * p.m * z2 ** 2 + 0.5 * p.k * z1 ** 2 + 0.25 * p.k_nl * z1 ** 4


def fourtank_derivative(p: FourTankParams, z, u) -> np.ndarray:
    A1, A2, A3, A4 = p.A
    a1, a2, a3, a4 = p.a
    b1, b2 = p.b
    u1, u2 = np.asarray(u, dtype=float)
    q = np.sqrt(2.0 * p.g * np.maximum(np.asarray(z, dtype=float), 0.0))
    return np.array([
        (-a1 * q[0] + a3 * q[2] + b1 * u1) / A1,
        (-a2 * q[1] + a4 * q[3] + b2 * u2) / A2,
        (-a3 * q[2] + (1.0 - b2) * u2) / A3,
        (-a4 * q[3] + (1.0 - b1) * u1) / A4,
    ])


def fourtank_step(p: FourTankParams, z, u) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return np.maximum(z + p.dt * fourtank_derivative(p, z, u), 0.0)


def fourtank_output(z) -> np.ndarray:
    return np.asarray(z, dtype=float)[:2].copy()


class Plant:
    """Bundles a stepper, an output map and an initial state behind one interface."""

    def __init__(self, params, z0):
        self.params = params
        self.z0 = np.asarray(z0, dtype=float)
        if isinstance(params, DuffingParams):
            self.kind, self._step, self._out = "duffing", duffing_step, duffing_output
            self.input_dim, self.output_dim, n = 1, 1, 2
        elif isinstance(params, FourTankParams):
            self.kind, self._step, self._out = "fourtank", fourtank_step, fourtank_output
            self.input_dim, self.output_dim, n = 2, 2, 4
        else:
            raise TypeError(f"unsupported plant parameters {type(params).__name__}")
        if self.z0.shape != (n,):
            raise ValueError(f"{self.kind} initial state must have length {n}")

    @property
    def dt(self) -> float:
        return self.params.dt

    def step(self, z, u) -> np.ndarray:
        return self._step(self.params, z, u)

    def output(self, z) -> np.ndarray:
        return self._out(z)
