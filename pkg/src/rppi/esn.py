"""Leaky echo state network: fixed random reservoir plus a linear readout.

Text serialization format (one value per token, whitespace separated)::

    rppi-esn 1
    params <state_dim> <input_dim> <leak_rate> <density> <spectral_radius> <input_range> <activation>
    input_center <c_1> ... <c_M>
    input_scale <s_1> ... <s_M>
    w_res <nnz>
    <row> <col> <value>            # nnz lines
    w_in <state_dim> <input_dim>
    <value> ... <value>            # state_dim lines, input_dim values each

Floats are written with 17 significant digits so a save/load round trip is exact.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import SeededRng, SparseMatrix, sparse_matvec, spectral_radius

ACTIVATIONS = ("tanh", "identity")


@dataclass(frozen=True)
class EsnParams:
    state_dim: int
    input_dim: int = 1
    leak_rate: float = 1.0
    density: float = 0.1
    spectral_radius: float = 0.9
    input_range: float = 1.0
    activation: str = "tanh"
    input_center: tuple = ()
    input_scale: tuple = ()

    def __post_init__(self):
        center = tuple(float(v) for v in self.input_center) or (0.0,) * self.input_dim
        scale = tuple(float(v) for v in self.input_scale) or (1.0,) * self.input_dim
        object.__setattr__(self, "input_center", center)
        object.__setattr__(self, "input_scale", scale)
        if len(center) != self.input_dim or len(scale) != self.input_dim:
            raise ValueError("input_center and input_scale need one entry per input")
        if min(scale) <= 0:
            raise ValueError("input_scale entries must be positive")
        if self.state_dim < 1 or self.input_dim < 1:
            raise ValueError("state_dim and input_dim must be positive")
        if not 0.0 < self.leak_rate <= 1.0:
            raise ValueError(f"leak_rate must lie in (0, 1], got {self.leak_rate}")
        if not 0.0 <= self.density <= 1.0:
            raise ValueError(f"density must lie in [0, 1], got {self.density}")
        if not 0.0 <= self.spectral_radius <= 1.0:
            raise ValueError(f"spectral_radius must lie in [0, 1], got {self.spectral_radius}")
        if self.input_range <= 0.0:
            raise ValueError("input_range must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")


@dataclass(frozen=True)
class EsnModel:
    """Immutable reservoir.

    Inputs are normalized as ``(u - input_center) / input_scale`` before they
    reach ``w_in``; this is folded into ``w_in_eff`` and ``bias`` so that the
    pre-activation is ``w_res x + w_in_eff u + bias`` in plant units.
    ``w_res_dense`` mirrors ``w_res`` for batched products.
    """

    w_res: SparseMatrix
    w_in: np.ndarray
    params: EsnParams
    w_res_dense: np.ndarray = field(init=False, repr=False, compare=False)
    w_in_eff: np.ndarray = field(init=False, repr=False, compare=False)
    bias: np.ndarray = field(init=False, repr=False, compare=False)
    _single: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n, m = self.params.state_dim, self.params.input_dim
        if self.w_res.shape != (n, n) or self.w_in.shape != (n, m):
            raise ValueError("weight shapes do not match params")
        object.__setattr__(self, "w_res_dense", self.w_res.to_dense())
        w_eff = self.w_in / np.asarray(self.params.input_scale)
        object.__setattr__(self, "w_in_eff", w_eff)
        object.__setattr__(self, "bias", -(w_eff @ np.asarray(self.params.input_center)))
        object.__setattr__(self, "_single", tuple(
            a.astype(np.float32) for a in (self.w_res_dense, self.w_in_eff, self.bias)))

    @property
    def state_dim(self) -> int:
        return self.params.state_dim

    @property
    def input_dim(self) -> int:
        return self.params.input_dim

    def initial_state(self) -> np.ndarray:
        return np.zeros(self.state_dim)

    def activation(self, a: np.ndarray) -> np.ndarray:
        return np.tanh(a) if self.params.activation == "tanh" else a

    def activation_derivative(self, a: np.ndarray) -> np.ndarray:
        if self.params.activation == "tanh":
            return 1.0 - np.tanh(a) ** 2
        return np.ones_like(a)

    def step_batch(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Advance many states at once; ``x`` is (K, N), ``u`` is (K, M).

        A float32 ``x`` selects float32 copies of the weights, which roughly
        halves the cost of large rollouts; the result keeps the dtype of ``x``.
        """
        alpha = self.params.leak_rate
        if x.dtype == np.float32:
            w_res, w_in, bias = self._single
            u = u.astype(np.float32)
        else:
            w_res, w_in, bias = self.w_res_dense, self.w_in_eff, self.bias
        pre = x @ w_res.T
        pre += u @ w_in.T
        pre += bias
        out = self.activation(pre)
        out *= alpha
        out += (1.0 - alpha) * x
        return out


class ReservoirError(ValueError):
    pass


def build_reservoir(params: EsnParams, rng: SeededRng) -> EsnModel:
    """Draw a sparse reservoir and input matrix, then rescale to the target radius.

    Exactly ``round(density * N**2)`` positions are chosen uniformly without
    replacement, so each entry is present with probability ``density`` and
    the realized density never drifts by more than one entry.
    """
    n, m = params.state_dim, params.input_dim
    nnz = int(round(params.density * n * n))
    flat = np.sort(rng.choice(n * n, size=nnz, replace=False)) if nnz else np.zeros(0, np.int64)
    values = rng.uniform(-1.0, 1.0, size=nnz)
    w_res = SparseMatrix((n, n), flat // n, flat % n, values)
    target = params.spectral_radius
    if target > 0.0:
        rho = spectral_radius(w_res).value
        if rho == 0.0:
            raise ReservoirError("reservoir has zero spectral radius; cannot rescale to target")
        w_res = w_res.scaled(target / rho)
        check = spectral_radius(w_res).value
        if not 0.99 * target <= check <= 1.01 * target:
            raise ReservoirError(f"rescaled spectral radius {check} misses target {target}")
    else:
        w_res = SparseMatrix.empty(n, n)
    w_in = rng.uniform(-params.input_range, params.input_range, size=(n, m))
    return EsnModel(w_res, w_in, params)


def step(model: EsnModel, x, u) -> np.ndarray:
    """One leaky-integrator update ``(1-a) x + a f(W_res x + W_in u)``."""
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if u.shape != (model.input_dim,) or x.shape != (model.state_dim,):
        raise ValueError(f"expected x of length {model.state_dim} and u of length {model.input_dim}")
    alpha = model.params.leak_rate
    pre = sparse_matvec(model.w_res, x) + model.w_in_eff @ u + model.bias
    return (1.0 - alpha) * x + alpha * model.activation(pre)


def readout(w_out, x) -> np.ndarray:
    w_out = np.asarray(w_out, dtype=float)
    x = np.asarray(x, dtype=float)
    if w_out.ndim != 2 or w_out.shape[0] != x.shape[0]:
        raise ValueError(f"readout of shape {w_out.shape} incompatible with state of length {x.shape[0]}")
    return w_out.T @ x


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def save_model(model: EsnModel, path) -> None:
    p = model.params
    lines = ["rppi-esn 1",
             " ".join(["params", str(p.state_dim), str(p.input_dim), _fmt(p.leak_rate),
                       _fmt(p.density), _fmt(p.spectral_radius), _fmt(p.input_range), p.activation]),
             " ".join(["input_center"] + [_fmt(v) for v in p.input_center]),
             " ".join(["input_scale"] + [_fmt(v) for v in p.input_scale]),
             f"w_res {model.w_res.nnz}"]
    for r, c, v in zip(model.w_res.rows, model.w_res.cols, model.w_res.values):
        lines.append(f"{r} {c} {_fmt(v)}")
    lines.append(f"w_in {p.state_dim} {p.input_dim}")
    for row in model.w_in:
        lines.append(" ".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path) -> EsnModel:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].split() != ["rppi-esn", "1"]:
        raise ValueError(f"{path}: not an rppi-esn v1 file")
    head = lines[1].split()
    center = tuple(float(v) for v in lines[2].split()[1:])
    scale = tuple(float(v) for v in lines[3].split()[1:])
    params = EsnParams(state_dim=int(head[1]), input_dim=int(head[2]), leak_rate=float(head[3]),
                       density=float(head[4]), spectral_radius=float(head[5]),
                       input_range=float(head[6]), activation=head[7],
                       input_center=center, input_scale=scale)
    nnz = int(lines[4].split()[1])
    entries = [ln.split() for ln in lines[5:5 + nnz]]
    rows = np.array([int(e[0]) for e in entries], dtype=np.int64)
    cols = np.array([int(e[1]) for e in entries], dtype=np.int64)
    vals = np.array([float(e[2]) for e in entries])
    n = params.state_dim
    w_res = SparseMatrix((n, n), rows, cols, vals)
    start = 6 + nnz
    w_in = np.array([[float(v) for v in ln.split()] for ln in lines[start:start + n]])
    return EsnModel(w_res, w_in.reshape(n, params.input_dim), params)
