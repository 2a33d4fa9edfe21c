"""Closed-loop experiments: identify, control and apply, one step at a time.

Each seed derives independent random streams for the reservoir, the readout
initialization, the input noise and the readout perturbations, so changing
controller sample sizes never changes the reservoir a seed produces.
"""
from __future__ import annotations

import csv
import hashlib
import io
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, is_dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .esn import EsnModel, EsnParams, build_reservoir, step as esn_step
from .mppi import ConfigError, MppiConfig, QuadraticCost, compute_control
from .numerics import SeededRng
from .plants import DuffingParams, FourTankParams, Plant
from .qpmpc import QpmpcConfig, qpmpc_control
from .rls import ReadoutState, init_readout, rls_update

CONTROLLERS = ("mppi", "umppi", "qpmpc")

# stream ids of the per-seed substreams
STREAM_RESERVOIR = 0
STREAM_READOUT = 1
STREAM_INPUT_NOISE = 2
STREAM_WEIGHT_NOISE = 3
STREAM_TUNING = 4


@dataclass(frozen=True)
class Schedule:
    """Piecewise-constant reference cycling through ``levels``, switching every ``period_s`` seconds."""

    levels: tuple
    period_s: float

    def __post_init__(self):
        levels = tuple(tuple(float(v) for v in np.atleast_1d(lv)) for lv in self.levels)
        if not levels:
            raise ConfigError("schedule.levels must hold at least one level")
        if len({len(lv) for lv in levels}) != 1:
            raise ConfigError("schedule.levels must all have the same length")
        if not self.period_s > 0:
            raise ConfigError("schedule.period_s must be positive")
        object.__setattr__(self, "levels", levels)

    @property
    def output_dim(self) -> int:
        return len(self.levels[0])


def reference_at(schedule: Schedule, time_s: float) -> np.ndarray:
    if time_s < 0:
        raise ValueError("time must be nonnegative")
    # a small tolerance keeps t*dt landing exactly on a switch (e.g. 200*0.1) in the new segment
    idx = int(math.floor(time_s / schedule.period_s + 1e-9)) % len(schedule.levels)
    return np.array(schedule.levels[idx])


@dataclass(frozen=True)
class ReadoutInit:
    init_range: float = 0.1
    p_scale: float = 1.0
    gamma: float = 1.0


def deep_equal(a, b) -> bool:
    """Structural equality that compares numpy arrays by shape and value."""
    if is_dataclass(a) or is_dataclass(b):
        return type(a) is type(b) and all(deep_equal(getattr(a, f.name), getattr(b, f.name))
                                          for f in fields(a) if f.init)
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        return (a is None) == (b is None) and np.shape(a) == np.shape(b) and np.array_equal(a, b)
    if isinstance(a, (tuple, list)) and isinstance(b, (tuple, list)):
        return len(a) == len(b) and all(deep_equal(x, y) for x, y in zip(a, b))
    return a == b


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """Everything needed to reproduce one closed-loop experiment.

    ``controller`` selects the algorithm; ``mppi`` holds the sampling settings
    (used by both ``mppi`` and ``umppi``, the latter with weight perturbation)
    and ``qpmpc`` the baseline settings.  ``Q`` and ``Q_terminal`` weight the
    output tracking error.
    """

    plant: DuffingParams | FourTankParams
    z0: tuple
    esn: EsnParams
    readout: ReadoutInit
    controller: str
    mppi: MppiConfig
    qpmpc: QpmpcConfig
    Q: np.ndarray
    Q_terminal: np.ndarray
    schedule: Schedule
    T: int
    seeds: tuple = (0,)
    tuning_plant: DuffingParams | FourTankParams | None = None
    out_dir: str = "out"
    record_timing: bool = True

    def __post_init__(self):
        object.__setattr__(self, "z0", tuple(float(v) for v in self.z0))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "Q", np.atleast_2d(np.asarray(self.Q, dtype=float)))
        object.__setattr__(self, "Q_terminal", np.atleast_2d(np.asarray(self.Q_terminal, dtype=float)))
        self.validate()

    def __eq__(self, other) -> bool:
        return isinstance(other, ExperimentConfig) and deep_equal(self, other)

    __hash__ = object.__hash__

    def validate(self) -> None:
        if self.controller not in CONTROLLERS:
            raise ConfigError(f"controller.kind must be one of {CONTROLLERS}, got {self.controller!r}")
        plant = self.make_plant()
        m, ell = plant.input_dim, plant.output_dim
        if self.esn.input_dim != m:
            raise ConfigError(f"esn.input_dim is {self.esn.input_dim} but the plant has {m} inputs")
        if self.mppi.input_dim != m or self.qpmpc.input_dim != m:
            raise ConfigError(f"controller.R and controller.u_ref must have dimension {m}")
        if self.Q.shape != (ell, ell) or self.Q_terminal.shape != (ell, ell):
            raise ConfigError(f"controller.Q and controller.Q_terminal must be {ell}x{ell}")
        if self.mppi.sigma_tilde.shape != (ell,):
            raise ConfigError(f"controller.sigma_tilde must have {ell} entries")
        if self.schedule.output_dim != ell:
            raise ConfigError(f"schedule.levels entries must have {ell} components")
        if self.mppi.H != self.qpmpc.H:
            raise ConfigError("controller.H disagrees between sampling and QP settings")
        if self.T < 0:
            raise ConfigError("run.T must be nonnegative")
        if not self.seeds:
            raise ConfigError("run.seeds must name at least one seed")
        if self.tuning_plant is not None and type(self.tuning_plant) is not type(self.plant):
            raise ConfigError("tuning_plant must describe the same kind of plant")

    def make_plant(self, tuning: bool = False) -> Plant:
        params = self.tuning_plant if tuning and self.tuning_plant is not None else self.plant
        try:
            return Plant(params, self.z0)
        except ValueError as exc:
            raise ConfigError(f"plant.z0: {exc}") from exc

    @property
    def u_ref(self) -> np.ndarray:
        return self.mppi.u_ref

    @property
    def R(self) -> np.ndarray:
        return self.mppi.R

    def sampling_config(self) -> MppiConfig:
        return replace(self.mppi, perturb_weights=self.controller == "umppi")


@dataclass
class RunLog:
    """Per-step record of one closed loop; row ``t`` holds the input applied at step ``t``."""

    t: np.ndarray
    u: np.ndarray
    y: np.ndarray
    y_ref: np.ndarray
    stage_cost: np.ndarray
    ctrl_time: np.ndarray
    config_hash: str = ""
    status: str = "ok"
    error: str = ""

    @classmethod
    def empty(cls, m: int, ell: int, config_hash: str = "") -> "RunLog":
        return cls(np.zeros(0, dtype=np.int64), np.zeros((0, m)), np.zeros((0, ell)),
                   np.zeros((0, ell)), np.zeros(0), np.zeros(0), config_hash)

    def __len__(self) -> int:
        return len(self.t)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def header(self) -> list[str]:
        m, ell = self.u.shape[1], self.y.shape[1]
        return (["t"] + [f"u_{i}" for i in range(m)] + [f"y_{i}" for i in range(ell)]
                + [f"yref_{i}" for i in range(ell)] + ["stage_cost", "ctrl_time_s"])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# config_sha256={self.config_hash} status={self.status}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())
        for i in range(len(self)):
            w.writerow([str(int(self.t[i]))]
                       + [_fmt(v) for v in self.u[i]] + [_fmt(v) for v in self.y[i]]
                       + [_fmt(v) for v in self.y_ref[i]]
                       + [_fmt(self.stage_cost[i]), _fmt(self.ctrl_time[i])])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "RunLog":
        lines = text.splitlines()
        meta = {}
        if lines and lines[0].startswith("#"):
            for tok in lines[0][1:].split():
                key, _, val = tok.partition("=")
                meta[key] = val
            lines = lines[1:]
        rows = list(csv.reader(lines))
        head = rows[0]
        m = sum(h.startswith("u_") for h in head)
        ell = sum(h.startswith("y_") for h in head)
        data = np.array([[float(v) for v in r] for r in rows[1:]]).reshape(-1, len(head))
        return cls(data[:, 0].astype(np.int64), data[:, 1:1 + m], data[:, 1 + m:1 + m + ell],
                   data[:, 1 + m + ell:1 + m + 2 * ell], data[:, -2], data[:, -1],
                   meta.get("config_sha256", ""), meta.get("status", "ok"))


def _fmt(v) -> str:
    return format(float(v), ".17g")


def config_hash(cfg: ExperimentConfig) -> str:
    # local import: the text form lives with the config parser
    from .cli import emit_config
    return hashlib.sha256(emit_config(cfg).encode()).hexdigest()


def stage_cost(y, y_ref, u, Q, R, u_ref) -> float:
    e = np.asarray(y, dtype=float) - y_ref
    du = np.asarray(u, dtype=float) - u_ref
    return float(0.5 * e @ Q @ e + 0.5 * du @ R @ du)


def integrated_cost(log: RunLog, Q, R, u_ref) -> float:
    """Sum over logged steps of ``0.5 |y - y_ref|_Q^2 + 0.5 |u - u_ref|_R^2``."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    e = log.y - log.y_ref
    du = log.u - np.asarray(u_ref, dtype=float)
    return float(0.5 * np.einsum("ti,ij,tj->", e, Q, e) + 0.5 * np.einsum("ti,ij,tj->", du, R, du))


@dataclass
class SeedModels:
    model: EsnModel
    readout: ReadoutState


def build_models(cfg: ExperimentConfig, seed: int) -> SeedModels:
    model = build_reservoir(cfg.esn, SeededRng(seed, STREAM_RESERVOIR))
    r = cfg.readout
    readout = init_readout(cfg.esn.state_dim, cfg.make_plant().output_dim, r.init_range, r.p_scale,
                           r.gamma, SeededRng(seed, STREAM_READOUT))
    return SeedModels(model, readout)


Controller = Callable[[EsnModel, np.ndarray, ReadoutState, np.ndarray, QuadraticCost], np.ndarray]


def make_controller(cfg: ExperimentConfig, seed: int) -> tuple[Controller, np.ndarray]:
    """Controller closure for ``cfg.controller`` and the initial plan (``u_ref`` over the horizon)."""
    if cfg.controller == "qpmpc":
        qcfg = cfg.qpmpc

        def control(model, x, readout, plan, costs):
            return qpmpc_control(model, x, readout, plan, qcfg, costs)[0]

        return control, qcfg.initial_plan()
    mcfg = cfg.sampling_config()
    noise_rng = SeededRng(seed, STREAM_INPUT_NOISE)
    weight_rng = SeededRng(seed, STREAM_WEIGHT_NOISE) if mcfg.perturb_weights else None

    def control(model, x, readout, plan, costs):
        return compute_control(model, x, readout, plan, mcfg, costs, noise_rng, weight_rng)[0]

    return control, mcfg.initial_plan()


def run_closed_loop(cfg: ExperimentConfig, seed: int, controller: Controller | None = None,
                    initial_plan=None, models: SeedModels | None = None) -> RunLog:
    """Run ``cfg.T`` steps of observe, update the readout, plan, apply.

    The first input of each plan drives both the reservoir and the plant.  A
    custom ``controller`` (same signature as the built-in closures) replaces
    the configured one.  If the controller raises or the plant state stops
    being finite, the run stops and the partial log carries ``status='failed'``.
    """
    models = models or build_models(cfg, seed)
    model, readout = models.model, models.readout
    if controller is None:
        controller, plan = make_controller(cfg, seed)
    else:
        plan = cfg.mppi.initial_plan()
    if initial_plan is not None:
        plan = np.asarray(initial_plan, dtype=float)
    plant = cfg.make_plant()
    m, ell = plant.input_dim, plant.output_dim
    T = cfg.T
    log = RunLog(np.arange(T, dtype=np.int64), np.zeros((T, m)), np.zeros((T, ell)),
                 np.zeros((T, ell)), np.zeros(T), np.zeros(T), config_hash(cfg))
    z = plant.z0.copy()
    x = model.initial_state()
    for t in range(T):
        y = plant.output(z)
        r = reference_at(cfg.schedule, t * plant.dt)
        costs = QuadraticCost.tracking(cfg.Q, r, cfg.Q_terminal)
        try:
            readout = rls_update(readout, x, y)
            t0 = time.perf_counter()
            plan = controller(model, x, readout, plan, costs)
            elapsed = time.perf_counter() - t0
            u = np.asarray(plan, dtype=float)[:, 0]
            if not np.all(np.isfinite(u)):
                raise FloatingPointError(f"non-finite input {u} at step {t}")
        except Exception as exc:  # noqa: BLE001 - any controller failure ends this run only
            return _truncate(log, t, "failed", f"{type(exc).__name__}: {exc}")
        log.u[t], log.y[t], log.y_ref[t] = u, y, r
        log.stage_cost[t] = stage_cost(y, r, u, cfg.Q, cfg.R, cfg.u_ref)
        log.ctrl_time[t] = elapsed if cfg.record_timing else 0.0
        x = esn_step(model, x, u)
        z = plant.step(z, u)
        if not np.all(np.isfinite(z)):
            return _truncate(log, t + 1, "failed", f"plant state diverged after step {t}")
    return log


def _truncate(log: RunLog, n: int, status: str, error: str) -> RunLog:
    return RunLog(log.t[:n], log.u[:n], log.y[:n], log.y_ref[:n], log.stage_cost[:n],
                  log.ctrl_time[:n], log.config_hash, status, error)


@dataclass
class EnsembleSummary:
    """Per-seed results; failed seeds keep ``nan`` cost and are excluded from the statistics."""

    seeds: tuple
    costs: np.ndarray
    mean_ctrl_time: np.ndarray
    logs: dict = field(default_factory=dict, repr=False)
    failures: dict = field(default_factory=dict)

    @property
    def ok_mask(self) -> np.ndarray:
        return np.isfinite(self.costs)

    @property
    def mean(self) -> float:
        c = self.costs[self.ok_mask]
        return float(c.mean()) if c.size else float("nan")

    @property
    def std(self) -> float:
        c = self.costs[self.ok_mask]
        return float(c.std(ddof=1)) if c.size > 1 else 0.0

    @property
    def ctrl_time(self) -> float:
        c = self.mean_ctrl_time[self.ok_mask]
        return float(c.mean()) if c.size else float("nan")

    def to_csv(self, extra: dict | None = None) -> str:
        """``seed,integrated_cost,mean_ctrl_time_s`` plus any per-seed ``extra`` columns."""
        extra = extra or {}
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["seed", "integrated_cost", "mean_ctrl_time_s"] + list(extra))
        for i, s in enumerate(self.seeds):
            w.writerow([s, _fmt(self.costs[i]), _fmt(self.mean_ctrl_time[i])]
                       + [_fmt(col[i]) for col in extra.values()])
        return buf.getvalue()


def worker_count(n_tasks: int) -> int:
    cap = os.environ.get("RPPI_THREADS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(limit, n_tasks))


def _run_one(args) -> RunLog:
    cfg, seed = args
    return run_closed_loop(cfg, seed)


def run_ensemble(cfg: ExperimentConfig, seeds: Sequence[int] | None = None,
                 workers: int | None = None) -> EnsembleSummary:
    seeds = tuple(cfg.seeds if seeds is None else seeds)
    if not seeds:
        raise ValueError("run_ensemble needs at least one seed")
    workers = worker_count(len(seeds)) if workers is None else workers
    tasks = [(cfg, s) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            logs = list(ex.map(_run_one, tasks))
    else:
        logs = [_run_one(t) for t in tasks]
    costs = np.full(len(seeds), np.nan)
    times = np.full(len(seeds), np.nan)
    failures = {}
    for i, (s, log) in enumerate(zip(seeds, logs)):
        if log.ok:
            costs[i] = integrated_cost(log, cfg.Q, cfg.R, cfg.u_ref)
            times[i] = float(log.ctrl_time.mean()) if len(log) else 0.0
        else:
            failures[s] = log.error
    return EnsembleSummary(seeds, costs, times, dict(zip(seeds, logs)), failures)


# ---------------------------------------------------------------- random search

@dataclass(frozen=True)
class SearchDim:
    """One search dimension: uniform on ``[low, high]``, optionally in log space or rounded."""

    low: float
    high: float
    log: bool = False
    integer: bool = False

    def sample(self, rng: SeededRng):
        if self.log:
            v = math.exp(rng.uniform(math.log(self.low), math.log(self.high)))
        else:
            v = rng.uniform(self.low, self.high)
        v = float(v)
        return int(round(v)) if self.integer else v


@dataclass
class SearchResult:
    best: dict
    score: float
    history: list


def tune_hyperparameters(search_space: dict, budget: int, objective: Callable[[dict], float],
                         rng: SeededRng) -> SearchResult:
    """Random search: ``budget`` uniform draws, the first minimum wins ties.

    Non-finite objective values are recorded but never selected unless every
    draw is non-finite.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    history = []
    best, best_score = None, math.inf
    for _ in range(budget):
        params = {name: dim.sample(rng) for name, dim in search_space.items()}
        score = float(objective(params))
        history.append((params, score))
        if best is None:
            best, best_score = params, score
        elif np.isfinite(score) and not score >= best_score:
            # "not >=" also replaces a non-finite incumbent
            best, best_score = params, score
    return SearchResult(best, best_score, history)


def identification_nrmse(esn: EsnParams, plant: Plant, seed: int, T: int = 500, u_low=-1.0,
                         u_high=1.0, hold: int = 5, washout: int = 100,
                         readout: ReadoutInit = ReadoutInit()) -> float:
    """One-step prediction NRMSE of an RLS-trained readout under random piecewise-constant inputs.

    The prediction for ``y_t`` uses the readout before it sees ``y_t``, so this
    is an online (a priori) error.  Returns ``inf`` if the plant diverges.
    """
    rng = SeededRng(seed, STREAM_TUNING)
    model = build_reservoir(esn, rng.substream(0))
    ro = init_readout(esn.state_dim, plant.output_dim, readout.init_range, readout.p_scale,
                      readout.gamma, rng.substream(1))
    n_hold = -(-T // hold)
    levels = rng.uniform(np.broadcast_to(u_low, (plant.input_dim,)),
                         np.broadcast_to(u_high, (plant.input_dim,)),
                         size=(n_hold, plant.input_dim))
    inputs = np.repeat(levels, hold, axis=0)[:T]
    z, x = plant.z0.copy(), model.initial_state()
    errs, ys = [], []
    for t in range(T):
        y = plant.output(z)
        if not np.all(np.isfinite(y)):
            return math.inf
        if t >= washout:
            errs.append(ro.w_out.T @ x - y)
            ys.append(y)
        ro = rls_update(ro, x, y)
        x = esn_step(model, x, inputs[t])
        with np.errstate(over="ignore", invalid="ignore"):
            z = plant.step(z, inputs[t])
    if not errs:
        raise ValueError("T must exceed the washout")
    errs, ys = np.array(errs), np.array(ys)
    scale = ys.std(axis=0)
    scale[scale == 0] = 1.0
    return float(np.sqrt(np.mean((errs / scale) ** 2)))


def esn_params_with(base: EsnParams, values: dict) -> EsnParams:
    names = {f.name for f in fields(EsnParams)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown ESN parameters: {sorted(unknown)}")
    return replace(base, **values)
