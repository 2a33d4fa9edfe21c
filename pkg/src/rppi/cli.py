"""Command-line entry point and the experiment config format.

Configs are INI files with the sections ``plant``, ``tuning_plant`` (optional),
``esn``, ``rls``, ``controller``, ``schedule`` and ``run``.  Values are written
as plain numbers, comma-separated vectors (``10, 10``) or matrices with rows
separated by semicolons (``1, 0; 0, 1``).  A scalar given for a matrix key
means that multiple of the identity.  Unknown sections or keys are rejected.

Exit codes: 0 success, 1 config error, 2 runtime failure, 3 self-test failure.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import sys
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import analysis, runner
from .esn import EsnParams
from .mppi import ConfigError, MppiConfig
from .plants import DuffingParams, FourTankParams
from .qpmpc import QpmpcConfig
from .runner import ExperimentConfig, ReadoutInit, Schedule

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_SELFTEST = 0, 1, 2, 3

PLANT_KEYS = {
    "duffing": {"m": "float", "k": "float", "k_nl": "float", "c": "float", "dt": "float"},
    "fourtank": {"A": "vec", "a": "vec", "b": "vec", "g": "float", "dt": "float"},
}

# key -> (type, default); a default of REQUIRED means the key must be present
REQUIRED = object()
SCHEMA = {
    "esn": {
        "state_dim": ("int", REQUIRED), "leak_rate": ("float", REQUIRED),
        "density": ("float", REQUIRED), "spectral_radius": ("float", REQUIRED),
        "input_range": ("float", REQUIRED), "activation": ("str", "tanh"),
        "input_center": ("vec", None), "input_scale": ("vec", None),
    },
    "rls": {"init_range": ("float", REQUIRED), "p_scale": ("float", REQUIRED),
            "gamma": ("float", REQUIRED)},
    "controller": {
        "kind": ("str", REQUIRED), "K": ("int", REQUIRED), "H": ("int", REQUIRED),
        "lam": ("float", REQUIRED), "R": ("mat_m", REQUIRED), "u_ref": ("vec", REQUIRED),
        "Q": ("mat_l", REQUIRED), "Q_terminal": ("mat_l", None),
        "K_tilde": ("int", 1), "sigma_tilde": ("vec_l", None),
        "u_min": ("vec", None), "u_max": ("vec", None),
        "warm_start": ("str", "reuse"), "baseline_subtraction": ("bool", True),
        "rollout_dtype": ("str", "float64"), "qp_tol": ("float", 1e-8),
        "qp_max_iters": ("int", 20000),
    },
    "schedule": {"levels": ("levels", REQUIRED), "period_s": ("float", REQUIRED)},
    "run": {"T": ("int", REQUIRED), "seeds": ("seeds", REQUIRED), "out_dir": ("str", "out"),
            "record_timing": ("bool", True)},
}
SECTIONS = ("plant", "tuning_plant", "esn", "rls", "controller", "schedule", "run")
PRESETS = tuple(f"{p}_{c}" for p in ("duffing", "fourtank") for c in ("qpmpc", "mppi", "umppi"))


# ---------------------------------------------------------------- value parsing

def _parse_float(text: str, where: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"{where}: expected a number, got {text!r}") from None


def _parse_value(kind: str, text: str, where: str, m: int = 1, ell: int = 1):
    text = text.strip()
    if kind == "int":
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"{where}: expected an integer, got {text!r}") from None
    if kind == "float":
        return _parse_float(text, where)
    if kind == "str":
        return text
    if kind == "bool":
        low = text.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ConfigError(f"{where}: expected true or false, got {text!r}")
    if kind in ("vec", "vec_l"):
        if ";" in text:
            raise ConfigError(f"{where}: expected a vector, got a matrix {text!r}")
        vals = [_parse_float(v, where) for v in text.split(",")]
        if kind == "vec_l" and len(vals) == 1 and ell > 1:
            vals = vals * ell
        return np.array(vals)
    if kind in ("mat_m", "mat_l"):
        n = m if kind == "mat_m" else ell
        rows = [[_parse_float(v, where) for v in row.split(",")] for row in text.split(";")]
        if len(rows) == 1 and len(rows[0]) == 1:
            return rows[0][0] * np.eye(n)
        if len({len(r) for r in rows}) != 1:
            raise ConfigError(f"{where}: matrix rows have different lengths")
        mat = np.array(rows)
        if mat.shape != (n, n):
            raise ConfigError(f"{where}: expected a {n}x{n} matrix, got shape {mat.shape}")
        return mat
    if kind == "levels":
        return tuple(tuple(_parse_float(v, where) for v in lv.split(",")) for lv in text.split(";"))
    if kind == "seeds":
        return parse_seeds(text, where)
    raise AssertionError(kind)


def parse_seeds(text: str, where: str = "--seeds") -> tuple:
    text = text.strip()
    try:
        if ".." in text:
            a, b = text.split("..")
            lo, hi = int(a), int(b)
            if hi < lo:
                raise ConfigError(f"{where}: empty seed range {text!r}")
            return tuple(range(lo, hi + 1))
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"{where}: expected 'a..b' or a comma list of integers, got {text!r}") from None


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))  # shortest text that parses back to the same double
    if isinstance(v, str):
        return v
    a = np.asarray(v, dtype=float)
    if a.ndim == 1:
        return ", ".join(_fmt(x) for x in a)
    return "; ".join(", ".join(_fmt(x) for x in row) for row in a)


def _fmt_seeds(seeds) -> str:
    seeds = list(seeds)
    if len(seeds) > 1 and seeds == list(range(seeds[0], seeds[-1] + 1)):
        return f"{seeds[0]}..{seeds[-1]}"
    return ", ".join(str(s) for s in seeds)


# ---------------------------------------------------------------- config

def _read_ini(text: str, source: str) -> dict:
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                   inline_comment_prefixes=("#",))
    cp.optionxform = str  # keys are case sensitive (A vs a)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return {sec: dict(cp[sec]) for sec in cp.sections()}


def apply_overrides(raw: dict, overrides) -> dict:
    raw = {k: dict(v) for k, v in raw.items()}
    for item in overrides or ():
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot or not name:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        if section not in SECTIONS:
            raise ConfigError(f"override {key.strip()!r}: unknown section {section!r}")
        raw.setdefault(section, {})[name] = value.strip()
    return raw


def resolve_config_path(path) -> Path | None:
    p = Path(path)
    if p.exists():
        return p
    name = p.stem if p.suffix == ".ini" else str(path)
    if name in PRESETS:
        return None
    raise ConfigError(f"config file {path} not found (presets: {', '.join(PRESETS)})")


def read_config_text(path) -> tuple[str, str]:
    p = resolve_config_path(path)
    if p is None:
        name = Path(path).stem if str(path).endswith(".ini") else str(path)
        return resources.files("rppi.presets").joinpath(f"{name}.ini").read_text(), name
    return p.read_text(), str(p)


def parse_config(path, overrides=()) -> ExperimentConfig:
    """Load a config file (or a shipped preset by name) and apply ``section.key=value`` overrides."""
    text, source = read_config_text(path)
    return parse_config_text(text, overrides, source)


def parse_config_text(text: str, overrides=(), source: str = "<config>") -> ExperimentConfig:
    raw = apply_overrides(_read_ini(text, source), overrides)
    for sec in raw:
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")
    plant_raw = dict(raw.get("plant", {}))
    kind = plant_raw.pop("kind", None)
    if kind is None:
        raise ConfigError("plant.kind: missing required key")
    if kind not in PLANT_KEYS:
        raise ConfigError(f"plant.kind: expected one of {sorted(PLANT_KEYS)}, got {kind!r}")
    z0_text = plant_raw.pop("z0", None)
    if z0_text is None:
        raise ConfigError("plant.z0: missing required key")
    z0 = _parse_value("vec", z0_text, "plant.z0")
    plant = _plant_params(kind, plant_raw, "plant", required=True)
    tuning = _plant_params(kind, raw["tuning_plant"], "tuning_plant", required=False) \
        if "tuning_plant" in raw else None
    m, ell = (1, 1) if kind == "duffing" else (2, 2)

    vals = {}
    for sec, keys in SCHEMA.items():
        given = raw.get(sec, {})
        for key in given:
            if key not in keys:
                raise ConfigError(f"{sec}.{key}: unknown key")
        for key, (typ, default) in keys.items():
            where = f"{sec}.{key}"
            if key in given:
                vals[where] = _parse_value(typ, given[key], where, m, ell)
            elif default is REQUIRED:
                raise ConfigError(f"{where}: missing required key")
            else:
                vals[where] = default

    def v(key):
        return vals[key]

    try:
        esn = EsnParams(state_dim=v("esn.state_dim"), input_dim=m, leak_rate=v("esn.leak_rate"),
                        density=v("esn.density"), spectral_radius=v("esn.spectral_radius"),
                        input_range=v("esn.input_range"), activation=v("esn.activation"),
                        input_center=() if v("esn.input_center") is None else tuple(v("esn.input_center")),
                        input_scale=() if v("esn.input_scale") is None else tuple(v("esn.input_scale")))
    except ValueError as exc:
        raise ConfigError(f"esn: {exc}") from exc
    readout = ReadoutInit(v("rls.init_range"), v("rls.p_scale"), v("rls.gamma"))
    if not 0 < readout.gamma <= 1 or readout.p_scale <= 0 or readout.init_range < 0:
        raise ConfigError("rls: need 0 < gamma <= 1, p_scale > 0 and init_range >= 0")
    sigma_tilde = v("controller.sigma_tilde")
    sigma_tilde = np.zeros(ell) if sigma_tilde is None else sigma_tilde
    common = dict(R=v("controller.R"), u_ref=v("controller.u_ref"), u_min=v("controller.u_min"),
                  u_max=v("controller.u_max"), warm_start=v("controller.warm_start"))
    for key in ("u_ref", "u_min", "u_max"):
        val = common[key]
        if val is not None and np.asarray(val).shape != (m,):
            raise ConfigError(f"controller.{key}: expected {m} entries")
    try:
        mcfg = MppiConfig(K=v("controller.K"), H=v("controller.H"), lam=v("controller.lam"),
                          K_tilde=v("controller.K_tilde"), sigma_tilde=sigma_tilde,
                          baseline_subtraction=v("controller.baseline_subtraction"),
                          rollout_dtype=v("controller.rollout_dtype"), **common)
        qcfg = QpmpcConfig(H=v("controller.H"), tol=v("controller.qp_tol"),
                           max_iters=v("controller.qp_max_iters"), **common)
    except ConfigError as exc:
        raise ConfigError(f"controller: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"controller: {exc}") from exc
    Q = v("controller.Q")
    Qt = Q if v("controller.Q_terminal") is None else v("controller.Q_terminal")
    try:
        schedule = Schedule(v("schedule.levels"), v("schedule.period_s"))
    except ConfigError as exc:
        raise ConfigError(f"schedule: {exc}") from exc
    return ExperimentConfig(plant=plant, z0=tuple(z0), esn=esn, readout=readout,
                            controller=v("controller.kind"), mppi=mcfg, qpmpc=qcfg, Q=Q,
                            Q_terminal=Qt, schedule=schedule, T=v("run.T"), seeds=v("run.seeds"),
                            tuning_plant=tuning, out_dir=v("run.out_dir"),
                            record_timing=v("run.record_timing"))


def _plant_params(kind: str, given: dict, section: str, required: bool):
    keys = PLANT_KEYS[kind]
    for key in given:
        if key not in keys:
            raise ConfigError(f"{section}.{key}: unknown key for a {kind} plant")
    kwargs = {}
    for key, typ in keys.items():
        if key in given:
            val = _parse_value(typ, given[key], f"{section}.{key}")
            kwargs[key] = tuple(val) if typ == "vec" else val
        elif required:
            raise ConfigError(f"{section}.{key}: missing required key")
    try:
        return DuffingParams(**kwargs) if kind == "duffing" else FourTankParams(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def emit_config(cfg: ExperimentConfig) -> str:
    """Canonical text form; ``parse_config_text(emit_config(c)) == c``."""
    kind = "duffing" if isinstance(cfg.plant, DuffingParams) else "fourtank"
    out = ["[plant]", f"kind = {kind}", f"z0 = {_fmt(np.array(cfg.z0))}"]
    out += _plant_lines(cfg.plant, kind)
    if cfg.tuning_plant is not None:
        out += ["", "[tuning_plant]"] + _plant_lines(cfg.tuning_plant, kind)
    e = cfg.esn
    out += ["", "[esn]", f"state_dim = {e.state_dim}", f"leak_rate = {_fmt(e.leak_rate)}",
            f"density = {_fmt(e.density)}", f"spectral_radius = {_fmt(e.spectral_radius)}",
            f"input_range = {_fmt(e.input_range)}", f"activation = {e.activation}",
            f"input_center = {_fmt(np.array(e.input_center))}",
            f"input_scale = {_fmt(np.array(e.input_scale))}"]
    r = cfg.readout
    out += ["", "[rls]", f"init_range = {_fmt(r.init_range)}", f"p_scale = {_fmt(r.p_scale)}",
            f"gamma = {_fmt(r.gamma)}"]
    mc, qc = cfg.mppi, cfg.qpmpc
    out += ["", "[controller]", f"kind = {cfg.controller}", f"K = {mc.K}", f"H = {mc.H}",
            f"lam = {_fmt(mc.lam)}", f"R = {_fmt(mc.R)}", f"u_ref = {_fmt(mc.u_ref)}",
            f"Q = {_fmt(cfg.Q)}", f"Q_terminal = {_fmt(cfg.Q_terminal)}",
            f"K_tilde = {mc.K_tilde}", f"sigma_tilde = {_fmt(mc.sigma_tilde)}"]
    if mc.u_min is not None:
        out.append(f"u_min = {_fmt(mc.u_min)}")
    if mc.u_max is not None:
        out.append(f"u_max = {_fmt(mc.u_max)}")
    out += [f"warm_start = {mc.warm_start}",
            f"baseline_subtraction = {_fmt(mc.baseline_subtraction)}",
            f"rollout_dtype = {mc.rollout_dtype}", f"qp_tol = {_fmt(qc.tol)}",
            f"qp_max_iters = {qc.max_iters}"]
    levels = "; ".join(_fmt(np.array(lv)) for lv in cfg.schedule.levels)
    out += ["", "[schedule]", f"levels = {levels}", f"period_s = {_fmt(cfg.schedule.period_s)}"]
    out += ["", "[run]", f"T = {cfg.T}", f"seeds = {_fmt_seeds(cfg.seeds)}",
            f"out_dir = {cfg.out_dir}", f"record_timing = {_fmt(cfg.record_timing)}"]
    return "\n".join(out) + "\n"


def _plant_lines(params, kind: str) -> list[str]:
    return [f"{key} = {_fmt(np.array(getattr(params, key)) if typ == 'vec' else getattr(params, key))}"
            for key, typ in PLANT_KEYS[kind].items()]


# ---------------------------------------------------------------- compare

@dataclass
class ComparisonRow:
    controller: str
    summary: runner.EnsembleSummary


def compare(configs, seeds=None) -> list[ComparisonRow]:
    configs = list(configs)
    if len(configs) < 2:
        raise ConfigError("compare needs at least two configs")
    base = configs[0]
    for c in configs[1:]:
        if not (runner.deep_equal(c.plant, base.plant) and runner.deep_equal(c.schedule, base.schedule)
                and c.z0 == base.z0 and c.T == base.T):
            raise ConfigError("compare: configs must share plant, initial state, schedule and T")
    return [ComparisonRow(c.controller, runner.run_ensemble(c, seeds)) for c in configs]


def comparison_csv(rows: list[ComparisonRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["controller", "mean_cost", "std_cost", "mean_ctrl_time_s", "reduction_vs_first_pct"])
    first = rows[0].summary.mean
    for row in rows:
        s = row.summary
        red = 100.0 * (first - s.mean) / first
        w.writerow([row.controller, _fmt(s.mean), _fmt(s.std), _fmt(s.ctrl_time), _fmt(red)])
    return buf.getvalue()


# ---------------------------------------------------------------- svg

def _polyline(xs, ys, x0, x1, y0, y1, box, color, dash=""):
    left, top, width, height = box
    sx = width / (x1 - x0) if x1 > x0 else 0.0
    sy = height / (y1 - y0) if y1 > y0 else 0.0
    pts = " ".join(f"{left + (x - x0) * sx:.2f},{top + height - (y - y0) * sy:.2f}"
                   for x, y in zip(xs, ys))
    extra = f' stroke-dasharray="{dash}"' if dash else ""
    return f'<polyline fill="none" stroke="{color}" stroke-width="1.2"{extra} points="{pts}"/>'


def _axes(box, x0, x1, y0, y1, xlabel, ylabel):
    left, top, width, height = box
    return [f'<rect x="{left}" y="{top}" width="{width}" height="{height}" fill="none" stroke="black"/>',
            f'<text x="{left + width / 2}" y="{top + height + 28}" text-anchor="middle" font-size="11">{xlabel}</text>',
            f'<text x="12" y="{top + height / 2}" font-size="11" transform="rotate(-90 12 {top + height / 2})" text-anchor="middle">{ylabel}</text>',
            f'<text x="{left}" y="{top + height + 14}" font-size="9">{x0:.4g}</text>',
            f'<text x="{left + width}" y="{top + height + 14}" font-size="9" text-anchor="end">{x1:.4g}</text>',
            f'<text x="{left - 4}" y="{top + height}" font-size="9" text-anchor="end">{y0:.4g}</text>',
            f'<text x="{left - 4}" y="{top + 9}" font-size="9" text-anchor="end">{y1:.4g}</text>']


def _svg(width, height, body) -> str:
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">\n' + "\n".join(body) + "\n</svg>\n")


def _limits(*arrays):
    vals = np.concatenate([np.ravel(a) for a in arrays]) if arrays else np.zeros(0)
    vals = vals[np.isfinite(vals)]
    if vals.size == 0:
        return 0.0, 1.0
    lo, hi = float(vals.min()), float(vals.max())
    if hi == lo:
        lo, hi = lo - 1.0, hi + 1.0
    return lo, hi


def emit_svg(obj, kind: str, dt: float = 1.0) -> str:
    """Static SVG: ``time`` (run log outputs with reference, then inputs), ``costs`` (per
    controller cost distribution; ``obj`` maps label to costs) or ``scalogram`` (heatmap)."""
    if kind == "time":
        log = obj
        t = log.t * dt
        body = []
        panels = [("output", [log.y, log.y_ref]), ("input", [log.u])]
        x0, x1 = (float(t[0]), float(t[-1])) if len(t) > 1 else (0.0, 1.0)
        for i, (label, series) in enumerate(panels):
            box = (60, 20 + i * 170, 520, 130)
            y0, y1 = _limits(*series)
            body += _axes(box, x0, x1, y0, y1, "time [s]", label)
            colors = ["#1f77b4", "#d62728", "#2ca02c"]
            for j, arr in enumerate(series):
                for ch in range(arr.shape[1]):
                    dash = "4,3" if label == "output" and j == 1 else ""
                    body.append(_polyline(t, arr[:, ch], x0, x1, y0, y1, box,
                                          colors[(ch + 2 * j) % 3], dash))
        return _svg(600, 380, body)
    if kind == "costs":
        groups = {k: np.asarray(v, dtype=float) for k, v in obj.items()}
        y0, y1 = _limits(*groups.values())
        box = (60, 20, 520, 300)
        body = _axes(box, 0, len(groups), y0, y1, "controller", "integrated cost")
        left, top, width, height = box
        slot = width / max(len(groups), 1)
        sy = height / (y1 - y0)
        for i, (label, vals) in enumerate(groups.items()):
            cx = left + (i + 0.5) * slot
            vals = vals[np.isfinite(vals)]
            for j, v in enumerate(np.sort(vals)):
                jitter = ((j * 7) % 11 - 5) * slot / 40
                body.append(f'<circle cx="{cx + jitter:.2f}" cy="{top + height - (v - y0) * sy:.2f}" r="2.5" fill="#1f77b4" fill-opacity="0.6"/>')
            if vals.size:
                my = top + height - (vals.mean() - y0) * sy
                body.append(f'<path d="M {cx - 8:.2f} {my:.2f} L {cx:.2f} {my - 8:.2f} L {cx + 8:.2f} {my:.2f} L {cx:.2f} {my + 8:.2f} Z" fill="#d62728"/>')
                body.append(f'<text x="{cx + 12:.2f}" y="{my + 4:.2f}" font-size="10">{vals.mean():.4g}</text>')
            body.append(f'<text x="{cx:.2f}" y="{top + height + 14}" font-size="11" text-anchor="middle">{label}</text>')
        return _svg(600, 360, body)
    if kind == "scalogram":
        s = obj
        box = (60, 20, 520, 260)
        left, top, width, height = box
        body = _axes(box, float(s.times[0]), float(s.times[-1]), float(s.frequencies[0]),
                     float(s.frequencies[-1]), "time [s]", "frequency [Hz] (log)")
        mags = s.magnitudes
        vmax = float(mags.max()) if mags.size and mags.max() > 0 else 1.0
        nf, nt = mags.shape
        cw, ch = width / max(nt, 1), height / max(nf, 1)
        for i in range(nf):
            for j in range(nt):
                level = int(255 * (1.0 - mags[i, j] / vmax))
                body.append(f'<rect x="{left + j * cw:.2f}" y="{top + height - (i + 1) * ch:.2f}" '
                            f'width="{cw + 0.05:.2f}" height="{ch + 0.05:.2f}" fill="rgb(255,{level},{level})"/>')
        return _svg(600, 320, body)
    raise ValueError(f"unknown svg kind {kind!r}")


# ---------------------------------------------------------------- commands

def _load(args) -> ExperimentConfig:
    cfg = parse_config(args.config, args.set)
    if args.seeds:
        cfg = replace(cfg, seeds=parse_seeds(args.seeds))
    return cfg


def _outdir(args, cfg) -> Path:
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_run(args) -> int:
    cfg = _load(args)
    out = _outdir(args, cfg)
    status = EXIT_OK
    for seed in cfg.seeds:
        log = runner.run_closed_loop(cfg, seed)
        log.write_csv(out / f"run_seed{seed}.csv")
        if args.svg:
            (out / f"run_seed{seed}.svg").write_text(emit_svg(log, "time", cfg.plant.dt))
        cost = runner.integrated_cost(log, cfg.Q, cfg.R, cfg.u_ref)
        print(f"seed {seed}: status={log.status} steps={len(log)} integrated_cost={cost:.6g}")
        if not log.ok:
            print(f"  error: {log.error}", file=sys.stderr)
            status = EXIT_RUNTIME
    return status


def _early_window(cfg) -> float:
    # early exploration window used for the spectral spread column
    return 3.0 if isinstance(cfg.plant, DuffingParams) else 60.0


def _spread_column(summary, cfg) -> np.ndarray:
    spread = np.full(len(summary.seeds), np.nan)
    for i, s in enumerate(summary.seeds):
        log = summary.logs[s]
        if log.ok and len(log) >= 8:
            sc = analysis.input_scalograms([log], cfg.plant.dt)[0]
            spread[i] = analysis.spectral_spread(sc, (0.0, _early_window(cfg)))
    return spread


def cmd_ensemble(args) -> int:
    cfg = _load(args)
    out = _outdir(args, cfg)
    summary = runner.run_ensemble(cfg)
    for s, log in summary.logs.items():
        log.write_csv(out / f"run_seed{s}.csv")
    (out / "summary.csv").write_text(summary.to_csv({"spectral_spread": _spread_column(summary, cfg)}))
    if args.svg:
        (out / "summary.svg").write_text(emit_svg({cfg.controller: summary.costs}, "costs"))
    print(f"{cfg.controller}: mean={summary.mean:.6g} std={summary.std:.6g} "
          f"ctrl_time={summary.ctrl_time:.4g}s failures={len(summary.failures)}")
    for s, err in summary.failures.items():
        print(f"  seed {s} failed: {err}", file=sys.stderr)
    return EXIT_OK if not summary.failures else EXIT_RUNTIME


def cmd_compare(args) -> int:
    configs = [parse_config(c, args.set) for c in args.config]
    seeds = parse_seeds(args.seeds) if args.seeds else None
    rows = compare(configs, seeds)
    out = Path(args.out or configs[0].out_dir)
    out.mkdir(parents=True, exist_ok=True)
    text = comparison_csv(rows)
    (out / "compare.csv").write_text(text)
    if args.svg:
        (out / "compare.svg").write_text(emit_svg({r.controller: r.summary.costs for r in rows}, "costs"))
    print(text, end="")
    return EXIT_OK if all(not r.summary.failures for r in rows) else EXIT_RUNTIME


ESN_SPACE = {
    "leak_rate": runner.SearchDim(0.05, 1.0),
    "density": runner.SearchDim(0.01, 0.6),
    "spectral_radius": runner.SearchDim(0.1, 0.99),
    "input_range": runner.SearchDim(0.1, 3.0),
}
CONTROLLER_SPACE = {
    "lam": runner.SearchDim(0.1, 10.0, log=True),
    "sigma_tilde": runner.SearchDim(0.01, 10.0, log=True),
}


def esn_objective(cfg: ExperimentConfig, T: int = 500, seed: int = 0):
    plant = cfg.make_plant(tuning=True)
    u_low = cfg.mppi.u_min if cfg.mppi.u_min is not None else -1.0
    u_high = cfg.mppi.u_max if cfg.mppi.u_max is not None else 1.0

    def objective(values):
        esn = runner.esn_params_with(cfg.esn, values)
        return runner.identification_nrmse(esn, plant, seed, T, u_low, u_high, readout=cfg.readout)

    return objective


def controller_objective(cfg: ExperimentConfig, seeds=(0,)):
    tuned = replace(cfg, plant=cfg.tuning_plant or cfg.plant, record_timing=False)

    def objective(values):
        mc = replace(tuned.mppi, lam=values["lam"],
                     sigma_tilde=np.full(tuned.mppi.sigma_tilde.shape, values["sigma_tilde"]))
        summary = runner.run_ensemble(replace(tuned, mppi=mc), seeds)
        return summary.mean if not summary.failures else float("inf")

    return objective


def cmd_tune(args) -> int:
    cfg = _load(args)
    out = _outdir(args, cfg)
    rng = runner.SeededRng(cfg.seeds[0], runner.STREAM_TUNING)
    if args.phase == "esn":
        space, objective = ESN_SPACE, esn_objective(cfg, seed=cfg.seeds[0])
    else:
        space, objective = CONTROLLER_SPACE, controller_objective(cfg, cfg.seeds)
    result = runner.tune_hyperparameters(space, args.budget, objective, rng)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(space) + ["score"])
    for params, score in result.history:
        w.writerow([_fmt(params[k]) for k in space] + [_fmt(score)])
    (out / f"tune_{args.phase}.csv").write_text(buf.getvalue())
    if args.phase == "esn":
        best = replace(cfg, esn=runner.esn_params_with(cfg.esn, result.best))
    else:
        mc = replace(cfg.mppi, lam=result.best["lam"],
                     sigma_tilde=np.full(cfg.mppi.sigma_tilde.shape, result.best["sigma_tilde"]))
        best = replace(cfg, mppi=mc)
    (out / f"tuned_{args.phase}.ini").write_text(emit_config(best))
    print(f"best score {result.score:.6g} with {result.best}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    logs = []
    for path in args.logs:
        try:
            logs.append(runner.RunLog.from_csv(Path(path).read_text()))
        except (OSError, ValueError, IndexError) as exc:
            raise ConfigError(f"cannot read run log {path}: {exc}") from exc
    if not logs:
        raise ConfigError("analyze needs at least one run log")
    n = min(len(log) for log in logs)
    logs = [runner._truncate(log, n, log.status, log.error) for log in logs]
    scalos = analysis.input_scalograms(logs, args.dt, args.channel)
    avg = analysis.average_scalograms(scalos)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    (out / "scalogram.csv").write_text(avg.to_csv())
    if args.svg:
        (out / "scalogram.svg").write_text(emit_svg(avg, "scalogram"))
    window = (0.0, args.window) if args.window else None
    print(f"spectral_spread={analysis.spectral_spread(avg, window):.6g}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_selftest
    failures = run_selftest(verbose=True)
    return EXIT_OK if not failures else EXIT_SELFTEST


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rppi", description="Online ESN identification with MPPI control")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, multi_config=False):
        if multi_config:
            sp.add_argument("--config", action="append", required=True,
                            help="config file or preset name (repeat for each controller)")
        else:
            sp.add_argument("--config", required=True, help="config file or preset name")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. controller.K=16")
        sp.add_argument("--seeds", help="seed range a..b or comma list")
        sp.add_argument("--out", help="output directory (default: run.out_dir)")
        sp.add_argument("--svg", action="store_true", help="also write SVG plots")

    common(sub.add_parser("run", help="closed loop for each seed"))
    common(sub.add_parser("ensemble", help="multi-seed ensemble with summary CSV"))
    common(sub.add_parser("compare", help="ensembles for several controllers"), multi_config=True)
    tune = sub.add_parser("tune", help="random hyperparameter search")
    common(tune)
    tune.add_argument("--phase", choices=("esn", "controller"), default="esn")
    tune.add_argument("--budget", type=int, default=20)
    an = sub.add_parser("analyze", help="averaged input scalogram of run logs")
    an.add_argument("logs", nargs="+", help="run log CSV files")
    an.add_argument("--dt", type=float, required=True, help="control period in seconds")
    an.add_argument("--channel", type=int, default=0)
    an.add_argument("--window", type=float, help="spread window length in seconds from t=0")
    an.add_argument("--out")
    an.add_argument("--svg", action="store_true")
    sub.add_parser("selftest", help="run the built-in invariant checks")
    return p


COMMANDS = {"run": cmd_run, "ensemble": cmd_ensemble, "compare": cmd_compare, "tune": cmd_tune,
            "analyze": cmd_analyze, "selftest": cmd_selftest}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - mapped to the runtime-failure exit code
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
