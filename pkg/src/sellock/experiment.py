"""Config-driven experiment runs and parameter sweeps.

A config is one JSON document with blocks ``env``, ``agent``, ``train``,
``critique`` and ``diagnostics``, plus ``output_dir`` and ``seeds``. Missing
fields take their defaults; the filled-in config is written next to the
results so every run describes itself.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .agent import DEFAULT_OPS, OPERATOR_KINDS, init_deficient, init_random, init_zero, restrict_ops
from .diagnostics import capabilities, in_locking_regime, t_interval
from .envs import config_from_dict as env_config_from_dict
from .envs import config_to_dict as env_config_to_dict
from .envs import make_family
from .errors import ConfigError, UsageError
from .trainers import METRIC_COLUMNS, TrainConfig, _fmt, stream, train
from .trainers import config_from_dict as train_config_from_dict

AGENT_INITS = ("deficient", "zero", "random")
CRITIQUE_KEYS = {"flip_alpha", "mode", "lambda_inj", "as_rule", "bt_rule"}
GRID_KEYS = ("flip_alpha", "lambda_inj", "arew_mode", "algorithm")
STREAM_INIT = 3
FINAL_WINDOW = 20


@dataclass
class AgentConfig:
    init: str = "deficient"
    query_bias: float = 6.0
    update_bias: float = 4.0
    scale: float = 0.5
    ops: tuple = OPERATOR_KINDS

    def validate(self):
        if self.init not in AGENT_INITS:
            raise ConfigError(f"must be one of {AGENT_INITS}", "agent.init")
        bad = [k for k in self.ops if k not in OPERATOR_KINDS]
        if bad or not self.ops:
            raise ConfigError(f"unknown or empty operator kinds {bad}", "agent.ops")
        return self


@dataclass
class DiagnosticsConfig:
    n_rollouts: int = 200
    delta: float = 0.05
    eps: float = 0.05

    def validate(self):
        if self.n_rollouts < 0:
            raise ConfigError("must be >= 0", "diagnostics.n_rollouts")
        if self.delta < 0 or self.eps < 0:
            raise ConfigError("thresholds must be >= 0", "diagnostics.delta")
        return self


@dataclass
class ExperimentConfig:
    env: object
    agent: AgentConfig
    train: TrainConfig
    diagnostics: DiagnosticsConfig
    seeds: list
    output_dir: str = "out"

    def to_dict(self):
        t = self.train.to_dict()
        critique = {
            "flip_alpha": t.pop("flip_alpha"), "mode": t.pop("arew_mode"),
            "lambda_inj": t.pop("lambda_inj"), "as_rule": t.pop("as_rule"),
            "bt_rule": t.pop("bt_rule"),
        }
        t.pop("seed")
        agent = asdict(self.agent)
        agent["ops"] = list(agent["ops"])
        return {
            "env": env_config_to_dict(self.env),
            "agent": agent,
            "train": t,
            "critique": critique,
            "diagnostics": asdict(self.diagnostics),
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
        }

    def config_hash(self):
        return config_hash(self.to_dict())

    def with_train(self, **changes):
        d = self.train.to_dict()
        d.update(changes)
        return ExperimentConfig(self.env, self.agent, TrainConfig(**d).validate(),
                                self.diagnostics, list(self.seeds), self.output_dir)


def config_hash(d):
    """SHA-256 of the canonical (key-sorted) JSON form."""
    text = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def _block(d, name):
    v = d.get(name, {})
    if not isinstance(v, dict):
        raise ConfigError("must be an object", name)
    return dict(v)


def experiment_from_dict(d):
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object", "config")
    unknown = set(d) - {"env", "agent", "train", "critique", "diagnostics", "seeds", "output_dir"}
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}", "config")
    env = env_config_from_dict(_block(d, "env"))

    a = _block(d, "agent")
    try:
        agent = AgentConfig(**a)
    except TypeError as e:
        raise ConfigError(str(e), "agent") from None
    agent.ops = tuple(agent.ops)
    agent.validate()

    t = _block(d, "train")
    clash = CRITIQUE_KEYS & set(t) | {"arew_mode", "flip_alpha", "seed"} & set(t)
    if clash:
        raise ConfigError(f"{sorted(clash)} belong in the critique block or seed list", "train")
    c = _block(d, "critique")
    bad = set(c) - CRITIQUE_KEYS
    if bad:
        raise ConfigError(f"unknown keys {sorted(bad)}", "critique")
    if "mode" in c:
        t["arew_mode"] = c.pop("mode")
    t.update(c)
    try:
        tcfg = train_config_from_dict(t)
    except ConfigError as e:
        field_name = e.field or "train"
        leaf = field_name.split(".")[-1]
        if leaf in CRITIQUE_KEYS | {"arew_mode"}:
            field_name = "critique." + ("mode" if leaf == "arew_mode" else leaf)
        raise ConfigError(str(e).split(": ", 1)[-1], field_name) from None
    except TypeError as e:
        raise ConfigError(str(e), "train") from None

    try:
        diag = DiagnosticsConfig(**_block(d, "diagnostics")).validate()
    except TypeError as e:
        raise ConfigError(str(e), "diagnostics") from None

    seeds = d.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("must be a nonempty list of integers", "seeds")
    out = d.get("output_dir", "out")
    if not isinstance(out, str):
        raise ConfigError("must be a string", "output_dir")
    return ExperimentConfig(env, agent, tcfg, diag, seeds, out)


def load_config(path):
    try:
        with open(path) as fh:
            d = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"no such file {path}", "config") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON ({e})", "config") from None
    return experiment_from_dict(d)


def initial_params(cfg, env, seed):
    ops = tuple(op for op in DEFAULT_OPS if op.kind in cfg.agent.ops)
    if cfg.agent.init == "deficient":
        return init_deficient(env, cfg.agent.query_bias, cfg.agent.update_bias, ops=ops)
    if cfg.agent.init == "zero":
        return init_zero(env, ops)
    return init_random(env, stream(seed, STREAM_INIT), cfg.agent.scale, ops)


def _diag(params, fam, cfg, seed):
    n = cfg.diagnostics.n_rollouts
    if n == 0:
        return None
    cap = capabilities(params, fam, n, seed)
    return {
        "I_th": cap.i_th.mean, "I_th_stderr": cap.i_th.stderr,
        "C_BT": cap.c_bt.mean, "C_BT_stderr": cap.c_bt.stderr,
        "locked": in_locking_regime(cap.i_th.mean, cap.c_bt.mean,
                                    cfg.diagnostics.delta, cfg.diagnostics.eps),
    }


def _final(series):
    if len(series) == 0:
        return None
    return float(np.mean(series[-FINAL_WINDOW:]))


def run_seed(cfg, seed, out_dir):
    """Train one seed, streaming its metrics CSV; returns a per-seed summary."""
    t0 = time.perf_counter()
    fam = make_family(cfg.env)
    params = initial_params(cfg, fam.base, seed)
    tcfg = cfg.with_train(seed=seed).train
    path = Path(out_dir) / f"metrics_seed{seed}.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        fh.flush()

        def sink(rec):
            w.writerow([_fmt(getattr(rec, c)) for c in METRIC_COLUMNS])
            fh.flush()

        run = train(tcfg, fam, params, on_record=sink)
    summary = {
        "seed": seed,
        "metrics_csv": path.name,
        "initial": _diag(params, fam, cfg, seed),
        "final": _diag(run.params, fam, cfg, seed) if tcfg.steps else None,
        "final_mean_reward": _final(run.series("mean_reward")),
        "final_as_proxy": _final(run.series("as_proxy_mean")),
        "final_bt_proxy": _final(run.series("bt_proxy_mean")),
        "initial_mean_reward": (float(np.mean(run.series("mean_reward")[:FINAL_WINDOW]))
                                if run.records else None),
        "seconds": time.perf_counter() - t0,
    }
    with open(Path(out_dir) / f"params_seed{seed}.json", "w") as fh:
        fh.write(run.params.to_json())
    return summary


def _ci(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return None
    m, lo, hi = t_interval(vals)
    return {"mean": m, "lo": lo, "hi": hi, "n": len(vals)}


def summarize(seed_summaries):
    out = {}
    for key in ("final_mean_reward", "final_as_proxy", "final_bt_proxy", "initial_mean_reward"):
        out[key] = _ci([s[key] for s in seed_summaries])
    for phase in ("initial", "final"):
        for key in ("I_th", "C_BT"):
            out[f"{phase}_{key}"] = _ci([s[phase][key] for s in seed_summaries if s[phase]])
    return out


def workers():
    """Worker cap from SEL_LOCK_THREADS (default 1, i.e. serial)."""
    raw = os.environ.get("SEL_LOCK_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"SEL_LOCK_THREADS must be an integer, got {raw!r}", "SEL_LOCK_THREADS") from None
    return max(1, n)


@dataclass
class RunManifest:
    config_hash: str
    version: str
    output_dir: str
    paths: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def write(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)


def _run_seeds(cfg, out_dir):
    n = min(workers(), len(cfg.seeds))
    if n == 1:
        return [run_seed(cfg, s, out_dir) for s in cfg.seeds]
    with ProcessPoolExecutor(n) as pool:
        futures = [pool.submit(run_seed, cfg, s, out_dir) for s in cfg.seeds]
        return [f.result() for f in futures]


def run(cfg, out=None):
    """Train every seed, write per-seed CSVs, ``summary.json`` and ``manifest.json``."""
    if not isinstance(cfg, ExperimentConfig):
        cfg = load_config(cfg)
    out_dir = Path(out if out is not None else cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    filled = cfg.to_dict()
    with open(out_dir / "config.json", "w") as fh:
        json.dump(filled, fh, indent=1, sort_keys=True)
    seeds = _run_seeds(cfg, out_dir)
    summary = {"config_hash": config_hash(filled), "seeds": seeds, "across_seeds": summarize(seeds)}
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
    manifest = RunManifest(
        config_hash=config_hash(filled), version=__version__, output_dir=str(out_dir),
        paths={"config": "config.json", "summary": "summary.json",
               **{f"seed{s['seed']}": s["metrics_csv"] for s in seeds}},
        timings={"total_seconds": time.perf_counter() - t0,
                 **{f"seed{s['seed']}": s["seconds"] for s in seeds}},
        summary=summary["across_seeds"],
    )
    manifest.write(out_dir / "manifest.json")
    return manifest


def load_grid(path_or_dict):
    if isinstance(path_or_dict, dict):
        grid = path_or_dict
    else:
        try:
            with open(path_or_dict) as fh:
                grid = json.load(fh)
        except (FileNotFoundError, json.JSONDecodeError) as e:
            raise UsageError(f"cannot read grid: {e}") from None
    if not isinstance(grid, dict) or not grid:
        raise UsageError("grid is empty")
    bad = set(grid) - set(GRID_KEYS)
    if bad:
        raise UsageError(f"grid keys must be among {GRID_KEYS}, got {sorted(bad)}")
    for k, v in grid.items():
        if not isinstance(v, list) or not v:
            raise UsageError(f"grid axis {k!r} is empty")
    return {k: grid[k] for k in GRID_KEYS if k in grid}


def sweep(cfg, grid, out=None):
    """Cross product of grid cells and seeds; one summary row per cell."""
    if not isinstance(cfg, ExperimentConfig):
        cfg = load_config(cfg)
    grid = load_grid(grid)
    out_dir = Path(out if out is not None else cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    keys = list(grid)
    rows, paths, timings = [], {}, {}
    for i, values in enumerate(itertools.product(*grid.values())):
        cell = dict(zip(keys, values))
        try:
            cell_cfg = cfg.with_train(**cell)
        except ConfigError as e:
            raise ConfigError(str(e).split(": ", 1)[-1], f"grid.{e.field}") from None
        name = f"cell{i:03d}"
        m = run(cell_cfg, out_dir / name)
        paths[name] = name
        timings[name] = m.timings["total_seconds"]
        row = dict(cell)
        for key in ("final_mean_reward", "final_as_proxy", "final_bt_proxy"):
            ci = m.summary[key]
            row[key] = ci["mean"] if ci else None
            row[key + "_lo"] = ci["lo"] if ci else None
            row[key + "_hi"] = ci["hi"] if ci else None
        rows.append(row)
    with open(out_dir / "sweep_summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    filled = {"config": cfg.to_dict(), "grid": grid}
    manifest = RunManifest(
        config_hash=config_hash(filled), version=__version__, output_dir=str(out_dir),
        paths={"table": "sweep_summary.csv", **paths},
        timings={"total_seconds": time.perf_counter() - t0, **timings},
        summary={"rows": rows},
    )
    manifest.write(out_dir / "manifest.json")
    return manifest
