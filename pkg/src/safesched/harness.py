"""Experiment configuration, the end-to-end pipeline, trial campaigns and benchmarks."""
from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .build import ExplicitMdp, build, spec_from_json, spec_to_json
from .core import Mode, ModelError, RewardParams, RouteSpec
from .learn import (
    Plant, SafetyViolation, SamplingConfig, Tracker, estimate_system, model_of,
)
from .safety import PrunedMdp, prune
from .solve import (
    DEFAULT_DISCOUNT, DEFAULT_TOL, MctsConfig, MctsPlanner, NotSchedulableError, edf_action,
    value_iteration,
)

log = logging.getLogger(__name__)

SOLVERS = ("vi", "mcts-edf", "mcts-random", "edf")


class ConfigError(ValueError):
    pass


class UnschedulableError(NotSchedulableError):
    def __init__(self, report: dict):
        super().__init__(f"system is not schedulable: {json.dumps(report)}")
        self.report = report


@dataclass(frozen=True)
class ExperimentConfig:
    routes: tuple[RouteSpec, ...]
    rewards: RewardParams = RewardParams()
    mode: Mode = Mode.PREEMPTIBLE
    solver: str = "vi"
    sampling: Union[SamplingConfig, str] = "oracle"
    trials: int = 1000
    traversals_per_trial: int = 10
    report_stride: int = 50
    seed: int = 0
    discount: float = DEFAULT_DISCOUNT
    tol: float = DEFAULT_TOL
    mcts_depth: int = 20
    mcts_simulations: int = 1000
    mcts_exploration_c: Optional[float] = None
    max_traversal_steps: Optional[int] = None
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode.parse(self.mode))
        object.__setattr__(self, "routes", tuple(self.routes))
        if self.solver not in SOLVERS:
            raise ConfigError(f"solver: expected one of {SOLVERS}, got {self.solver!r}")
        if self.trials < 1:
            raise ConfigError("trials: must be >= 1")
        if self.traversals_per_trial < 1:
            raise ConfigError("traversals_per_trial: must be >= 1")
        if self.report_stride < 1 or self.trials % self.report_stride:
            raise ConfigError("report_stride: must divide trials evenly")
        if isinstance(self.sampling, str) and self.sampling != "oracle":
            raise ConfigError(f"sampling: expected 'oracle' or an object, got {self.sampling!r}")

    def with_(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)

    def mcts_config(self, seed: int = 0) -> MctsConfig:
        rollout = "random" if self.solver == "mcts-random" else "edf"
        return MctsConfig(self.mcts_depth, self.mcts_simulations, self.mcts_exploration_c,
                          rollout, seed, self.discount)

    @property
    def traversal_guard(self) -> int:
        if self.max_traversal_steps is not None:
            return self.max_traversal_steps
        return 10 * max(r.q_init.bound for r in self.routes) * len(self.routes)


def _routes_from_json(items, where="routes") -> tuple[RouteSpec, ...]:
    if not isinstance(items, list) or not items:
        raise ConfigError(f"{where}: expected a nonempty list of routes")
    out = []
    for i, r in enumerate(items):
        try:
            out.append(spec_from_json(i + 1, r))
        except KeyError as e:
            raise ConfigError(f"{where}[{i}]: missing field {e.args[0]!r}") from None
        except (ModelError, ValueError, TypeError) as e:
            raise ConfigError(f"{where}[{i}]: {e}") from None
    return tuple(out)


def _rewards_from_json(doc) -> RewardParams:
    try:
        return RewardParams(**doc) if doc is not None else RewardParams()
    except (ModelError, TypeError) as e:
        raise ConfigError(f"rewards: {e}") from None


def config_from_dict(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    kw = {"routes": _routes_from_json(doc.get("routes")),
          "rewards": _rewards_from_json(doc.get("rewards"))}
    sampling = doc.get("sampling", "oracle")
    if isinstance(sampling, dict):
        try:
            sampling = SamplingConfig(**sampling)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"sampling: {e}") from None
    kw["sampling"] = sampling
    simple = ("mode", "solver", "trials", "traversals_per_trial", "report_stride", "seed",
              "discount", "tol", "max_traversal_steps", "label")
    for k in simple:
        if k in doc:
            kw[k] = doc[k]
    for k, v in (doc.get("mcts") or {}).items():
        if k not in ("depth", "simulations", "exploration_c"):
            raise ConfigError(f"mcts.{k}: unknown field")
        kw[f"mcts_{k}"] = v
    unknown = set(doc) - set(simple) - {"routes", "rewards", "sampling", "mcts", "suite"}
    if unknown:
        raise ConfigError(f"unknown field(s): {sorted(unknown)}")
    try:
        return ExperimentConfig(**kw)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: malformed JSON: {e}") from None
    return config_from_dict(doc)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    doc = {
        "label": cfg.label,
        "routes": [spec_to_json(r) for r in cfg.routes],
        "rewards": {"j_soft": cfg.rewards.j_soft, "j_hard": cfg.rewards.j_hard},
        "mode": cfg.mode.value, "solver": cfg.solver,
        "sampling": cfg.sampling if isinstance(cfg.sampling, str) else {
            "support_size": cfg.sampling.support_size, "epsilon": cfg.sampling.epsilon,
            "confidence_gamma": cfg.sampling.confidence_gamma, "samples": cfg.sampling.samples},
        "trials": cfg.trials, "traversals_per_trial": cfg.traversals_per_trial,
        "report_stride": cfg.report_stride, "seed": cfg.seed, "discount": cfg.discount,
        "tol": cfg.tol,
        "mcts": {"depth": cfg.mcts_depth, "simulations": cfg.mcts_simulations,
                 "exploration_c": cfg.mcts_exploration_c},
    }
    if cfg.max_traversal_steps is not None:
        doc["max_traversal_steps"] = cfg.max_traversal_steps
    return doc


# --- pipeline ---------------------------------------------------------------

@dataclass
class Pipeline:
    """Artifacts of build -> prune -> learn -> build -> prune for one config."""
    cfg: ExperimentConfig
    truth: PrunedMdp
    learned_specs: tuple[RouteSpec, ...]
    model: PrunedMdp


def prepare(cfg: ExperimentConfig, seed_seq: Optional[np.random.SeedSequence] = None) -> Pipeline:
    seed_seq = seed_seq or np.random.SeedSequence(cfg.seed)
    truth = prune(build(cfg.routes, cfg.rewards, cfg.mode))
    if not truth.schedulable:
        raise UnschedulableError(truth.report())
    if cfg.sampling == "oracle":
        specs = cfg.routes
        model = truth
    else:
        plant = Plant(cfg.routes, cfg.rewards, np.random.default_rng(seed_seq))
        specs = tuple(estimate_system(plant, truth, cfg.sampling))
        model = prune(build(specs, cfg.rewards, cfg.mode))
        if not model.schedulable:
            raise UnschedulableError(model.report())
    return Pipeline(cfg, truth, tuple(specs), model)


def make_policy(cfg: ExperimentConfig, pm: PrunedMdp) -> Callable[[int, np.random.Generator], int]:
    if cfg.solver == "vi":
        _, table = value_iteration(pm, cfg.discount, cfg.tol)
        return lambda s, rng: table[s]
    if cfg.solver == "edf":
        states, specs = pm.base.states, pm.base.specs
        cache = {}

        def edf(s, rng):
            if s not in cache:
                cache[s] = edf_action(states[s], pm.safe_actions_of[s], specs)
            return cache[s]
        return edf
    planner = MctsPlanner(pm, cfg.mcts_config())
    return lambda s, rng: planner.action(s, int(rng.integers(2**32)))


@dataclass
class TrialSeries:
    rows: list[tuple[int, float]]
    trial_costs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    discounted_costs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    terminal_entries: int = 0
    steps: int = 0
    traversals: int = 0
    guard_hits: int = 0
    label: str = ""

    @property
    def final_mean(self) -> float:
        return self.rows[-1][1] if self.rows else float("nan")


def run_trials(cfg: ExperimentConfig, pipeline: Optional[Pipeline] = None) -> TrialSeries:
    """Simulate the plant under the solver's policy computed on the learned model.

    A traversal runs from the all-initial configuration to its next
    recurrence; traversals are run back to back. Trial cost is the
    undiscounted sum of rewards.
    """
    root = np.random.SeedSequence(cfg.seed)
    learn_seq, trial_seq = root.spawn(2)
    pipe = pipeline or prepare(cfg, learn_seq)
    pm = pipe.model
    decide = make_policy(cfg, pm)
    plant = Plant(cfg.routes, cfg.rewards)
    tracker = Tracker(model_of(pm))
    init = tracker.model.initial()
    index = pm.base.index
    guard = cfg.traversal_guard
    disc = cfg.discount

    costs = np.zeros(cfg.trials)
    dcosts = np.zeros(cfg.trials)
    steps_total = 0
    guard_hits = 0
    rows = []
    for t, child in enumerate(trial_seq.spawn(cfg.trials)):
        plant_seq, policy_seq = child.spawn(2)
        plant.reseed(plant_seq)
        policy_rng = np.random.default_rng(policy_seq)
        plant.reset()
        tracker.reset()
        cost = dcost = 0.0
        g = 1.0
        for _ in range(cfg.traversals_per_trial):
            n = 0
            while True:
                s = tracker.state
                a = tracker.forced()
                if a is None:
                    a = decide(index[s], policy_rng)
                obs = plant.step(a)
                if obs.terminal:
                    raise SafetyViolation(f"trial {t + 1}: hard deadline missed under {cfg.solver}")
                cost += obs.reward
                dcost += g * obs.reward
                g *= disc
                tracker.advance(a, obs)
                n += 1
                if tracker.state == init:
                    break
                if n >= guard:
                    guard_hits += 1
                    break
            steps_total += n
        costs[t] = cost
        dcosts[t] = dcost
        if (t + 1) % cfg.report_stride == 0:
            rows.append((t + 1, float(costs[: t + 1].mean())))
    return TrialSeries(rows, costs, dcosts, plant.terminal_entries, steps_total,
                       cfg.trials * cfg.traversals_per_trial, guard_hits, cfg.label)


# --- benchmarks -------------------------------------------------------------

@dataclass
class BenchRow:
    label: str
    mode: str
    states: int
    seconds: float
    states_nonterminal: int = 0
    iterations: int = 0
    group: str = ""
    error: str = ""


def _batch_seconds(pm: PrunedMdp, discount: float, tol: float, min_time: float) -> float:
    """Mean wall time per solve over a batch lasting at least ``min_time``."""
    n = 0
    t0 = time.perf_counter()
    while True:
        value_iteration(pm, discount, tol)
        n += 1
        elapsed = time.perf_counter() - t0
        if elapsed >= min_time:
            return elapsed / n


def time_vi(pm: PrunedMdp, discount: float, tol: float, min_time: float = 0.05,
            repeats: int = 5) -> tuple[float, int]:
    """Per-solve wall time (best of ``repeats`` batches) and the iteration count."""
    values, _ = value_iteration(pm, discount, tol)
    best = min(_batch_seconds(pm, discount, tol, min_time) for _ in range(repeats))
    return best, values.iterations


def bench_scalability(suite: Sequence[ExperimentConfig], discount: float = DEFAULT_DISCOUNT,
                      tol: float = DEFAULT_TOL, min_time: float = 0.05,
                      repeats: int = 7) -> list[BenchRow]:
    """Build and VI-solve every config in both modes.

    Timing rounds are interleaved across all cases and each case keeps its
    best batch, so a transient slowdown cannot single out one row.
    """
    rows: list[BenchRow] = []
    cases = []
    for cfg in suite:
        group = cfg.label.split(":", 1)[0] if ":" in cfg.label else ""
        for mode in (Mode.PREEMPTIBLE, Mode.NONPREEMPTIBLE):
            try:
                mdp = build(cfg.routes, cfg.rewards, mode)
                pm = prune(mdp)
                values, _ = value_iteration(pm, discount, tol)
                rows.append(BenchRow(cfg.label, mode.value, mdp.n_states, float("inf"),
                                     mdp.n_nonterminal, values.iterations, group))
                cases.append((len(rows) - 1, pm))
            except Exception as e:  # row-level failure, suite continues
                log.warning("bench %s/%s failed: %s", cfg.label, mode.value, e)
                rows.append(BenchRow(cfg.label, mode.value, 0, float("nan"), group=group,
                                     error=f"{type(e).__name__}: {e}"))
    for _ in range(repeats):
        for i, pm in cases:
            rows[i].seconds = min(rows[i].seconds, _batch_seconds(pm, discount, tol, min_time))
    return rows


def load_suite(path: Union[str, Path]) -> list[ExperimentConfig]:
    doc = json.loads(Path(path).read_text())
    if "suite" not in doc:
        return [config_from_dict(doc)]
    rewards = doc.get("rewards")
    out = []
    for i, entry in enumerate(doc["suite"]):
        try:
            out.append(ExperimentConfig(_routes_from_json(entry.get("routes"), f"suite[{i}].routes"),
                                        _rewards_from_json(entry.get("rewards", rewards)),
                                        label=entry.get("label", f"row{i}")))
        except ConfigError as e:
            raise ConfigError(f"suite[{i}]: {e}") from None
    return out


# --- emission ---------------------------------------------------------------

SERIES_COLUMNS = ("trial", "mean_cost")
BENCH_COLUMNS = ("label", "mode", "states", "seconds")


def _records(obj) -> tuple[tuple[str, ...], list[dict]]:
    if isinstance(obj, TrialSeries):
        return SERIES_COLUMNS, [{"trial": t, "mean_cost": m} for t, m in obj.rows]
    rows = list(obj)
    if rows and not isinstance(rows[0], BenchRow):
        raise TypeError(f"cannot emit {type(rows[0]).__name__}")
    return BENCH_COLUMNS, [r.__dict__.copy() for r in rows]


def render(obj, fmt: str = "csv") -> str:
    columns, records = _records(obj)
    if fmt == "json":
        return json.dumps(records, indent=1) + "\n"
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for rec in records:
        w.writerow([repr(rec[c]) if isinstance(rec[c], float) else rec[c] for c in columns])
    return buf.getvalue()


def emit(obj, fmt: str, path: Union[str, Path]) -> None:
    Path(path).write_text(render(obj, fmt))


def load_bench_rows(path: Union[str, Path]) -> list[BenchRow]:
    return [BenchRow(**d) for d in json.loads(Path(path).read_text())]
