"""Policies over a pruned MDP: value iteration, EDF, and MCTS with EDF/random rollouts."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .core import IDLE, RouteSpec, SystemState
from .safety import PrunedMdp, UnsafeStateError

log = logging.getLogger(__name__)

DEFAULT_DISCOUNT = 0.99
DEFAULT_TOL = 1e-6


class NotSchedulableError(RuntimeError):
    pass


@dataclass
class ValueTable:
    """Per-state values; NaN marks pruned states."""
    values: np.ndarray
    iterations: int
    residuals: list[float] = field(default_factory=list)

    def __getitem__(self, s: int) -> float:
        return float(self.values[s])

    def to_json(self) -> dict:
        return {str(i): float(v) for i, v in enumerate(self.values) if not np.isnan(v)}


@dataclass
class PolicyTable:
    """Per-state action; -1 marks pruned states."""
    actions: np.ndarray

    def __getitem__(self, s: int) -> int:
        a = int(self.actions[s])
        if a < 0:
            raise UnsafeStateError(f"no policy action for pruned state {s}")
        return a

    def to_json(self) -> dict:
        return {str(i): int(a) for i, a in enumerate(self.actions) if a >= 0}


class KernelView:
    """Arrays of a pruned MDP prepared for the kernels at one discount."""

    def __init__(self, pm: PrunedMdp, discount: float):
        arr = pm.base.arrays
        self.pm = pm
        self.discount = discount
        self.state_ptr = arr.state_ptr
        self.row_safe = pm.row_safe.copy()
        self.row_ptr = arr.row_ptr
        self.row_action = arr.row_action
        self.out_next = arr.out_next
        self.out_prob = arr.out_prob
        self.out_reward = arr.out_reward
        self.out_disc = discount ** arr.out_duration.astype(np.float64)

    def args(self):
        return (self.state_ptr, self.row_safe, self.row_ptr, self.out_next, self.out_prob,
                self.out_reward, self.out_disc)

    @cached_property
    def edf_row(self) -> np.ndarray:
        pm = self.pm
        rows = np.full(pm.base.n_states, -1, dtype=np.int64)
        for s in range(pm.base.n_states):
            if s in pm.pruned_states:
                continue
            a = edf_action(pm.base.states[s], pm.safe_actions_of[s], pm.base.specs)
            lo = self.state_ptr[s]
            rows[s] = lo + pm.base.actions_of[s].index(a)
        return rows


def value_iteration(pm: PrunedMdp, discount: float = DEFAULT_DISCOUNT, tol: float = DEFAULT_TOL,
                    max_iter: int = 100_000, sweep=None) -> tuple[ValueTable, PolicyTable]:
    """Bellman iteration over safe actions, discounting each outcome by
    ``discount ** duration``; stops when the max residual is <= ``tol``."""
    if not pm.schedulable:
        raise NotSchedulableError("initial state is pruned; system is not schedulable")
    if not 0.0 < discount < 1.0:
        raise ValueError(f"discount must lie in (0, 1), got {discount}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    view = KernelView(pm, discount)
    args = view.args()
    values = np.zeros(pm.base.n_states)
    if sweep is None and _kernels.USE_NUMBA:
        # whole loop in one compiled call; no per-sweep interpreter overhead
        buf = np.empty(max_iter)
        n = _kernels.vi_solve(*args, values, tol, buf)
        residuals = buf[:n].tolist()
    else:
        sweep = sweep or _kernels.vi_sweep
        scratch = np.empty_like(values)
        residuals = []
        for _ in range(max_iter):
            res = sweep(*args, values, scratch)
            values, scratch = scratch, values
            residuals.append(float(res))
            if res <= tol:
                break
    if residuals and residuals[-1] > tol:
        log.warning("value iteration hit max_iter=%d with residual %.3g", max_iter, residuals[-1])
    rows = _kernels.greedy_rows(*args, values, _kernels.TIE_TOL)
    actions = np.where(rows >= 0, view.row_action[np.maximum(rows, 0)], -1)
    values = values.copy()
    values[~pm.state_mask] = np.nan
    return ValueTable(values, len(residuals), residuals), PolicyTable(actions)


def edf_action(s: SystemState, safe: Iterable[int], specs: Sequence[RouteSpec]) -> int:
    """Earliest-deadline-first over the safe actions.

    Incomplete hard requests come first, then incomplete soft ones, each by
    smallest remaining deadline and then lowest route id; idle if nothing
    incomplete is actionable.
    """
    safe = tuple(safe)
    if not safe:
        raise ValueError("empty safe-action set")
    best = None
    for a in safe:
        if a == IDLE:
            continue
        r = s.requests[a - 1]
        if r.completed:
            continue
        key = (0 if specs[a - 1].is_hard else 1, r.deadline, a)
        if best is None or key < best:
            best = key
    if best is not None:
        return best[2]
    if IDLE in safe:
        return IDLE
    return min(safe)


@dataclass(frozen=True)
class MctsConfig:
    depth: int = 20
    simulations: int = 1000
    exploration_c: float | None = None
    rollout: str = "edf"
    seed: int = 0
    discount: float = DEFAULT_DISCOUNT

    def __post_init__(self):
        if self.depth < 1 or self.simulations < 1:
            raise ValueError("depth and simulations must be >= 1")
        if self.rollout not in ("edf", "random"):
            raise ValueError(f"rollout must be 'edf' or 'random', got {self.rollout!r}")
        if self.exploration_c is not None and self.exploration_c < 0:
            raise ValueError("exploration_c must be nonnegative")

    def exploration(self, pm: PrunedMdp) -> float:
        return abs(pm.base.params.j_soft) if self.exploration_c is None else self.exploration_c


class MctsPlanner:
    """Reusable MCTS decision maker bound to one pruned model."""

    def __init__(self, pm: PrunedMdp, cfg: MctsConfig):
        self.pm = pm
        self.cfg = cfg
        self.view = KernelView(pm, cfg.discount)
        self._edf = self.view.edf_row
        self._c = cfg.exploration(pm)
        self._kind = _kernels.ROLLOUT_EDF if cfg.rollout == "edf" else _kernels.ROLLOUT_RANDOM

    def action(self, s: int, seed: int | None = None) -> int:
        if s in self.pm.pruned_states:
            raise UnsafeStateError(f"state {s} is unsafe (pruned)")
        seed = self.cfg.seed if seed is None else seed
        row = _kernels.mcts_search(*self.view.args(), self._edf, s, self.cfg.depth,
                                   self.cfg.simulations, self._c, self._kind,
                                   int(seed) % (2**32))
        return int(self.view.row_action[row])


def mcts_action(model: PrunedMdp, s: int, cfg: MctsConfig) -> int:
    return MctsPlanner(model, cfg).action(s)


def dump_solution(values: ValueTable | None, policy: PolicyTable) -> str:
    doc = {"policy": policy.to_json()}
    if values is not None:
        doc["values"] = values.to_json()
        doc["iterations"] = values.iterations
    return json.dumps(doc, indent=1)
