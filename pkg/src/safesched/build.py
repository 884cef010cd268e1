"""Explicit enumeration of the reachable scheduling MDP.

In non-preemptible mode only unrestricted states are stored; the forced
chains between them are collapsed into macro-transitions that carry the
number of concrete steps they span.
"""
from __future__ import annotations

import enum
import json
import logging
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np

from .core import (
    Mode, ModelError, ProbVec, RequestState, RewardParams, RouteSpec, SystemState,
    TERMINAL, TransitionModel, TransitionOutcome, enabled_actions,
)

log = logging.getLogger(__name__)

DEFAULT_STATE_CAP = 5_000_000
DEFAULT_CHAIN_BOUND = 100_000


class StateExplosion(RuntimeError):
    pass


class StateClass(str, enum.Enum):
    RESTRICTED = "restricted"
    UNRESTRICTED = "unrestricted"


class Outcome(NamedTuple):
    """A stored transition: target state index, probability, reward, steps."""
    next: int
    prob: float
    reward: float
    duration: int = 1


class MdpArrays(NamedTuple):
    """Flat CSR layout consumed by the numeric kernels.

    Rows are (state, action) pairs: ``state_ptr[s]:state_ptr[s+1]`` indexes the
    rows of state ``s``; ``row_ptr[r]:row_ptr[r+1]`` indexes a row's outcomes.
    """
    state_ptr: np.ndarray
    row_state: np.ndarray
    row_action: np.ndarray
    row_ptr: np.ndarray
    out_next: np.ndarray
    out_prob: np.ndarray
    out_reward: np.ndarray
    out_duration: np.ndarray


@dataclass(eq=False)
class ExplicitMdp:
    states: list[SystemState]
    actions_of: list[tuple[int, ...]]
    transitions: list[tuple[tuple[Outcome, ...], ...]]
    mode: Mode
    specs: tuple[RouteSpec, ...]
    params: RewardParams
    index: dict[SystemState, int] = field(repr=False, default_factory=dict)

    def __post_init__(self):
        if not self.index:
            self.index = {s: i for i, s in enumerate(self.states)}

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def terminal_index(self) -> int | None:
        return self.index.get(TERMINAL)

    @property
    def n_nonterminal(self) -> int:
        return self.n_states - (self.terminal_index is not None)

    def outcomes(self, s: int, a: int) -> tuple[Outcome, ...]:
        return self.transitions[s][self.actions_of[s].index(a)]

    @cached_property
    def arrays(self) -> MdpArrays:
        state_ptr = [0]
        row_state, row_action, row_ptr = [], [], [0]
        nxt, prob, rew, dur = [], [], [], []
        for s, (acts, rows) in enumerate(zip(self.actions_of, self.transitions)):
            for a, outs in zip(acts, rows):
                row_state.append(s)
                row_action.append(a)
                for o in outs:
                    nxt.append(o.next)
                    prob.append(o.prob)
                    rew.append(o.reward)
                    dur.append(o.duration)
                row_ptr.append(len(nxt))
            state_ptr.append(len(row_action))
        i64 = np.int64
        return MdpArrays(np.array(state_ptr, i64), np.array(row_state, i64),
                         np.array(row_action, i64), np.array(row_ptr, i64),
                         np.array(nxt, i64), np.array(prob, np.float64),
                         np.array(rew, np.float64), np.array(dur, i64))

    def to_json(self) -> dict:
        return {
            "mode": self.mode.value,
            "routes": [spec_to_json(s) for s in self.specs],
            "rewards": {"j_soft": self.params.j_soft, "j_hard": self.params.j_hard},
            "states": [state_to_json(i, s) for i, s in enumerate(self.states)],
            "transitions": [
                {"state": s, "action": a,
                 "outcomes": [{"next": o.next, "prob": o.prob, "reward": o.reward,
                               "duration": o.duration} for o in outs]}
                for s, (acts, rows) in enumerate(zip(self.actions_of, self.transitions))
                for a, outs in zip(acts, rows)
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ExplicitMdp":
        specs = tuple(spec_from_json(i + 1, r) for i, r in enumerate(doc["routes"]))
        params = RewardParams(**doc["rewards"])
        states = [state_from_json(d) for d in doc["states"]]
        actions_of: list[list[int]] = [[] for _ in states]
        transitions: list[list[tuple[Outcome, ...]]] = [[] for _ in states]
        for t in doc["transitions"]:
            actions_of[t["state"]].append(t["action"])
            transitions[t["state"]].append(tuple(
                Outcome(o["next"], o["prob"], o["reward"], o["duration"]) for o in t["outcomes"]))
        return cls(states, [tuple(a) for a in actions_of], [tuple(t) for t in transitions],
                   Mode.parse(doc["mode"]), specs, params)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1)


def spec_to_json(spec: RouteSpec) -> dict:
    return {"class": spec.route_class.value, "completion": list(spec.p_init),
            "deadline": spec.d_init, "interarrival": list(spec.q_init)}


def spec_from_json(route_id: int, doc: dict) -> RouteSpec:
    return RouteSpec(route_id, doc["class"], ProbVec(doc["completion"]), doc["deadline"],
                     ProbVec(doc["interarrival"]))


def state_to_json(index: int, s: SystemState) -> dict:
    return {"index": index, "terminal": s.terminal, "in_progress": s.in_progress,
            "requests": [{"p": list(r.p), "deadline": r.deadline, "q": list(r.q)}
                         for r in s.requests]}


def state_from_json(doc: dict) -> SystemState:
    if doc["terminal"]:
        return TERMINAL
    return SystemState(tuple(RequestState(ProbVec(r["p"]), r["deadline"], ProbVec(r["q"]))
                             for r in doc["requests"]), False, doc.get("in_progress"))


def classify_state(s: SystemState, mode: Mode | str = Mode.NONPREEMPTIBLE,
                   n_routes: int | None = None) -> StateClass:
    if len(enabled_actions(s, mode, n_routes)) == 1:
        return StateClass.RESTRICTED
    return StateClass.UNRESTRICTED


def _is_restricted(model: TransitionModel, s: SystemState) -> bool:
    return not s.terminal and len(model.enabled(s)) == 1


def macro_successors(s: SystemState, a: int, model: TransitionModel,
                     max_steps: int = DEFAULT_CHAIN_BOUND) -> list[TransitionOutcome]:
    """Collapse the forced chain that follows action ``a`` from ``s``.

    Outcomes with equal (next, reward, duration) are merged; order is the
    first-discovery order of a breadth-first expansion, so it is deterministic.
    """
    if model.mode is not Mode.NONPREEMPTIBLE:
        raise ModelError("macro-transitions exist only in non-preemptible mode")
    merged: dict[tuple, float] = {}
    frontier = deque((o.next, o.prob, o.reward, 1) for o in model.step(s, a))
    while frontier:
        t, prob, reward, steps = frontier.popleft()
        if _is_restricted(model, t):
            if steps >= max_steps:
                raise ModelError(f"forced chain from {s} exceeds {max_steps} steps")
            for o in model.step(t, t.in_progress):
                frontier.append((o.next, prob * o.prob, reward + o.reward, steps + 1))
            continue
        key = (t, reward, steps)
        merged[key] = merged.get(key, 0.0) + prob
    return [TransitionOutcome(t, p, r, d) for (t, r, d), p in merged.items()]


def build(specs: Sequence[RouteSpec], params: RewardParams | None = None,
          mode: Mode | str = Mode.PREEMPTIBLE, max_states: int = DEFAULT_STATE_CAP,
          model: TransitionModel | None = None) -> ExplicitMdp:
    """Breadth-first closure of the transition relation from the initial state."""
    model = model or TransitionModel(specs, params, mode)
    npe = model.mode is Mode.NONPREEMPTIBLE
    init = model.initial()
    states = [init]
    index = {init: 0}
    actions_of: list[tuple[int, ...]] = []
    transitions: list[tuple[tuple[Outcome, ...], ...]] = []
    head = 0
    while head < len(states):
        s = states[head]
        head += 1
        acts = model.enabled(s)
        rows = []
        for a in acts:
            outs = macro_successors(s, a, model) if npe else model.step(s, a)
            row = []
            for o in outs:
                j = index.get(o.next)
                if j is None:
                    if len(states) >= max_states:
                        raise StateExplosion(f"state explosion: more than {max_states} states (cap)")
                    j = index[o.next] = len(states)
                    states.append(o.next)
                row.append(Outcome(j, o.prob, o.reward, o.duration))
            rows.append(tuple(row))
        actions_of.append(acts)
        transitions.append(tuple(rows))
    log.debug("built %s MDP with %d states", model.mode.value, len(states))
    return ExplicitMdp(states, actions_of, transitions, model.mode, model.specs, model.params, index)
