"""Safe sampling of a hidden plant to estimate completion and inter-arrival distributions."""
from __future__ import annotations

import enum
import hashlib
import logging
import math
import warnings
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .core import Mode, ProbVec, RewardParams, RouteSpec, SystemState, TransitionModel
from .safety import PrunedMdp, safe_actions
from .solve import NotSchedulableError, edf_action

log = logging.getLogger(__name__)


class LearningFidelityWarning(UserWarning):
    pass


class SafetyViolation(RuntimeError):
    pass


class ModelMismatch(RuntimeError):
    """An observation has no matching outcome in the agent's model."""


def state_digest(s: SystemState) -> str:
    """Short content hash of a state, stable across processes (unlike ``hash``)."""
    return hashlib.blake2b(repr(s).encode(), digest_size=8).hexdigest()


class Target(str, enum.Enum):
    COMPLETION = "completion"
    INTERARRIVAL = "interarrival"


class Observation(NamedTuple):
    completed: tuple[int, ...]
    arrived: tuple[int, ...]
    terminal: bool
    reward: float


class Plant:
    """The true system. Only step observations leave the object."""

    def __init__(self, specs: Sequence[RouteSpec], params: RewardParams | None = None,
                 seed: int | np.random.Generator | None = None):
        self._model = TransitionModel(specs, params, Mode.PREEMPTIBLE)
        self._rng = np.random.default_rng(seed)
        # known a priori; the distributions are not
        self.route_classes = tuple(s.route_class for s in specs)
        self.deadlines = tuple(s.d_init for s in specs)
        self.terminal_entries = 0
        self.reset()

    @property
    def n_routes(self) -> int:
        return len(self.deadlines)

    def reseed(self, seed) -> None:
        self._rng = np.random.default_rng(seed)

    def reset(self) -> None:
        self._state = self._model.initial()
        self.steps = 0

    def step(self, action: int) -> Observation:
        outs = self._model.step(self._state, action)
        u = self._rng.random()
        acc = 0.0
        pick = outs[-1]
        for o in outs:
            acc += o.prob
            if u < acc:
                pick = o
                break
        if pick.next.terminal and not self._state.terminal:
            self.terminal_entries += 1
        self._state = pick.next
        self.steps += 1
        return Observation(pick.completed, pick.arrived, pick.next.terminal, pick.reward)


class Tracker:
    """Follows the plant inside the agent's own model by matching observed events."""

    def __init__(self, model: TransitionModel):
        self.model = model
        self.reset()

    def reset(self) -> None:
        self.state = self.model.initial()

    def forced(self) -> Optional[int]:
        acts = self.model.enabled(self.state)
        return acts[0] if len(acts) == 1 and not self.state.terminal else None

    def advance(self, action: int, obs: Observation) -> SystemState:
        for o in self.model.step(self.state, action):
            if obs.terminal:
                if o.next.terminal:
                    break
            elif (not o.next.terminal and o.completed == obs.completed
                  and o.arrived == obs.arrived):
                break
        else:
            raise ModelMismatch(f"no outcome of action {action} in {self.state} matches {obs}")
        self.state = o.next
        return self.state


def model_of(pm: PrunedMdp) -> TransitionModel:
    b = pm.base
    return TransitionModel(b.specs, b.params, b.mode)


def required_samples(r: int, epsilon: float, confidence_gamma: float) -> int:
    """Samples needed so the estimate is within ``epsilon`` with probability 1 - gamma."""
    if r < 1:
        raise ValueError("support size must be >= 1")
    if not 0.0 < epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in (0, 1], got {epsilon}")
    if not 0.0 < confidence_gamma < 1.0:
        raise ValueError(f"confidence_gamma must lie in (0, 1), got {confidence_gamma}")
    return r * math.ceil((math.log(2 * r) - math.log(confidence_gamma)) / (2 * epsilon**2))


def epsilon_for_samples(r: int, y: int, confidence_gamma: float) -> float:
    """Smallest epsilon whose required sample count is about ``y``."""
    return math.sqrt(r * (math.log(2 * r) - math.log(confidence_gamma)) / (2 * y))


@dataclass(frozen=True)
class SamplingConfig:
    support_size: int = 2
    epsilon: Optional[float] = None
    confidence_gamma: float = 0.1
    samples: Optional[int] = 1000

    def __post_init__(self):
        if self.support_size < 1:
            raise ValueError("support_size must be >= 1")
        if self.samples is None and self.epsilon is None:
            raise ValueError("give either samples or epsilon")
        if self.samples is not None and self.samples < 1:
            raise ValueError("samples must be >= 1")

    @property
    def y(self) -> int:
        if self.samples is not None:
            return self.samples
        return required_samples(self.support_size, self.epsilon, self.confidence_gamma)


@dataclass
class EmpiricalDist:
    counts: np.ndarray
    total: int

    @classmethod
    def from_samples(cls, values: Sequence[int]) -> "EmpiricalDist":
        counts = np.bincount(np.asarray(values, dtype=np.int64)) if len(values) else np.zeros(1, np.int64)
        return cls(counts, int(counts.sum()))

    def estimate(self, bound: Optional[int] = None) -> ProbVec:
        if self.total == 0:
            raise ValueError("no samples")
        bound = len(self.counts) - 1 if bound is None else bound
        if bound < len(self.counts) - 1 and self.counts[bound + 1:].any():
            raise ValueError(f"samples exceed bound {bound}")
        mass = np.zeros(max(bound, 1) + 1)
        mass[:len(self.counts)] = self.counts[:len(mass)] / self.total
        return ProbVec(mass)


TraceFn = Callable[[int, int, int, Observation], None]


def sample_route(plant: Plant, pruned: PrunedMdp, route_id: int, target: Target | str,
                 n: int, trace: Optional[TraceFn] = None, max_steps: Optional[int] = None,
                 clamp: Optional[int] = None) -> EmpiricalDist:
    """Drive the plant, working on ``route_id`` whenever that is safe, and
    record ``n`` completion times (dedicated work steps) or inter-arrival gaps.

    When working the route is not safe the earliest-deadline safe action is
    taken. Attempts cut short by a new arrival are discarded. Values above
    ``clamp`` are recorded as ``clamp``.
    """
    target = Target(target)
    if not pruned.schedulable:
        raise NotSchedulableError("cannot sample an unschedulable system")
    if n < 1:
        raise ValueError("n must be >= 1")
    model = model_of(pruned)
    specs = model.specs
    tracker = Tracker(model)
    plant.reset()
    max_steps = max_steps or 1000 * n * max(s.q_init.bound for s in specs)
    i = route_id - 1
    values: list[int] = []
    work = 0
    since = 0
    clamped = 0
    step = 0
    while len(values) < n:
        if step >= max_steps:
            raise RuntimeError(f"sampling route {route_id} stalled after {step} steps")
        s = tracker.state
        a = tracker.forced()
        if a is None:
            safe = safe_actions(pruned, pruned.base.index[s])
            a = route_id if route_id in safe else edf_action(s, safe, specs)
        obs = plant.step(a)
        step += 1
        if trace is not None:
            trace(step, state_digest(s), a, obs)
        if obs.terminal:
            raise SafetyViolation(f"plant entered the terminal state while sampling route {route_id}")
        if a == route_id and not s.requests[i].completed:
            work += 1
        since += 1
        if target is Target.COMPLETION and route_id in obs.completed:
            v = work
            if clamp is not None and v > clamp:
                v, clamped = clamp, clamped + 1
            values.append(v)
        if route_id in obs.arrived:
            if target is Target.INTERARRIVAL:
                values.append(since)
            since = 0
            work = 0
        tracker.advance(a, obs)
    if clamped:
        warnings.warn(f"route {route_id}: {clamped} completion samples above the deadline "
                      f"were clamped to {clamp}", LearningFidelityWarning, stacklevel=2)
    return EmpiricalDist.from_samples(values)


def estimate_system(plant: Plant, pruned: PrunedMdp, cfg: SamplingConfig | None = None,
                    trace: Optional[TraceFn] = None) -> list[RouteSpec]:
    """Estimated route specs; deadlines and classes are taken as known."""
    cfg = cfg or SamplingConfig()
    y = cfg.y
    out = []
    for spec in pruned.base.specs:
        rid, d = spec.route_id, spec.d_init
        p_hat = sample_route(plant, pruned, rid, Target.COMPLETION, y, trace, clamp=d).estimate()
        q_dist = sample_route(plant, pruned, rid, Target.INTERARRIVAL, y, trace)
        q_bound = len(q_dist.counts) - 1
        if q_bound < d:
            warnings.warn(f"route {rid}: observed inter-arrival support {q_bound} is below the "
                          f"deadline {d}; padding to {d}", LearningFidelityWarning, stacklevel=2)
            q_bound = d
        out.append(RouteSpec(rid, spec.route_class, p_hat, d, q_dist.estimate(q_bound)))
        log.info("route %d: p_hat=%s q_hat=%s", rid, list(out[-1].p_init), list(out[-1].q_init))
    return out
