"""Domain types and the one-step transition semantics of the scheduling MDP.

Actions are plain integers: ``0`` is idle and ``i`` (1-based) works on the
request of route ``i``. Distributions are :class:`ProbVec` tuples indexed by
integer time, so states hash and compare by value.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Optional, Sequence

IDLE = 0
PROB_TOL = 1e-9
_DECIMALS = 12


class ModelError(ValueError):
    """A distribution, route, or action violates the model's invariants."""


class SemanticsError(RuntimeError):
    """An internal transition rule was applied outside its precondition."""


class Mode(str, enum.Enum):
    PREEMPTIBLE = "pe"
    NONPREEMPTIBLE = "npe"

    @classmethod
    def parse(cls, value: "Mode | str") -> "Mode":
        if isinstance(value, Mode):
            return value
        aliases = {"pe": cls.PREEMPTIBLE, "preemptible": cls.PREEMPTIBLE,
                   "npe": cls.NONPREEMPTIBLE, "nonpreemptible": cls.NONPREEMPTIBLE,
                   "non-preemptible": cls.NONPREEMPTIBLE}
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise ValueError(f"unknown mode {value!r}; expected pe or npe") from None


class RouteClass(str, enum.Enum):
    HARD = "hard"
    SOFT = "soft"


def _canon(x: float) -> float:
    # + 0.0 folds -0.0 into 0.0 so equal vectors hash equally
    return round(float(x), _DECIMALS) + 0.0


class ProbVec(tuple):
    """Finite discrete distribution over the integer times ``0..bound``."""

    __slots__ = ()

    def __new__(cls, mass: Sequence[float]) -> "ProbVec":
        values = tuple(_canon(x) for x in mass)
        if len(values) < 2:
            raise ModelError(f"support bound must be >= 1, got vector of length {len(values)}")
        for i, x in enumerate(values):
            if not 0.0 <= x <= 1.0:
                raise ModelError(f"entry {i} = {x} is not a probability")
        total = sum(values)
        if abs(total - 1.0) > PROB_TOL:
            raise ModelError(f"entries sum to {total!r}, not 1")
        return tuple.__new__(cls, values)

    @classmethod
    def _trusted(cls, values) -> "ProbVec":
        return tuple.__new__(cls, (_canon(x) for x in values))

    @classmethod
    def point(cls, value: int, bound: int) -> "ProbVec":
        """All mass on ``value``, over support ``0..bound``."""
        if not 0 <= value <= bound:
            raise ModelError(f"point mass at {value} outside 0..{bound}")
        mass = [0.0] * (bound + 1)
        mass[value] = 1.0
        return cls(mass)

    @classmethod
    def from_mapping(cls, mass: dict[int, float], bound: int) -> "ProbVec":
        vec = [0.0] * (bound + 1)
        for k, v in mass.items():
            vec[k] = v
        return cls(vec)

    @property
    def bound(self) -> int:
        return len(self) - 1

    @property
    def completed(self) -> bool:
        return self[0] == 1.0

    def support(self) -> tuple[int, ...]:
        return tuple(i for i, x in enumerate(self) if x > 0.0)

    def __repr__(self) -> str:
        return f"ProbVec({list(self)})"


def shift_decrement(v: ProbVec) -> ProbVec:
    """Advance a distribution by one step when no event can occur.

    Raises :class:`SemanticsError` if index 0 or 1 carries mass, since the
    shift would then drop or misplace event probability.
    """
    if v[0] != 0.0 or v[1] != 0.0:
        raise SemanticsError(f"shift would drop event mass off index 0: {list(v)}")
    return ProbVec._trusted(v[1:] + (0.0,))


def condition_nonevent(v: ProbVec) -> tuple[ProbVec, float]:
    """Split off the one-step event and return the non-event successor.

    The event probability ``v[1]`` is spread uniformly over the remaining
    nonzero entries of the shifted vector.
    """
    event = v[1]
    if event == 0.0:
        raise SemanticsError("no event possible: v[1] == 0")
    nonzero = sum(1 for x in v if x > 0.0)
    if nonzero < 2:
        raise SemanticsError("event certain; no non-event branch")
    shifted = list(v[1:]) + [0.0]
    shifted[0] = 0.0
    rest = [i for i, x in enumerate(shifted) if x > 0.0]
    if not rest:
        raise SemanticsError(f"no mass left after conditioning {list(v)}")
    add = event / len(rest)
    for i in rest:
        shifted[i] += add
    # renormalize so rounding drift never turns a lone survivor into 1 - 1e-12
    total = sum(shifted)
    return ProbVec._trusted([x / total for x in shifted]), event


def _event_branches(v: ProbVec):
    """(probability, event happens, successor vector if it does not)."""
    e = v[1]
    if e == 0.0:
        return ((1.0, False, shift_decrement(v)),)
    if e == 1.0:
        return ((1.0, True, None),)
    nonevent, _ = condition_nonevent(v)
    return ((e, True, None), (1.0 - e, False, nonevent))


@dataclass(frozen=True)
class RouteSpec:
    route_id: int
    route_class: RouteClass
    p_init: ProbVec
    d_init: int
    q_init: ProbVec

    def __post_init__(self):
        object.__setattr__(self, "route_class", RouteClass(self.route_class))
        object.__setattr__(self, "p_init", ProbVec(self.p_init))
        object.__setattr__(self, "q_init", ProbVec(self.q_init))
        where = f"route {self.route_id}"
        if self.route_id < 1:
            raise ModelError(f"{where}: route_id must be >= 1")
        if not isinstance(self.d_init, int) or self.d_init <= 0:
            raise ModelError(f"{where}: deadline must be a positive integer, got {self.d_init!r}")
        if self.p_init[0] != 0.0:
            raise ModelError(f"{where}: completion distribution puts mass on 0 steps")
        if self.q_init[0] != 0.0:
            raise ModelError(f"{where}: inter-arrival distribution puts mass on 0 steps")
        k, m = self.p_init.bound, self.q_init.bound
        if not k <= self.d_init <= m:
            raise ModelError(f"{where}: need K <= D <= M, got K={k}, D={self.d_init}, M={m}")

    @property
    def is_hard(self) -> bool:
        return self.route_class is RouteClass.HARD

    def initial_request(self) -> "RequestState":
        return RequestState(self.p_init, self.d_init, self.q_init)


class RequestState(NamedTuple):
    p: ProbVec
    deadline: int
    q: ProbVec

    @property
    def completed(self) -> bool:
        return self.p[0] == 1.0


class SystemState(NamedTuple):
    requests: tuple[RequestState, ...]
    terminal: bool = False
    in_progress: Optional[int] = None


TERMINAL = SystemState((), True, None)


def initial_state(specs: Sequence[RouteSpec]) -> SystemState:
    return SystemState(tuple(s.initial_request() for s in specs))


@dataclass(frozen=True)
class RewardParams:
    j_soft: float = -10.0
    j_hard: float = -10000.0

    def __post_init__(self):
        if not self.j_hard < self.j_soft < 0:
            raise ModelError(f"need j_hard < j_soft < 0, got j_hard={self.j_hard}, j_soft={self.j_soft}")

    def scaled(self, factor: float) -> "RewardParams":
        return RewardParams(self.j_soft * factor, self.j_hard * factor)


class TransitionOutcome(NamedTuple):
    next: SystemState
    prob: float
    reward: float
    duration: int = 1
    # route ids whose request completed / was replaced on this step
    completed: tuple[int, ...] = ()
    arrived: tuple[int, ...] = ()


def action_label(a: int) -> str:
    return "idle" if a == IDLE else f"work({a})"


def enabled_actions(s: SystemState, mode: Mode | str = Mode.PREEMPTIBLE,
                    n_routes: Optional[int] = None) -> tuple[int, ...]:
    """Actions available in ``s``, in canonical order (idle first)."""
    mode = Mode.parse(mode)
    n = len(s.requests) if n_routes is None else n_routes
    if (mode is Mode.NONPREEMPTIBLE and not s.terminal and s.in_progress is not None
            and not s.requests[s.in_progress - 1].completed):
        return (s.in_progress,)
    return tuple(range(n + 1))


def _check_action(a: int, n_routes: int) -> None:
    if not isinstance(a, (int,)) or not 0 <= a <= n_routes:
        raise ModelError(f"malformed action {a!r} for {n_routes} routes")


def successors(s: SystemState, a: int, params: RewardParams, specs: Sequence[RouteSpec],
               mode: Mode | str = Mode.PREEMPTIBLE) -> list[TransitionOutcome]:
    """All one-step outcomes of taking action ``a`` in state ``s``.

    Completion of the worked request and each route's arrival are independent
    events; outcomes are the product of their branches. A replacement
    overrides the worked request's progress. An incomplete hard request whose
    deadline elapses sends the system to ``TERMINAL`` (charged once).
    """
    mode = Mode.parse(mode)
    n = len(specs)
    _check_action(a, n)
    if s.terminal:
        return [TransitionOutcome(TERMINAL, 1.0, 0.0)]
    reqs = s.requests
    if len(reqs) != n:
        raise ModelError(f"state has {len(reqs)} requests but {n} routes are specified")
    for spec, r in zip(specs, reqs):
        if spec.is_hard and r.deadline == 0 and not r.completed:
            return [TransitionOutcome(TERMINAL, 1.0, params.j_hard)]

    worked = a - 1 if a != IDLE and not reqs[a - 1].completed else None
    if worked is None:
        work_branches = ((1.0, False, None),)
    else:
        work_branches = _event_branches(reqs[worked].p)
    arrival_branches = [_event_branches(r.q) for r in reqs]

    out: list[TransitionOutcome] = []
    term_prob = 0.0
    for wprob, wdone, wvec in work_branches:
        for combo in itertools.product(*arrival_branches):
            prob = wprob
            missed = 0
            term = False
            lock = None
            new = []
            arrived = []
            for i, (spec, r, (aprob, arrives, qnext)) in enumerate(zip(specs, reqs, combo)):
                prob *= aprob
                p = r.p
                if i == worked:
                    p = ProbVec.point(0, p.bound) if wdone else wvec
                if r.deadline == 1 and p[0] != 1.0:
                    if spec.is_hard:
                        term = True
                    else:
                        missed += 1
                if arrives:
                    new.append(spec.initial_request())
                    arrived.append(i + 1)
                else:
                    new.append(RequestState(p, r.deadline - 1 if r.deadline > 0 else 0, qnext))
                    if mode is Mode.NONPREEMPTIBLE and i == worked and not wdone:
                        lock = i + 1
            if term:
                term_prob += prob
                continue
            completed = (worked + 1,) if (worked is not None and wdone) else ()
            out.append(TransitionOutcome(SystemState(tuple(new), False, lock), prob,
                                         missed * params.j_soft, 1, completed, tuple(arrived)))
    if term_prob > 0.0:
        out.append(TransitionOutcome(TERMINAL, term_prob, params.j_hard))
    return out


class TransitionModel:
    """Specs, rewards and mode bundled with a memoized transition function."""

    def __init__(self, specs: Sequence[RouteSpec], params: RewardParams | None = None,
                 mode: Mode | str = Mode.PREEMPTIBLE, cache_size: int | None = 1 << 16):
        if not specs:
            raise ModelError("at least one route is required")
        ids = [s.route_id for s in specs]
        if ids != list(range(1, len(specs) + 1)):
            raise ModelError(f"route ids must be 1..W in order, got {ids}")
        self.specs = tuple(specs)
        self.params = params or RewardParams()
        self.mode = Mode.parse(mode)
        self.step = lru_cache(maxsize=cache_size)(self._step)

    @property
    def n_routes(self) -> int:
        return len(self.specs)

    def initial(self) -> SystemState:
        return initial_state(self.specs)

    def enabled(self, s: SystemState) -> tuple[int, ...]:
        return enabled_actions(s, self.mode, self.n_routes)

    def _step(self, s: SystemState, a: int) -> tuple[TransitionOutcome, ...]:
        return tuple(successors(s, a, self.params, self.specs, self.mode))
