"""Backward-reachability pruning of every state/action that can reach the terminal state."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .build import ExplicitMdp, Outcome
from .core import SystemState


class UnsafeStateError(KeyError):
    pass


@dataclass(eq=False)
class PrunedMdp:
    base: ExplicitMdp
    safe_actions_of: list[tuple[int, ...]]
    pruned_states: frozenset[int]
    row_safe: np.ndarray
    schedulable: bool

    @property
    def n_safe_states(self) -> int:
        return self.base.n_states - len(self.pruned_states)

    def is_safe(self, s: int) -> bool:
        return s not in self.pruned_states

    def report(self) -> dict:
        n_rows = len(self.row_safe)
        return {
            "schedulable": self.schedulable,
            "mode": self.base.mode.value,
            "states_total": self.base.n_states,
            "states_pruned": len(self.pruned_states),
            "actions_total": n_rows,
            "actions_pruned": int(n_rows - self.row_safe.sum()),
        }

    @cached_property
    def state_mask(self) -> np.ndarray:
        mask = np.ones(self.base.n_states, dtype=bool)
        mask[list(self.pruned_states)] = False
        return mask

    def restrict(self) -> ExplicitMdp:
        """The safe sub-MDP as a standalone, re-indexed ExplicitMdp."""
        if not self.schedulable:
            raise UnsafeStateError("initial state is pruned; no safe sub-MDP")
        keep = [i for i in range(self.base.n_states) if i not in self.pruned_states]
        remap = {old: new for new, old in enumerate(keep)}
        states: list[SystemState] = [self.base.states[i] for i in keep]
        actions_of, transitions = [], []
        for i in keep:
            acts, rows = [], []
            for a, outs in zip(self.base.actions_of[i], self.base.transitions[i]):
                if a in self.safe_actions_of[i]:
                    acts.append(a)
                    rows.append(tuple(Outcome(remap[o.next], o.prob, o.reward, o.duration)
                                      for o in outs))
            actions_of.append(tuple(acts))
            transitions.append(tuple(rows))
        b = self.base
        return ExplicitMdp(states, actions_of, transitions, b.mode, b.specs, b.params)


def prune(m: ExplicitMdp) -> PrunedMdp:
    """Remove, to a fixpoint, actions with positive probability of reaching a
    pruned state and states left with no actions. The terminal state seeds the
    pruned set. Rewards play no part."""
    arr = m.arrays
    n_rows = len(arr.row_action)
    out_row = np.repeat(np.arange(n_rows), np.diff(arr.row_ptr))
    positive = arr.out_prob > 0.0
    # reverse index: for each target state, the rows that can reach it
    order = np.argsort(arr.out_next[positive], kind="stable")
    rev_rows = out_row[positive][order]
    rev_ptr = np.searchsorted(arr.out_next[positive][order], np.arange(m.n_states + 1))

    row_safe = np.ones(n_rows, dtype=bool)
    alive = np.diff(arr.state_ptr).astype(np.int64)
    pruned = np.zeros(m.n_states, dtype=bool)
    work = []
    t = m.terminal_index
    if t is not None:
        pruned[t] = True
        work.append(t)
    while work:
        target = work.pop()
        for r in rev_rows[rev_ptr[target]:rev_ptr[target + 1]]:
            if not row_safe[r]:
                continue
            row_safe[r] = False
            s = arr.row_state[r]
            alive[s] -= 1
            if alive[s] == 0 and not pruned[s]:
                pruned[s] = True
                work.append(s)
    # a pruned state's remaining rows are unusable too
    row_safe &= ~pruned[arr.row_state]
    safe_actions_of = [
        tuple(int(a) for a, ok in zip(arr.row_action[lo:hi], row_safe[lo:hi]) if ok)
        for lo, hi in zip(arr.state_ptr[:-1], arr.state_ptr[1:])
    ]
    pruned_set = frozenset(int(i) for i in np.flatnonzero(pruned))
    return PrunedMdp(m, safe_actions_of, pruned_set, row_safe, 0 not in pruned_set)


def safe_actions(pm: PrunedMdp, s: int) -> tuple[int, ...]:
    if s in pm.pruned_states:
        raise UnsafeStateError(f"state {s} is unsafe (pruned)")
    return pm.safe_actions_of[s]
