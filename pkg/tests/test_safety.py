import json

import numpy as np
import pytest

from conftest import route
from oracles import RefSystem, all_sequences_fail, ref_routes
from safesched import build, prune, safe_actions
from safesched.core import IDLE, TERMINAL, Mode, RewardParams, TransitionModel
from safesched.safety import UnsafeStateError


def _walk_idle(specs, steps):
    model = TransitionModel(specs)
    s = model.initial()
    for _ in range(steps):
        (o,) = model.step(s, IDLE)
        s = o.next
    return s


def _doomed(m):
    """States whose every action reaches the terminal state with probability 1."""
    t = m.terminal_index
    return [i for i, rows in enumerate(m.transitions) if i != t
            and all(all(o.next == t for o in outs) for outs in rows)]


def test_doomed_states_lose_every_action(hs_pe):
    doomed = _doomed(hs_pe.base)
    assert doomed
    for i in doomed:
        assert i in hs_pe.pruned_states
        with pytest.raises(UnsafeStateError):
            safe_actions(hs_pe, i)


def test_only_work_on_the_hard_request_survives_when_slack_is_gone(hs_pe):
    # three idle steps leave the hard request 4 steps of deadline for up to 4 steps of work
    s11 = _walk_idle(hs_pe.base.specs, 3)
    i = hs_pe.base.index[s11]
    assert hs_pe.base.actions_of[i] == (IDLE, 1, 2)
    assert safe_actions(hs_pe, i) == (1,)


def test_one_more_idle_step_is_fatal(hs_pe):
    s = _walk_idle(hs_pe.base.specs, 4)
    assert hs_pe.base.index[s] in hs_pe.pruned_states


def test_terminal_state_is_pruned(hs_pe):
    with pytest.raises(UnsafeStateError):
        safe_actions(hs_pe, hs_pe.base.terminal_index)


def test_fully_safe_state_keeps_everything(hs_pe):
    assert hs_pe.schedulable
    assert safe_actions(hs_pe, 0) == (IDLE, 1, 2)


def test_no_terminal_reachable_is_identity():
    specs = (route(1, "soft", {2: 1}, 3, {4: 1}),)
    pm = prune(build(specs))
    assert pm.base.terminal_index is None
    assert not pm.pruned_states and pm.row_safe.all()
    assert pm.safe_actions_of == list(pm.base.actions_of)


@pytest.fixture
def twin_hard():
    r = dict(completion={3: 1}, deadline=3, interarrival={8: 1})
    return (route(1, "hard", **r), route(2, "hard", **r))


@pytest.mark.parametrize("mode", list(Mode))
def test_twin_hard_routes_are_unschedulable(twin_hard, mode):
    pm = prune(build(twin_hard, mode=mode))
    assert not pm.schedulable
    assert pm.report()["schedulable"] is False
    with pytest.raises(UnsafeStateError):
        pm.restrict()


def test_twin_hard_routes_fail_under_every_action_sequence(twin_hard):
    assert all_sequences_fail(RefSystem(ref_routes(twin_hard)), 3)


@pytest.mark.parametrize("mode", list(Mode))
def test_prune_is_idempotent(hs_specs, mode):
    pm = prune(build(hs_specs, mode=mode))
    again = prune(pm.restrict())
    assert not again.pruned_states
    assert again.row_safe.all()
    assert again.base.n_states == pm.n_safe_states
    keep = [i for i in range(pm.base.n_states) if pm.is_safe(i)]
    assert [again.base.states[j] for j in range(again.base.n_states)] == [pm.base.states[i] for i in keep]
    assert again.safe_actions_of == [pm.safe_actions_of[i] for i in keep]


def test_safe_rows_never_reach_pruned_states(hs_pe, hs_npe):
    for pm in (hs_pe, hs_npe):
        arr = pm.base.arrays
        for r in np.flatnonzero(pm.row_safe):
            targets = arr.out_next[arr.row_ptr[r]:arr.row_ptr[r + 1]]
            assert all(pm.is_safe(int(t)) for t in targets)


def test_every_safe_state_keeps_an_action(hs_pe, hs_npe):
    for pm in (hs_pe, hs_npe):
        for i in range(pm.base.n_states):
            assert pm.is_safe(i) == bool(pm.safe_actions_of[i])


def test_rewards_do_not_affect_pruning(hs_specs):
    a = prune(build(hs_specs, RewardParams(-10, -10000)))
    b = prune(build(hs_specs, RewardParams(-1, -2)))
    assert a.pruned_states == b.pruned_states
    assert a.safe_actions_of == b.safe_actions_of


def test_report_is_json(hs_pe):
    doc = json.loads(json.dumps(hs_pe.report()))
    assert doc["schedulable"] is True
    assert doc["states_total"] == hs_pe.base.n_states
    assert 0 < doc["states_pruned"] < doc["states_total"]
    assert doc["actions_pruned"] == int((~hs_pe.row_safe).sum())


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_random_safe_walk_never_reaches_terminal(hs_pe, seed):
    rng = np.random.default_rng(seed)
    m = hs_pe.base
    s = 0
    for _ in range(20_000):
        a = rng.choice(safe_actions(hs_pe, s))
        outs = m.outcomes(s, int(a))
        o = outs[rng.choice(len(outs), p=[x.prob for x in outs])]
        assert m.states[o.next] != TERMINAL
        s = o.next
