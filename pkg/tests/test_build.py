import json
from collections import defaultdict

import pytest

from conftest import CONFIGS, route
from oracles import RefSystem, TERM, ref_routes, to_ref_state
from strategies import desk_family
from safesched.build import (ExplicitMdp, StateClass, StateExplosion, build, classify_state,
                             macro_successors)
from safesched.core import (TERMINAL, Mode, ProbVec, RewardParams, TransitionModel,
                            initial_state)
from safesched.harness import load_suite

TABLE_COUNTS = {
    "T1:1H&1S": (47, 18), "T1:1H&2S": (82, 23), "T1:1H&3S": (131, 28),
    "T2:delay{3}": (47, 18), "T2:delay{3,4}": (54, 18), "T2:delay{1,2,3,4}": (59, 21),
    "T3:demand{8}": (47, 18), "T3:demand{8,9}": (201, 75), "T3:demand{8,9,10,11}": (219, 87),
}


def test_baseline_counts(baseline_specs, params):
    assert build(baseline_specs, params, Mode.PREEMPTIBLE).n_states == 47
    assert build(baseline_specs, params, Mode.NONPREEMPTIBLE).n_states == 18


@pytest.mark.parametrize("cfg", load_suite(CONFIGS / "tables.json"), ids=lambda c: c.label)
def test_table_counts(cfg):
    pe, npe = TABLE_COUNTS[cfg.label]
    assert build(cfg.routes, cfg.rewards, Mode.PREEMPTIBLE).n_states == pe
    assert build(cfg.routes, cfg.rewards, Mode.NONPREEMPTIBLE).n_states == npe


def test_counts_include_the_terminal_state(baseline_specs):
    m = build(baseline_specs)
    assert m.terminal_index is not None
    assert m.n_nonterminal == 46


def test_single_soft_route_matches_census():
    specs = (route(1, "soft", {2: 1}, 3, {4: 1}),)
    m = build(specs)
    ref = RefSystem(ref_routes(specs))
    assert {to_ref_state(s) for s in m.states} == ref.reachable()


@pytest.mark.parametrize("specs", desk_family(count=12), ids=lambda s: f"{len(s)}routes")
@pytest.mark.parametrize("mode", list(Mode))
def test_state_set_matches_reachability_oracle(specs, mode):
    m = build(specs, mode=mode)
    ref = RefSystem(ref_routes(specs), npe=mode is Mode.NONPREEMPTIBLE)
    ours = [to_ref_state(s) for s in m.states]
    assert len(set(ours)) == len(ours)
    assert set(ours) == ref.reachable()


def test_initial_state_is_unrestricted(hs_specs):
    assert classify_state(initial_state(hs_specs)) is StateClass.UNRESTRICTED


def test_started_request_is_restricted(hs_specs):
    model = TransitionModel(hs_specs, mode=Mode.NONPREEMPTIBLE)
    (s2,) = [o.next for o in model.step(model.initial(), 1)]
    assert s2.in_progress == 1
    assert classify_state(s2) is StateClass.RESTRICTED
    done = s2._replace(requests=(s2.requests[0]._replace(p=ProbVec.point(0, 4)),) + s2.requests[1:])
    assert classify_state(done) is StateClass.UNRESTRICTED


def test_nonpreemptive_mdp_stores_only_unrestricted_states(hs_npe):
    m = hs_npe.base
    assert all(classify_state(s) is StateClass.UNRESTRICTED for s in m.states if not s.terminal)


def test_macro_collapses_the_forced_chain(hs_specs):
    model = TransitionModel(hs_specs, mode=Mode.NONPREEMPTIBLE)
    outs = sorted(macro_successors(model.initial(), 1, model), key=lambda o: o.duration)
    assert [(o.prob, o.reward, o.duration) for o in outs] == [(0.5, -10.0, 3), (0.5, -10.0, 4)]
    assert all(o.next.in_progress is None and o.next.requests[0].completed for o in outs)


def test_macro_of_one_step_completion_equals_step(params):
    specs = (route(1, "hard", {1: 1}, 2, {3: 1}), route(2, "soft", {1: 1}, 2, {2: 1}))
    model = TransitionModel(specs, params, Mode.NONPREEMPTIBLE)
    s = model.initial()
    macro = macro_successors(s, 1, model)
    assert [(o.next, o.prob, o.reward, o.duration) for o in macro] == \
           [(o.next, o.prob, o.reward, 1) for o in model.step(s, 1)]


def test_deterministic_hard_macro_matches_three_concrete_steps(baseline_specs, params):
    npe = TransitionModel(baseline_specs, params, Mode.NONPREEMPTIBLE)
    (macro,) = macro_successors(npe.initial(), 1, npe)
    s, reward = npe.initial(), 0.0
    for _ in range(3):
        (o,) = npe.step(s, 1)
        s, reward = o.next, reward + o.reward
    assert (macro.prob, macro.duration) == (1.0, 3)
    assert macro.next == s and macro.reward == reward == params.j_soft


def test_macro_rejected_in_preemptive_mode(hs_specs):
    with pytest.raises(ValueError):
        macro_successors(initial_state(hs_specs), 1, TransitionModel(hs_specs))


def _unroll(ref, s, a):
    """Every concrete path of the forced chain: (final, prob, reward, length)."""
    paths = []
    stack = [(t, p, r, 1) for t, p, r in ref.step(s, a)]
    while stack:
        t, p, r, k = stack.pop()
        if t != TERM and t[1] is not None:
            stack.extend((t2, p * p2, r + r2, k + 1) for t2, p2, r2 in ref.step(t, t[1]))
        else:
            paths.append((t, p, r, k))
    return paths


@pytest.mark.parametrize("specs", desk_family(count=12), ids=lambda s: f"{len(s)}routes")
def test_macro_rows_roundtrip_through_concrete_paths(specs):
    m = build(specs, mode=Mode.NONPREEMPTIBLE)
    ref = RefSystem(ref_routes(specs), npe=True)
    for i, s in enumerate(m.states):
        for a in m.actions_of[i]:
            collapsed = defaultdict(float)
            for t, p, r, k in _unroll(ref, to_ref_state(s), a):
                collapsed[t, round(r, 9), k] += p
            stored = defaultdict(float)
            for o in m.outcomes(i, a):
                stored[to_ref_state(m.states[o.next]), round(o.reward, 9), o.duration] += o.prob
            assert stored.keys() == collapsed.keys()
            for key, p in stored.items():
                assert p == pytest.approx(collapsed[key], abs=1e-12)


def test_rows_are_distributions(hs_pe, hs_npe):
    for pm in (hs_pe, hs_npe):
        m = pm.base
        for rows in m.transitions:
            for outs in rows:
                assert sum(o.prob for o in outs) == pytest.approx(1.0, abs=1e-9)


def test_state_cap(hs_specs):
    with pytest.raises(StateExplosion, match="cap"):
        build(hs_specs, max_states=10)


@pytest.mark.parametrize("mode", list(Mode))
def test_json_roundtrip(hs_specs, mode):
    m = build(hs_specs, mode=mode)
    back = ExplicitMdp.from_json(json.loads(m.dumps()))
    assert back.states == m.states
    assert back.actions_of == m.actions_of
    assert back.transitions == m.transitions
    assert back.specs == m.specs and back.params == m.params and back.mode is m.mode
    assert back.states[m.terminal_index] == TERMINAL


def test_build_is_deterministic(hs_specs):
    assert build(hs_specs).dumps() == build(hs_specs).dumps()


def test_arrays_mirror_transitions(hs_npe):
    m = hs_npe.base
    arr = m.arrays
    assert arr.state_ptr[-1] == len(arr.row_action) == sum(len(a) for a in m.actions_of)
    r = arr.state_ptr[0]
    outs = m.outcomes(0, int(arr.row_action[r]))
    lo, hi = arr.row_ptr[r], arr.row_ptr[r + 1]
    assert list(arr.out_next[lo:hi]) == [o.next for o in outs]
    assert list(arr.out_duration[lo:hi]) == [o.duration for o in outs]
