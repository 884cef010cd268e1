import json

import numpy as np
import pytest

from conftest import CONFIGS
from safesched.core import Mode, ProbVec
from safesched.harness import (BenchRow, ConfigError, ExperimentConfig, TrialSeries,
                               UnschedulableError, bench_scalability, config_from_dict,
                               config_to_dict, emit, load_bench_rows, load_config, load_suite,
                               prepare, render, run_trials)


def _doc(**over):
    doc = json.loads((CONFIGS / "baseline.json").read_text())
    doc.update(over)
    return doc


def test_baseline_config_routes():
    cfg = load_config(CONFIGS / "baseline.json")
    hard, soft = cfg.routes
    assert hard.is_hard and not soft.is_hard
    assert (hard.p_init, hard.d_init, hard.q_init) == (ProbVec.point(3, 3), 7, ProbVec.point(8, 8))
    assert (soft.p_init, soft.d_init, soft.q_init) == (ProbVec.point(2, 2), 3, ProbVec.point(4, 4))


@pytest.mark.parametrize("patch, field", [
    (lambda d: d["routes"][0].update(deadline=0), r"routes\[0\].*deadline"),
    (lambda d: d["routes"][1].update(deadline=1), r"routes\[1\].*K <= D <= M"),
    (lambda d: d["routes"][0].pop("completion"), r"routes\[0\].*'completion'"),
    (lambda d: d["routes"][0].update(completion=[0.5, 0.5, 0, 0]), r"routes\[0\].*0 steps"),
    (lambda d: d.update(rewards={"j_soft": -10, "j_hard": -1}), "rewards"),
    (lambda d: d.update(solver="greedy"), "solver"),
    (lambda d: d.update(report_stride=7), "report_stride"),
    (lambda d: d.update(sampling="guess"), "sampling"),
    (lambda d: d.update(sampling={"samples": 0}), "sampling"),
    (lambda d: d.update(mcts={"width": 3}), "mcts.width"),
    (lambda d: d.update(colour="red"), "unknown"),
])
def test_config_errors_name_the_field(patch, field):
    doc = _doc()
    patch(doc)
    with pytest.raises(ConfigError, match=field):
        config_from_dict(doc)


def test_malformed_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{ routes: ")
    with pytest.raises(ConfigError, match="malformed"):
        load_config(p)


def test_config_dict_roundtrip():
    cfg = load_config(CONFIGS / "hard_soft.json")
    assert config_from_dict(json.loads(json.dumps(config_to_dict(cfg)))) == cfg


def test_suite_loads_all_tables():
    labels = [c.label for c in load_suite(CONFIGS / "tables.json")]
    assert len(labels) == 9 and labels[0].startswith("T1") and labels[-1].startswith("T3")


def test_single_soft_route_edf_costs_nothing():
    doc = _doc(routes=[_doc()["routes"][1]], solver="edf", trials=100, report_stride=10)
    series = run_trials(config_from_dict(doc))
    assert (series.trial_costs == 0).all()
    assert [m for _, m in series.rows] == [0.0] * 10
    assert series.guard_hits == 0 and series.terminal_entries == 0


@pytest.mark.parametrize("solver", ["vi", "edf", "mcts-edf", "mcts-random"])
@pytest.mark.parametrize("mode", ["pe", "npe"])
def test_trials_are_safe_and_well_formed(solver, mode):
    cfg = load_config(CONFIGS / "hard_soft.json").with_(solver=solver, mode=mode, trials=20,
                                                   report_stride=10)
    s = run_trials(cfg)
    assert s.terminal_entries == 0 and s.guard_hits == 0
    assert s.traversals == 200
    assert (s.trial_costs <= 0).all()
    assert [t for t, _ in s.rows] == [10, 20]
    assert s.rows[-1][1] == pytest.approx(s.trial_costs.mean())


def test_identical_seed_identical_bytes():
    cfg = load_config(CONFIGS / "hard_soft.json").with_(solver="mcts-edf", trials=20, report_stride=5)
    assert render(run_trials(cfg)) == render(run_trials(cfg))
    assert render(run_trials(cfg)) != render(run_trials(cfg.with_(seed=cfg.seed + 1)))


def test_learned_pipeline_uses_estimates():
    cfg = load_config(CONFIGS / "hard_soft.json")
    pipe = prepare(cfg)
    assert pipe.learned_specs != cfg.routes
    assert pipe.learned_specs[1] == cfg.routes[1]
    assert pipe.model.schedulable


def test_unschedulable_reports():
    doc = _doc()
    twin = {"class": "hard", "completion": [0, 0, 0, 1], "deadline": 3,
            "interarrival": [0] * 8 + [1]}
    doc["routes"] = [twin, twin]
    with pytest.raises(UnschedulableError) as e:
        run_trials(config_from_dict(doc))
    assert e.value.report["schedulable"] is False


def test_series_csv_layout():
    s = TrialSeries([(50, -46.5), (100, -46.25)])
    assert render(s) == "trial,mean_cost\n50,-46.5\n100,-46.25\n"
    assert json.loads(render(s, "json"))[-1] == {"trial": 100, "mean_cost": -46.25}


def test_empty_series_is_header_only(tmp_path):
    p = tmp_path / "s.csv"
    emit(TrialSeries([]), "csv", p)
    assert p.read_text() == "trial,mean_cost\n"


def test_bench_rows_roundtrip(tmp_path):
    rows = [BenchRow("T1:1H&1S", "pe", 47, 0.00123, 46, 3, "T1"),
            BenchRow("T1:1H&1S", "npe", 0, float("nan"), group="T1", error="boom")]
    p = tmp_path / "b.json"
    emit(rows, "json", p)
    back = load_bench_rows(p)
    assert back[0] == rows[0]
    assert back[1].error == "boom" and np.isnan(back[1].seconds)
    assert render(rows).splitlines()[0] == "label,mode,states,seconds"


def test_bench_counts_and_row_errors():
    suite = load_suite(CONFIGS / "tables.json")[:2]
    rows = bench_scalability(suite, min_time=0.0, repeats=1)
    assert [(r.label, r.mode, r.states) for r in rows] == [
        ("T1:1H&1S", "pe", 47), ("T1:1H&1S", "npe", 18),
        ("T1:1H&2S", "pe", 82), ("T1:1H&2S", "npe", 23)]
    assert all(r.seconds > 0 and not r.error for r in rows)
    bad = bench_scalability(suite[:1], discount=2.0, min_time=0.0, repeats=1)
    assert all(r.error.startswith("ValueError") for r in bad)
