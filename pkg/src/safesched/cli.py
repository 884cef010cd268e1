"""Command-line entry point: ``safesched <command> --config FILE [options]``.

Exit status: 0 on success, 2 for usage or configuration errors, 3 when the
system is not schedulable (the pruning report is still written).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .build import build, spec_to_json
from .core import ModelError
from .harness import (SOLVERS, ConfigError, ExperimentConfig, UnschedulableError,
                      bench_scalability, load_config, load_suite, prepare, render, run_trials)
from .learn import Plant, SamplingConfig, estimate_system
from .safety import prune
from .solve import MctsPlanner, NotSchedulableError, edf_action, value_iteration

log = logging.getLogger("safesched")

LOG_ENV = "SAFESCHED_LOG_LEVEL"


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="experiment JSON file")
    common.add_argument("--mode", choices=("pe", "npe"), help="override the config's mode")
    common.add_argument("--solver", choices=SOLVERS, help="override the config's solver")
    common.add_argument("--seed", type=int, help="override the config's 64-bit seed")
    common.add_argument("--out", type=Path, help="output file (default: stdout)")
    common.add_argument("--format", choices=("csv", "json"), default="json")

    p = argparse.ArgumentParser(prog="safesched", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("build", parents=[common], help="enumerate the scheduling MDP")
    sub.add_parser("prune", parents=[common], help="report unsafe states and actions")
    learn = sub.add_parser("learn", parents=[common], help="estimate route distributions by safe sampling")
    learn.add_argument("--trace", type=Path, help="write the sampling trace as CSV")
    sub.add_parser("solve", parents=[common], help="compute a policy on the (learned) model")
    sub.add_parser("simulate", parents=[common], help="run the trial campaign")
    sub.add_parser("bench", parents=[common], help="time value iteration over a suite")
    return p


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    over = {k: getattr(args, k) for k in ("mode", "solver", "seed") if getattr(args, k) is not None}
    return cfg.with_(**over) if over else cfg


def _table(columns: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def _json(doc) -> str:
    return json.dumps(doc, indent=1) + "\n"


def cmd_build(args) -> str:
    cfg = _config(args)
    m = build(cfg.routes, cfg.rewards, cfg.mode)
    log.info("%s MDP: %d states", cfg.mode.value, m.n_states)
    if args.format == "json":
        return m.dumps() + "\n"
    rows = ((s, a, o.next, o.prob, o.reward, o.duration)
            for s, (acts, outs_of) in enumerate(zip(m.actions_of, m.transitions))
            for a, outs in zip(acts, outs_of) for o in outs)
    return _table(("state", "action", "next", "prob", "reward", "duration"), rows)


def _report_text(report: dict, fmt: str) -> str:
    if fmt == "json":
        return _json(report)
    return _table(tuple(report), [tuple(report.values())])


def cmd_prune(args) -> str:
    cfg = _config(args)
    report = prune(build(cfg.routes, cfg.rewards, cfg.mode)).report()
    if not report["schedulable"]:
        raise UnschedulableError(report)
    return _report_text(report, args.format)


def cmd_learn(args) -> str:
    cfg = _config(args)
    truth = prune(build(cfg.routes, cfg.rewards, cfg.mode))
    if not truth.schedulable:
        raise UnschedulableError(truth.report())
    sampling = cfg.sampling if isinstance(cfg.sampling, SamplingConfig) else SamplingConfig()
    learn_seq = np.random.SeedSequence(cfg.seed).spawn(2)[0]
    plant = Plant(cfg.routes, cfg.rewards, np.random.default_rng(learn_seq))
    trace_rows: list[tuple] = []
    run = [0]

    def trace(step, state_hash, action, obs):
        if step == 1:
            run[0] += 1
        trace_rows.append((run[0], step, state_hash, action, " ".join(map(str, obs.completed)),
                           " ".join(map(str, obs.arrived)), obs.reward))

    specs = estimate_system(plant, truth, sampling, trace if args.trace else None)
    if args.trace:
        args.trace.write_text(_table(("run", "step", "state_hash", "action", "completed",
                                      "arrived", "reward"), trace_rows))
    routes = [spec_to_json(s) for s in specs]
    if args.format == "json":
        return _json({"samples": sampling.y, "routes": routes})
    rows = ((i + 1, r["class"], r["deadline"], " ".join(map(repr, r["completion"])),
             " ".join(map(repr, r["interarrival"]))) for i, r in enumerate(routes))
    return _table(("route", "class", "deadline", "completion", "interarrival"), rows)


def cmd_solve(args) -> str:
    cfg = _config(args)
    pm = prepare(cfg).model
    values = None
    if cfg.solver == "vi":
        values, table = value_iteration(pm, cfg.discount, cfg.tol)
        policy = {s: table[s] for s in range(pm.base.n_states) if pm.is_safe(s)}
    elif cfg.solver == "edf":
        policy = {s: edf_action(pm.base.states[s], pm.safe_actions_of[s], pm.base.specs)
                  for s in range(pm.base.n_states) if pm.is_safe(s)}
    else:
        planner = MctsPlanner(pm, cfg.mcts_config(cfg.seed))
        policy = {s: planner.action(s) for s in range(pm.base.n_states) if pm.is_safe(s)}
    if args.format == "json":
        doc = {"mode": cfg.mode.value, "solver": cfg.solver,
               "policy": {str(s): a for s, a in policy.items()}}
        if values is not None:
            doc["values"] = {str(s): values[s] for s in policy}
            doc["iterations"] = values.iterations
        return _json(doc)
    if values is None:
        return _table(("state", "action"), policy.items())
    return _table(("state", "action", "value"), ((s, a, values[s]) for s, a in policy.items()))


def cmd_simulate(args) -> str:
    cfg = _config(args)
    series = run_trials(cfg)
    log.info("%s/%s: final mean cost %.3f over %d trials, %d terminal entries",
             cfg.mode.value, cfg.solver, series.final_mean, cfg.trials, series.terminal_entries)
    return render(series, args.format)


def cmd_bench(args) -> str:
    # every suite entry is timed in both modes, so --mode/--solver do not apply
    return render(bench_scalability(load_suite(args.config)), args.format)


COMMANDS = {"build": cmd_build, "prune": cmd_prune, "learn": cmd_learn, "solve": cmd_solve,
            "simulate": cmd_simulate, "bench": cmd_bench}


def main(argv: Optional[Sequence[str]] = None) -> int:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    args = _parser().parse_args(argv)
    status = 0
    try:
        text = COMMANDS[args.command](args)
    except UnschedulableError as e:
        print(f"safesched: {e}", file=sys.stderr)
        text = _report_text(e.report, args.format)
        status = 3
    except NotSchedulableError as e:
        print(f"safesched: {e}", file=sys.stderr)
        return 3
    except (ConfigError, ModelError, FileNotFoundError) as e:
        print(f"safesched: {e}", file=sys.stderr)
        return 2
    if args.out:
        args.out.write_text(text)
    else:
        sys.stdout.write(text)
    return status


if __name__ == "__main__":
    sys.exit(main())
