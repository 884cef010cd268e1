"""Time the hot kernels under numba and under the pure-numpy fallback.

Each backend runs in its own interpreter because the choice is made at import
time from ``SAFESCHED_DISABLE_NUMBA``. Usage::

    python benchmarks/bench_kernels.py [--simulations 1000] [--decisions 20]
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]

WORKER = r"""
import json, sys, time
from safesched import backend, build, prune
from safesched.harness import load_config, load_suite
from safesched.solve import MctsConfig, MctsPlanner, value_iteration

root, sims, decisions = sys.argv[1], int(sys.argv[2]), int(sys.argv[3])

def best_of(fn, repeats=3):
    fn()  # warm-up, includes any compilation
    out = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        out = min(out, time.perf_counter() - t0)
    return out

rows = []
for cfg in load_suite(root + "/configs/tables.json"):
    for mode in ("pe", "npe"):
        pm = prune(build(cfg.routes, cfg.rewards, mode))
        rows.append({"kernel": "vi", "case": f"{cfg.label}/{mode}", "states": pm.base.n_states,
                     "seconds": best_of(lambda: value_iteration(pm))})

hard_soft = load_config(root + "/configs/hard_soft.json")
for mode in ("pe", "npe"):
    pm = prune(build(hard_soft.routes, hard_soft.rewards, mode))
    planner = MctsPlanner(pm, MctsConfig(depth=20, simulations=sims))
    safe = [s for s in range(pm.base.n_states) if pm.is_safe(s)][:decisions]
    t = best_of(lambda: [planner.action(s, seed=s) for s in safe], repeats=1)
    rows.append({"kernel": "mcts", "case": f"hard_soft/{mode} x{len(safe)}", "states": pm.base.n_states,
                 "seconds": t})
print(json.dumps({"backend": backend(), "rows": rows}))
"""


def run_backend(disable: bool, sims: int, decisions: int) -> dict:
    env = dict(os.environ)
    env.pop("SAFESCHED_DISABLE_NUMBA", None)
    if disable:
        env["SAFESCHED_DISABLE_NUMBA"] = "1"
    proc = subprocess.run([sys.executable, "-c", WORKER, str(ROOT), str(sims), str(decisions)],
                          env=env, capture_output=True, text=True, check=True)
    return json.loads(proc.stdout)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--simulations", type=int, default=1000)
    ap.add_argument("--decisions", type=int, default=20)
    args = ap.parse_args()
    fast = run_backend(False, args.simulations, args.decisions)
    slow = run_backend(True, args.simulations, args.decisions)
    print(f"{'kernel':6} {'case':28} {'states':>6} {fast['backend']:>10} {slow['backend']:>10} {'speedup':>8}")
    for a, b in zip(fast["rows"], slow["rows"]):
        print(f"{a['kernel']:6} {a['case']:28} {a['states']:6d} {a['seconds']:10.5f} "
              f"{b['seconds']:10.5f} {b['seconds'] / a['seconds']:8.1f}x")


if __name__ == "__main__":
    main()
