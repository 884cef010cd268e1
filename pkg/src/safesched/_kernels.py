"""Numeric inner loops over the CSR layout of :class:`~safesched.build.MdpArrays`.

Every function here is plain Python on numpy arrays; ``_accel.jit`` compiles
them when numba is enabled. ``vi_sweep_numpy`` is the vectorized stand-in for
``vi_sweep`` on the interpreted path.
"""
from __future__ import annotations

import math

import numpy as np

from ._accel import USE_NUMBA, jit

TIE_TOL = 1e-9
ROLLOUT_EDF = 0
ROLLOUT_RANDOM = 1


def _vi_sweep(state_ptr, row_safe, row_ptr, out_next, out_prob, out_reward, out_disc,
              values, new_values):
    residual = 0.0
    for s in range(state_ptr.shape[0] - 1):
        best = -np.inf
        for r in range(state_ptr[s], state_ptr[s + 1]):
            if not row_safe[r]:
                continue
            q = 0.0
            for o in range(row_ptr[r], row_ptr[r + 1]):
                q += out_prob[o] * (out_reward[o] + out_disc[o] * values[out_next[o]])
            if q > best:
                best = q
        if best == -np.inf:
            best = values[s]
        d = abs(best - values[s])
        if d > residual:
            residual = d
        new_values[s] = best
    return residual


def _vi_solve(state_ptr, row_safe, row_ptr, out_next, out_prob, out_reward, out_disc,
              values, tol, residuals):
    """Sweep until the residual is <= ``tol`` or ``residuals`` is full.

    ``values`` holds the result on return; returns the number of sweeps.
    """
    scratch = np.empty_like(values)
    n = 0
    while n < residuals.shape[0]:
        res = _vi_sweep(state_ptr, row_safe, row_ptr, out_next, out_prob, out_reward, out_disc,
                        values, scratch)
        values[:] = scratch
        residuals[n] = res
        n += 1
        if res <= tol:
            break
    return n


def vi_sweep_numpy(state_ptr, row_safe, row_ptr, out_next, out_prob, out_reward, out_disc,
                   values, new_values):
    q_out = out_prob * (out_reward + out_disc * values[out_next])
    q_row = np.add.reduceat(q_out, row_ptr[:-1])
    q_row = np.where(row_safe, q_row, -np.inf)
    best = np.maximum.reduceat(q_row, state_ptr[:-1])
    best = np.where(np.isneginf(best), values, best)
    residual = float(np.max(np.abs(best - values))) if best.size else 0.0
    new_values[:] = best
    return residual


def _greedy_rows(state_ptr, row_safe, row_ptr, out_next, out_prob, out_reward, out_disc,
                 values, tie_tol):
    """Index of the best safe row per state (first row within ``tie_tol`` wins); -1 if none."""
    n = state_ptr.shape[0] - 1
    choice = np.full(n, -1, dtype=np.int64)
    for s in range(n):
        best = -np.inf
        for r in range(state_ptr[s], state_ptr[s + 1]):
            if not row_safe[r]:
                continue
            q = 0.0
            for o in range(row_ptr[r], row_ptr[r + 1]):
                q += out_prob[o] * (out_reward[o] + out_disc[o] * values[out_next[o]])
            if choice[s] == -1 or q > best + tie_tol * max(1.0, abs(best)):
                best = q
                choice[s] = r
    return choice


def _sample_outcome(row_ptr, out_prob, r):
    u = np.random.random()
    lo = row_ptr[r]
    hi = row_ptr[r + 1]
    acc = 0.0
    for o in range(lo, hi):
        acc += out_prob[o]
        if u < acc:
            return o
    return hi - 1


def _random_safe_row(state_ptr, row_safe, s):
    k = 0
    for r in range(state_ptr[s], state_ptr[s + 1]):
        if row_safe[r]:
            k += 1
    pick = int(np.random.random() * k)
    if pick >= k:
        pick = k - 1
    for r in range(state_ptr[s], state_ptr[s + 1]):
        if row_safe[r]:
            if pick == 0:
                return r
            pick -= 1
    return -1


def _mcts_search(state_ptr, row_safe, row_ptr, out_next, out_prob, out_reward, out_disc,
                 edf_row, root, depth, simulations, exploration_c, rollout, seed):
    """UCT search from ``root``; returns the chosen row index.

    Decision nodes are states; chance outcomes are sampled from the row's
    distribution and each (node, outcome) pair owns its child node (closed
    loop). One node is added per simulation, followed by a rollout with the
    EDF or uniform-random safe policy up to ``depth`` transitions in total.
    """
    np.random.seed(seed)
    n_safe = 0
    only = -1
    for r in range(state_ptr[root], state_ptr[root + 1]):
        if row_safe[r]:
            n_safe += 1
            only = r
    if n_safe <= 1:
        return only

    n_states = state_ptr.shape[0] - 1
    max_rows = 0
    max_outs = 0
    for s in range(n_states):
        nr = state_ptr[s + 1] - state_ptr[s]
        no = row_ptr[state_ptr[s + 1]] - row_ptr[state_ptr[s]]
        if nr > max_rows:
            max_rows = nr
        if no > max_outs:
            max_outs = no
    max_nodes = simulations + 1
    node_state = np.empty(max_nodes, dtype=np.int64)
    node_n = np.zeros(max_nodes, dtype=np.float64)
    edge_n = np.zeros(max_nodes * max_rows, dtype=np.float64)
    edge_w = np.zeros(max_nodes * max_rows, dtype=np.float64)
    child = np.full(max_nodes * max_outs, -1, dtype=np.int64)
    node_state[0] = root
    n_nodes = 1

    path_edge = np.empty(depth, dtype=np.int64)
    path_node = np.empty(depth, dtype=np.int64)
    path_rew = np.empty(depth, dtype=np.float64)
    path_disc = np.empty(depth, dtype=np.float64)

    for _ in range(simulations):
        node = 0
        plen = 0
        tail = 0.0
        while plen < depth:
            s = node_state[node]
            r0 = state_ptr[s]
            # first untried safe row in canonical order, else UCT
            sel = -1
            for r in range(r0, state_ptr[s + 1]):
                if row_safe[r] and edge_n[node * max_rows + r - r0] == 0.0:
                    sel = r
                    break
            if sel == -1:
                best = -np.inf
                log_n = math.log(node_n[node])
                for r in range(r0, state_ptr[s + 1]):
                    if not row_safe[r]:
                        continue
                    e = node * max_rows + r - r0
                    score = edge_w[e] / edge_n[e] + exploration_c * math.sqrt(log_n / edge_n[e])
                    if score > best:
                        best = score
                        sel = r
            o = _sample_outcome(row_ptr, out_prob, sel)
            path_edge[plen] = node * max_rows + sel - r0
            path_node[plen] = node
            path_rew[plen] = out_reward[o]
            path_disc[plen] = out_disc[o]
            plen += 1
            slot = node * max_outs + o - row_ptr[r0]
            nxt = child[slot]
            if nxt == -1:
                nxt = n_nodes
                n_nodes += 1
                node_state[nxt] = out_next[o]
                child[slot] = nxt
                # rollout for the remaining budget
                cur = out_next[o]
                g = 1.0
                for _k in range(depth - plen):
                    if rollout == ROLLOUT_EDF:
                        rr = edf_row[cur]
                    else:
                        rr = _random_safe_row(state_ptr, row_safe, cur)
                    if rr < 0:
                        break
                    oo = _sample_outcome(row_ptr, out_prob, rr)
                    tail += g * out_reward[oo]
                    g *= out_disc[oo]
                    cur = out_next[oo]
                break
            node = nxt
        ret = tail
        for k in range(plen - 1, -1, -1):
            ret = path_rew[k] + path_disc[k] * ret
            e = path_edge[k]
            edge_n[e] += 1.0
            edge_w[e] += ret
            node_n[path_node[k]] += 1.0

    best = -np.inf
    choice = -1
    r0 = state_ptr[root]
    for r in range(r0, state_ptr[root + 1]):
        if not row_safe[r] or edge_n[r - r0] == 0.0:
            continue
        mean = edge_w[r - r0] / edge_n[r - r0]
        if mean > best:
            best = mean
            choice = r
    return choice


vi_sweep_loop = jit(_vi_sweep)
_vi_sweep = vi_sweep_loop
vi_solve = jit(_vi_solve)
greedy_rows = jit(_greedy_rows)
_sample_outcome = jit(_sample_outcome)
_random_safe_row = jit(_random_safe_row)
mcts_search = jit(_mcts_search)
vi_sweep = vi_sweep_loop if USE_NUMBA else vi_sweep_numpy
