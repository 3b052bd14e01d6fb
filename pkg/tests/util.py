"""Shared test helpers, including independent oracles."""

from collections import deque
from itertools import product

import torch

from coordlab.kitchen import ACTIONS, reset, step


def rel_err(a, b):
    return abs(a - b) / (abs(a) + abs(b) + 1e-8)


acceptance_log = []


def acceptance(name, ok, detail):
    """Record one gate line for the end-of-run summary block, then assert."""
    line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
    acceptance_log.append(line)
    assert ok, line


def finite_difference_check(modules, loss_fn, eps=1e-6, tol=1e-4, atol=1e-8):
    """Audit autograd with a central difference over every parameter.

    Differences below atol are accepted outright: near-zero gradients sit
    inside central-difference roundoff, where the relative metric is noise.
    """
    if not isinstance(modules, (list, tuple)):
        modules = [modules]
    params = [p for m in modules for p in m.parameters()]
    for p in params:
        p.grad = None
    loss_fn().backward()
    worst = 0.0
    for p in params:
        grad = (p.grad if p.grad is not None else torch.zeros_like(p)).reshape(-1)
        flat = p.data.reshape(-1)
        for j in range(flat.numel()):
            orig = flat[j].item()
            flat[j] = orig + eps
            up = loss_fn().item()
            flat[j] = orig - eps
            down = loss_fn().item()
            flat[j] = orig
            numeric = (up - down) / (2 * eps)
            if abs(grad[j].item() - numeric) > atol:
                worst = max(worst, rel_err(grad[j].item(), numeric))
    assert worst < tol, f"max relative gradient error {worst}"
    return worst


def bfs_min_steps_to_serve(layout, max_depth=40):
    """Exhaustive breadth-first search over joint actions.

    Returns (min_steps, action_sequence) for the first step at which any soup
    is served (reward > 0), exploring all 36 joint actions per state and
    deduplicating on the time-free situation key.
    """
    start = reset(layout, 0)
    seen = {start.situation_key()}
    frontier = deque([(start, ())])
    depth = 0
    while frontier and depth < max_depth:
        depth += 1
        next_frontier = deque()
        while frontier:
            state, seq = frontier.popleft()
            for a, b in product(ACTIONS, ACTIONS):
                nxt, reward, _ = step(state, a, b)
                if reward > 0:
                    return depth, seq + ((a, b),)
                key = nxt.situation_key()
                if key not in seen:
                    seen.add(key)
                    next_frontier.append((nxt, seq + ((a, b),)))
        frontier = next_frontier
    raise AssertionError(f"no serve found within {max_depth} steps")


def rollout(layout, seed, joint_actions):
    """Replay a joint action sequence; returns (final_state, rewards, shaped)."""
    state = reset(layout, seed)
    rewards = []
    shaped = []
    for a, b in joint_actions:
        state, r, s = step(state, a, b)
        rewards.append(r)
        shaped.append(s)
    return state, rewards, shaped
