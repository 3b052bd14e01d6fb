"""Dense multi-channel grid featurization of game states.

Channels are binary except where noted; the encoding is lossless for
everything a policy can act on (tiles, players, held items, counters, pot
contents/timers, remaining time). ``observe(state, 0)`` and
``observe(state, 1)`` are identical up to swapping the self/other channel
blocks; ``SWAP_CHANNEL_PERMUTATION`` spells out that permutation.
"""

from __future__ import annotations

import numpy as np

from .core import DISH, ONION, POT_CAPACITY, Soup, TOMATO, Tile

_TILE_ORDER = (
    Tile.FLOOR,
    Tile.COUNTER,
    Tile.POT,
    Tile.ONION_SOURCE,
    Tile.TOMATO_SOURCE,
    Tile.DISH_SOURCE,
    Tile.SERVE_WINDOW,
)
_ORIENTS = ("N", "S", "E", "W")
_HELD_CLASSES = (ONION, TOMATO, DISH, "soup")

CHANNEL_NAMES = (
    tuple(f"tile_{t}" for t in _TILE_ORDER)
    + ("self_pos",)
    + tuple(f"self_orient_{o}" for o in _ORIENTS)
    + tuple(f"self_held_{h}" for h in _HELD_CLASSES)
    + ("other_pos",)
    + tuple(f"other_orient_{o}" for o in _ORIENTS)
    + tuple(f"other_held_{h}" for h in _HELD_CLASSES)
    + tuple(f"counter_{h}" for h in _HELD_CLASSES)
    + (
        "pot_onions",      # scalar, count / capacity
        "pot_tomatoes",    # scalar, count / capacity
        "pot_ruined",
        "pot_timer",       # scalar, remaining / cook_time
        "pot_ready",
        "soup_onions",     # scalar at counter/held soup cells
        "soup_tomatoes",
        "soup_ruined",
        "time_left",       # scalar plane, remaining steps / episode length
    )
)
_IDX = {name: i for i, name in enumerate(CHANNEL_NAMES)}

_SELF_BLOCK = [i for i, n in enumerate(CHANNEL_NAMES) if n.startswith("self_")]
_OTHER_BLOCK = [i for i, n in enumerate(CHANNEL_NAMES) if n.startswith("other_")]

# Permutation p such that observe(s, 1) == observe(s, 0)[p].
SWAP_CHANNEL_PERMUTATION = np.arange(len(CHANNEL_NAMES))
SWAP_CHANNEL_PERMUTATION[_SELF_BLOCK] = _OTHER_BLOCK
SWAP_CHANNEL_PERMUTATION[_OTHER_BLOCK] = _SELF_BLOCK
SWAP_CHANNEL_PERMUTATION.setflags(write=False)


def observation_shape(layout):
    return (len(CHANNEL_NAMES), layout.height, layout.width)


def _held_class(item):
    if isinstance(item, Soup):
        return "soup"
    return item


def _mark_soup(obs, soup, x, y):
    obs[_IDX["soup_onions"], y, x] = soup.onions / POT_CAPACITY
    obs[_IDX["soup_tomatoes"], y, x] = soup.tomatoes / POT_CAPACITY
    if soup.ruined:
        obs[_IDX["soup_ruined"], y, x] = 1.0


def observe(state, player: int) -> np.ndarray:
    """Featurize ``state`` from the given seat. Returns float32 (C, H, W)."""
    layout = state.layout
    obs = np.zeros(observation_shape(layout), dtype=np.float32)

    for y in range(layout.height):
        for x in range(layout.width):
            obs[_IDX[f"tile_{layout.grid[y][x]}"], y, x] = 1.0

    for seat, prefix in ((player, "self"), (1 - player, "other")):
        p = state.players[seat]
        x, y = p.pos
        obs[_IDX[f"{prefix}_pos"], y, x] = 1.0
        obs[_IDX[f"{prefix}_orient_{p.orient}"], y, x] = 1.0
        if p.held is not None:
            obs[_IDX[f"{prefix}_held_{_held_class(p.held)}"], y, x] = 1.0
            if isinstance(p.held, Soup):
                _mark_soup(obs, p.held, x, y)

    for (x, y), item in state.counters.items():
        obs[_IDX[f"counter_{_held_class(item)}"], y, x] = 1.0
        if isinstance(item, Soup):
            _mark_soup(obs, item, x, y)

    for (x, y), pot in state.pots.items():
        obs[_IDX["pot_onions"], y, x] = pot.onions / POT_CAPACITY
        obs[_IDX["pot_tomatoes"], y, x] = pot.tomatoes / POT_CAPACITY
        if pot.ruined:
            obs[_IDX["pot_ruined"], y, x] = 1.0
        if pot.cook_timer is not None:
            obs[_IDX["pot_timer"], y, x] = pot.cook_timer / layout.cook_time
            if pot.cook_timer == 0:
                obs[_IDX["pot_ready"], y, x] = 1.0

    obs[_IDX["time_left"]] = (layout.episode_length - state.t) / layout.episode_length
    return obs
