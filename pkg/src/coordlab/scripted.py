"""Rule-based partner styles.

Six labeled behaviors supply controllable diversity for populations and
datasets: two rotation styles that circulate the kitchen while they work,
a counter-passer that stages ingredients instead of potting them, two
ingredient loyalists, and a near-idle body. Every style runs the same
fetch/pot/plate/serve loop; the style decides targets and tie-breaks.
Noise epsilon mixes in uniform random actions per step.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .kitchen import ACTIONS, DIRECTIONS, Soup, Tile

STYLE_NAMES = (
    "clockwise",
    "counterclockwise",
    "pass-over-counter",
    "onion-preferring",
    "tomato-preferring",
    "idleish",
)

_DIR_ACTIONS = {"N": "up", "S": "down", "W": "left", "E": "right"}


@dataclass(frozen=True)
class ScriptedStyle:
    style: str
    noise: float = 0.0

    def __post_init__(self):
        if self.style not in STYLE_NAMES:
            raise ValueError(f"unknown style {self.style!r}, expected one of {STYLE_NAMES}")
        if not 0 <= self.noise < 1:
            raise ValueError(f"noise must be in [0, 1), got {self.noise}")


def _rotation_order(pos, center, clockwise: bool):
    """Directions ranked by how much they advance circulation around center."""
    dx = pos[0] - center[0]
    dy = pos[1] - center[1]
    # screen-coordinate tangent: (-dy, dx) circles right->down->left->up
    tx, ty = (-dy, dx) if clockwise else (dy, -dx)
    scored = []
    for name, (mx, my) in DIRECTIONS.items():
        scored.append((-(mx * tx + my * ty), name))
    scored.sort()
    return [name for _, name in scored]


class ScriptedAgent:
    def __init__(self, style: ScriptedStyle):
        self.style = style

    def begin_episode(self, layout, player: int, seed: int) -> None:
        self.layout = layout
        self.player = player
        self.rng = np.random.default_rng(seed)
        self.center = ((layout.width - 1) / 2, (layout.height - 1) / 2)
        self._pass_counters = self._rank_pass_counters(layout)
        # consecutive forced waits; thresholds differ per seat so two
        # mirrored agents blocking each other's target cell break symmetry
        self._stalled = 0
        self._stall_limit = 2 + player

    # -- layout analysis ---------------------------------------------------

    def _rank_pass_counters(self, layout):
        """Counters ordered by how many distinct floor cells touch them;
        shared counters (reachable from several sides) come first."""
        ranked = []
        for pos in layout.cells_of(Tile.COUNTER):
            adj = sum(
                1
                for d in DIRECTIONS.values()
                if layout.is_floor((pos[0] + d[0], pos[1] + d[1]))
            )
            if adj:
                ranked.append((-adj, pos))
        ranked.sort()
        return [pos for _, pos in ranked]

    # -- target selection --------------------------------------------------

    def _ingredient_tiles(self):
        onion = self.layout.cells_of(Tile.ONION_SOURCE)
        tomato = self.layout.cells_of(Tile.TOMATO_SOURCE)
        if self.style.style == "onion-preferring":
            return onion
        if self.style.style == "tomato-preferring":
            return tomato or onion
        return onion + tomato

    def _pots_accepting(self, state, ingredient):
        """Pots where depositing `ingredient` keeps some recipe reachable."""
        targets = []
        for pos, pot in state.pots.items():
            if pot.cook_timer is not None or pot.ruined or pot.fill >= 3:
                continue
            onions = pot.onions + (1 if ingredient == "onion" else 0)
            tomatoes = pot.tomatoes + (1 if ingredient == "tomato" else 0)
            if any(r.contains(onions, tomatoes) for r in self.layout.recipes):
                targets.append(pos)
        return targets

    def _goal_tiles(self, state):
        """Station cells the agent currently wants to interact with."""
        held = state.players[self.player].held
        pots = state.pots
        if isinstance(held, Soup):
            return self.layout.cells_of(Tile.SERVE_WINDOW)
        if held == "dish":
            return [p for p, pot in pots.items() if pot.is_ready]
        if held in ("onion", "tomato"):
            if self.style.style == "pass-over-counter":
                free = [c for c in self._pass_counters if c not in state.counters]
                return free[:1]
            return self._pots_accepting(state, held)
        # empty hands: plate if anything cooks, else fetch an ingredient
        if any(pot.cook_timer is not None for pot in pots.values()):
            return self.layout.cells_of(Tile.DISH_SOURCE)
        return self._ingredient_tiles()

    # -- movement ----------------------------------------------------------

    def _first_steps(self, state, goal_tiles):
        """Shortest paths to any floor cell adjacent to a goal tile; returns
        (dist, set of optimal first direction names, interact_now)."""
        me = state.players[self.player].pos
        other = state.players[1 - self.player].pos
        stands = set()
        for tile in goal_tiles:
            for d in DIRECTIONS.values():
                cell = (tile[0] + d[0], tile[1] + d[1])
                if self.layout.is_floor(cell) and cell != other:
                    stands.add(cell)
        if not stands:
            return None, set(), False
        if me in stands:
            facing = self._facing_goal(state, me, goal_tiles)
            return 0, facing, not facing
        # multi-source distance field from the stand cells, other player solid
        dist = {cell: 0 for cell in stands}
        queue = deque(stands)
        while queue:
            pos = queue.popleft()
            for d in DIRECTIONS.values():
                nxt = (pos[0] + d[0], pos[1] + d[1])
                if nxt in dist or not self.layout.is_floor(nxt) or nxt == other:
                    continue
                dist[nxt] = dist[pos] + 1
                queue.append(nxt)
        candidates = {}
        for name, d in DIRECTIONS.items():
            nxt = (me[0] + d[0], me[1] + d[1])
            if nxt != other and nxt in dist:
                candidates[name] = dist[nxt]
        if not candidates:
            return None, set(), False
        nearest = min(candidates.values())
        return nearest + 1, {n for n, v in candidates.items() if v == nearest}, False

    def _facing_goal(self, state, me, goal_tiles):
        """Direction names that would face a goal tile from `me`; empty set
        when already facing one (interact instead)."""
        orient = state.players[self.player].orient
        turns = set()
        for name, d in DIRECTIONS.items():
            cell = (me[0] + d[0], me[1] + d[1])
            if cell in goal_tiles:
                if name == orient:
                    return set()
                turns.add(name)
        return turns

    def _tie_break(self, pos, options):
        if not options:
            return None
        if self.style.style in ("clockwise", "counterclockwise"):
            order = _rotation_order(pos, self.center, self.style.style == "clockwise")
        else:
            order = list(DIRECTIONS)
        for name in order:
            if name in options:
                return _DIR_ACTIONS[name]
        return None

    def _circulate(self, state):
        """Rotation styles keep moving instead of waiting in place."""
        me = state.players[self.player].pos
        other = state.players[1 - self.player].pos
        order = _rotation_order(me, self.center, self.style.style == "clockwise")
        for name in order:
            d = DIRECTIONS[name]
            nxt = (me[0] + d[0], me[1] + d[1])
            if self.layout.is_floor(nxt) and nxt != other:
                return _DIR_ACTIONS[name]
        return "stay"

    # -- policy ------------------------------------------------------------

    def _sidestep(self, state):
        """Break mutual-blocking standoffs by moving to any free cell."""
        me = state.players[self.player].pos
        other = state.players[1 - self.player].pos
        for name, d in DIRECTIONS.items():
            nxt = (me[0] + d[0], me[1] + d[1])
            if self.layout.is_floor(nxt) and nxt != other:
                return _DIR_ACTIONS[name]
        return "stay"

    def act(self, state) -> str:
        if self.style.noise and self.rng.random() < self.style.noise:
            return ACTIONS[self.rng.integers(len(ACTIONS))]
        if self.style.style == "idleish":
            return "stay"
        goals = self._goal_tiles(state)
        me = state.players[self.player].pos
        if goals:
            dist, options, interact_now = self._first_steps(state, goals)
            if interact_now:
                self._stalled = 0
                return "interact"
            choice = self._tie_break(me, options)
            if choice is not None:
                self._stalled = 0
                return choice
        if self.style.style in ("clockwise", "counterclockwise"):
            return self._circulate(state)
        self._stalled += 1
        if self._stalled >= self._stall_limit:
            self._stalled = 0
            return self._sidestep(state)
        return "stay"


def scripted_partner(style, layout_name: str, noise: float = 0.0):
    from .agents import PartnerHandle

    if isinstance(style, str):
        style = ScriptedStyle(style, noise)
    handle = PartnerHandle(
        id=f"scripted-{style.style}-e{style.noise:g}",
        kind="scripted",
        layout_name=layout_name,
        style={"style": style.style, "noise": style.noise},
        provenance={"source": "scripted-style"},
    )
    handle.content_hash = handle.compute_hash()
    return handle
