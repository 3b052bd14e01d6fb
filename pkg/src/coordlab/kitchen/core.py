"""Two-player cooperative kitchen gridworld.

The game is a deterministic Markov game: two cooks move on a grid, pick
ingredients from sources, fill pots, plate cooked soups onto dishes and serve
them at a window for points. States are plain values; ``step`` returns a new
state and never mutates its input, so any number of episodes can run in
parallel without sharing.

Coordinates are (x, y) with y growing downward (screen order). Orientations
are compass letters; "up" on screen is north.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import EpisodeFinishedError, LayoutError


class Tile:
    FLOOR = "floor"
    COUNTER = "counter"
    POT = "pot"
    ONION_SOURCE = "onion_source"
    TOMATO_SOURCE = "tomato_source"
    DISH_SOURCE = "dish_source"
    SERVE_WINDOW = "serve_window"


TILE_GLYPHS = {
    ".": Tile.FLOOR,
    "#": Tile.COUNTER,
    "P": Tile.POT,
    "O": Tile.ONION_SOURCE,
    "T": Tile.TOMATO_SOURCE,
    "D": Tile.DISH_SOURCE,
    "S": Tile.SERVE_WINDOW,
}
GLYPH_OF_TILE = {tile: glyph for glyph, tile in TILE_GLYPHS.items()}

ONION = "onion"
TOMATO = "tomato"
DISH = "dish"
INGREDIENTS = (ONION, TOMATO)

POT_CAPACITY = 3

# Action order is part of the wire/contract: indices 0..5.
ACTIONS = ("up", "down", "left", "right", "stay", "interact")
ACTION_INDEX = {name: i for i, name in enumerate(ACTIONS)}

# orientation -> unit step
DIRECTIONS = {"N": (0, -1), "S": (0, 1), "W": (-1, 0), "E": (1, 0)}
ACTION_ORIENTATION = {"up": "N", "down": "S", "left": "W", "right": "E"}


@dataclass(frozen=True)
class Soup:
    """A cooked pot's output. Ruined soups serve for zero points."""

    onions: int
    tomatoes: int
    ruined: bool = False

    def to_dict(self):
        return {"onions": self.onions, "tomatoes": self.tomatoes, "ruined": self.ruined}

    @staticmethod
    def from_dict(d):
        return Soup(int(d["onions"]), int(d["tomatoes"]), bool(d["ruined"]))


@dataclass(frozen=True)
class Recipe:
    onions: int
    tomatoes: int
    reward: int = 20

    @property
    def size(self):
        return self.onions + self.tomatoes

    def matches(self, onions, tomatoes):
        return self.onions == onions and self.tomatoes == tomatoes

    def contains(self, onions, tomatoes):
        return self.onions >= onions and self.tomatoes >= tomatoes

    def to_dict(self):
        return {"onions": self.onions, "tomatoes": self.tomatoes, "reward": self.reward}

    @staticmethod
    def from_dict(d):
        return Recipe(int(d["onions"]), int(d["tomatoes"]), int(d["reward"]))


@dataclass(frozen=True)
class Layout:
    """Static grid, spawn cells and recipe set for one kitchen."""

    name: str
    grid: tuple  # tuple of rows, each a tuple of Tile strings
    spawns: tuple  # two (x, y) floor cells
    recipes: tuple  # tuple of Recipe
    episode_length: int = 400
    cook_time: int = 20

    @property
    def width(self):
        return len(self.grid[0]) if self.grid else 0

    @property
    def height(self):
        return len(self.grid)

    def tile(self, pos):
        x, y = pos
        if 0 <= x < self.width and 0 <= y < self.height:
            return self.grid[y][x]
        return None

    def is_floor(self, pos):
        return self.tile(pos) == Tile.FLOOR

    def cells_of(self, tile):
        return [
            (x, y)
            for y in range(self.height)
            for x in range(self.width)
            if self.grid[y][x] == tile
        ]

    def validate(self):
        """Raise LayoutError listing every violated invariant."""
        problems = []
        if not self.grid or not self.grid[0]:
            raise LayoutError(self.name, ["grid is empty"])
        if any(len(row) != len(self.grid[0]) for row in self.grid):
            problems.append("grid is not rectangular")
        if len(self.spawns) != 2:
            problems.append(f"expected exactly 2 spawn positions, got {len(self.spawns)}")
        else:
            if self.spawns[0] == self.spawns[1]:
                problems.append("spawn positions coincide")
            for i, pos in enumerate(self.spawns):
                if not self.is_floor(pos):
                    problems.append(f"spawn {i} at {pos} is not on a floor cell")
        for tile, label in [
            (Tile.POT, "pot"),
            (Tile.DISH_SOURCE, "dish source"),
            (Tile.SERVE_WINDOW, "serve window"),
        ]:
            if not self.cells_of(tile):
                problems.append(f"layout has no {label}")
        if not self.cells_of(Tile.ONION_SOURCE) and not self.cells_of(Tile.TOMATO_SOURCE):
            problems.append("layout has no ingredient source")
        for tile in (
            Tile.POT,
            Tile.ONION_SOURCE,
            Tile.TOMATO_SOURCE,
            Tile.DISH_SOURCE,
            Tile.SERVE_WINDOW,
        ):
            for pos in self.cells_of(tile):
                if not any(self.is_floor(_shift(pos, d)) for d in DIRECTIONS.values()):
                    problems.append(f"{self.tile(pos)} at {pos} has no adjacent floor cell")
        if not self.recipes:
            problems.append("recipe set is empty")
        for r in self.recipes:
            if not (1 <= r.size <= POT_CAPACITY):
                problems.append(f"recipe {r} has {r.size} ingredients, must be 1..{POT_CAPACITY}")
            if r.reward <= 0:
                problems.append(f"recipe {r} has non-positive reward")
        if self.episode_length < 1:
            problems.append("episode_length must be >= 1")
        if self.cook_time < 1:
            problems.append("cook_time must be >= 1")
        if problems:
            raise LayoutError(self.name, problems)
        return self


def _shift(pos, delta):
    return (pos[0] + delta[0], pos[1] + delta[1])


@dataclass
class PlayerState:
    pos: tuple
    orient: str = "S"
    held: object = None  # None | "onion" | "tomato" | "dish" | Soup

    def copy(self):
        return PlayerState(self.pos, self.orient, self.held)

    def to_dict(self):
        held = self.held.to_dict() if isinstance(self.held, Soup) else self.held
        return {"pos": list(self.pos), "orient": self.orient, "held": held}

    @staticmethod
    def from_dict(d):
        held = d["held"]
        if isinstance(held, dict):
            held = Soup.from_dict(held)
        return PlayerState(tuple(d["pos"]), d["orient"], held)


@dataclass
class PotState:
    onions: int = 0
    tomatoes: int = 0
    ruined: bool = False
    cook_timer: int | None = None  # None = idle, >0 cooking, 0 = soup ready

    @property
    def fill(self):
        return self.onions + self.tomatoes

    @property
    def is_cooking(self):
        return self.cook_timer is not None and self.cook_timer > 0

    @property
    def is_ready(self):
        return self.cook_timer == 0

    @property
    def is_empty(self):
        return self.fill == 0 and self.cook_timer is None and not self.ruined

    def copy(self):
        return PotState(self.onions, self.tomatoes, self.ruined, self.cook_timer)

    def to_dict(self):
        return {
            "onions": self.onions,
            "tomatoes": self.tomatoes,
            "ruined": self.ruined,
            "cook_timer": self.cook_timer,
        }

    @staticmethod
    def from_dict(d):
        timer = d["cook_timer"]
        return PotState(int(d["onions"]), int(d["tomatoes"]), bool(d["ruined"]),
                        None if timer is None else int(timer))


@dataclass
class GameState:
    layout: Layout
    t: int
    players: tuple  # (PlayerState, PlayerState)
    pots: dict  # (x, y) -> PotState
    counters: dict  # (x, y) -> item
    score: int

    def copy(self):
        return GameState(
            layout=self.layout,
            t=self.t,
            players=tuple(p.copy() for p in self.players),
            pots={pos: pot.copy() for pos, pot in self.pots.items()},
            counters=dict(self.counters),
            score=self.score,
        )

    @property
    def done(self):
        return self.t >= self.layout.episode_length

    def situation_key(self):
        """Hashable key over everything but time and score (used by search)."""
        return (
            tuple((p.pos, p.orient, p.held) for p in self.players),
            tuple(sorted(
                (pos, pot.onions, pot.tomatoes, pot.ruined, pot.cook_timer)
                for pos, pot in self.pots.items()
            )),
            tuple(sorted(self.counters.items())),
        )

    def to_dict(self):
        counters = {
            f"{x},{y}": (item.to_dict() if isinstance(item, Soup) else item)
            for (x, y), item in sorted(self.counters.items())
        }
        return {
            "layout": self.layout.name,
            "t": self.t,
            "players": [p.to_dict() for p in self.players],
            "pots": {f"{x},{y}": pot.to_dict() for (x, y), pot in sorted(self.pots.items())},
            "counters": counters,
            "score": self.score,
        }

    @staticmethod
    def from_dict(d, layout):
        if layout.name != d["layout"]:
            raise ValueError(f"state belongs to layout '{d['layout']}', not '{layout.name}'")

        def parse_pos(s):
            x, y = s.split(",")
            return (int(x), int(y))

        counters = {}
        for key, item in d["counters"].items():
            counters[parse_pos(key)] = Soup.from_dict(item) if isinstance(item, dict) else item
        return GameState(
            layout=layout,
            t=int(d["t"]),
            players=tuple(PlayerState.from_dict(p) for p in d["players"]),
            pots={parse_pos(k): PotState.from_dict(v) for k, v in d["pots"].items()},
            counters=counters,
            score=int(d["score"]),
        )


@dataclass(frozen=True)
class ShapedRewards:
    """Exploration bonuses, reported on a channel separate from true reward."""

    dish_pickup: float = 3.0
    soup_pickup: float = 5.0


DEFAULT_SHAPING = ShapedRewards()


def reset(layout: Layout, seed: int) -> GameState:
    """Initial state: players at spawns, pots and counters empty, score 0.

    The engine is fully deterministic, so the seed does not influence the
    state; it is accepted so callers record one reproducibility handle per
    episode. Raises LayoutError for invalid layouts.
    """
    layout.validate()
    del seed
    return GameState(
        layout=layout,
        t=0,
        players=tuple(PlayerState(pos=pos, orient="S", held=None) for pos in layout.spawns),
        pots={pos: PotState() for pos in layout.cells_of(Tile.POT)},
        counters={},
        score=0,
    )


def _resolve_moves(layout, players, actions):
    """New positions/orientations under the both-contenders-stay rule."""
    positions = [p.pos for p in players]
    orients = [p.orient for p in players]
    targets = list(positions)
    for i, action in enumerate(actions):
        if action in ACTION_ORIENTATION:
            orients[i] = ACTION_ORIENTATION[action]
            want = _shift(positions[i], DIRECTIONS[orients[i]])
            if layout.is_floor(want):
                targets[i] = want
    if targets[0] == targets[1]:
        targets = list(positions)
    elif targets[0] == positions[1] and targets[1] == positions[0]:  # swap
        targets = list(positions)
    return targets, orients


def _start_cooking_if_due(pot: PotState, layout: Layout):
    """After a deposit: cook a completed recipe, or mark a dead-end pot ruined."""
    onions, tomatoes = pot.onions, pot.tomatoes
    exact = [r for r in layout.recipes if r.matches(onions, tomatoes)]
    extendable = [
        r for r in layout.recipes
        if r.contains(onions, tomatoes) and r.size > onions + tomatoes
    ]
    if exact and not extendable:
        pot.cook_timer = layout.cook_time
    elif not exact and not extendable:
        pot.ruined = True
        pot.cook_timer = layout.cook_time


def _interact(state: GameState, idx: int, shaping: ShapedRewards):
    """Apply one player's interact. Returns (reward, shaped)."""
    layout = state.layout
    player = state.players[idx]
    face = _shift(player.pos, DIRECTIONS[player.orient])
    tile = layout.tile(face)
    reward = 0
    shaped = 0.0

    if tile in (Tile.ONION_SOURCE, Tile.TOMATO_SOURCE):
        if player.held is None:
            player.held = ONION if tile == Tile.ONION_SOURCE else TOMATO
    elif tile == Tile.DISH_SOURCE:
        if player.held is None:
            player.held = DISH
            shaped += shaping.dish_pickup
    elif tile == Tile.POT:
        pot = state.pots[face]
        if player.held in INGREDIENTS:
            if pot.cook_timer is None and pot.fill < POT_CAPACITY:
                if player.held == ONION:
                    pot.onions += 1
                else:
                    pot.tomatoes += 1
                player.held = None
                _start_cooking_if_due(pot, layout)
        elif player.held == DISH and pot.is_ready:
            player.held = Soup(pot.onions, pot.tomatoes, pot.ruined)
            if not pot.ruined:
                shaped += shaping.soup_pickup
            state.pots[face] = PotState()
    elif tile == Tile.COUNTER:
        item = state.counters.get(face)
        if player.held is None and item is not None:
            player.held = item
            del state.counters[face]
            if item == DISH:
                shaped += shaping.dish_pickup
        elif player.held is not None and item is None:
            state.counters[face] = player.held
            player.held = None
    elif tile == Tile.SERVE_WINDOW:
        if isinstance(player.held, Soup):
            soup = player.held
            if not soup.ruined:
                for recipe in layout.recipes:
                    if recipe.matches(soup.onions, soup.tomatoes):
                        reward += recipe.reward
                        break
            player.held = None
    return reward, shaped


def step(state: GameState, a: str, b: str, shaping: ShapedRewards = DEFAULT_SHAPING):
    """Advance one step under joint action (a, b).

    Returns (next_state, reward, shaped). Reward is the sum of recipe rewards
    served this step; shaped carries pick-up bonuses and never enters score.
    Moves resolve simultaneously (same-target and swaps block both movers),
    then interacts apply in player order, then cooking timers tick.
    """
    if a not in ACTION_INDEX or b not in ACTION_INDEX:
        raise ValueError(f"unknown action in ({a!r}, {b!r})")
    if state.done:
        raise EpisodeFinishedError(
            f"episode on '{state.layout.name}' already finished at t={state.t}"
        )
    nxt = state.copy()
    actions = (a, b)

    targets, orients = _resolve_moves(nxt.layout, nxt.players, actions)
    for player, pos, orient in zip(nxt.players, targets, orients):
        player.pos = pos
        player.orient = orient

    reward = 0
    shaped = 0.0
    for idx in range(2):
        if actions[idx] == "interact":
            r, s = _interact(nxt, idx, shaping)
            reward += r
            shaped += s

    for pot in nxt.pots.values():
        if pot.cook_timer is not None and pot.cook_timer > 0:
            pot.cook_timer -= 1

    nxt.t += 1
    nxt.score += reward
    return nxt, reward, shaped


# ---------------------------------------------------------------------------
# Layout text format:
#   name width height episode_length cook_time
#   <height rows of glyphs>
#   recipe <reward> <ingredient> [<ingredient> ...]
# Spawn glyphs 1/2 mark floor cells.


def parse_layout(text: str) -> Layout:
    lines = [ln.rstrip("\n") for ln in text.strip("\n").split("\n")]
    if not lines:
        raise LayoutError("<unnamed>", ["empty layout text"])
    header = lines[0].split()
    if len(header) != 5:
        raise LayoutError("<unnamed>", [f"header needs 5 fields, got {len(header)}"])
    name = header[0]
    try:
        width, height, episode_length, cook_time = (int(v) for v in header[1:])
    except ValueError:
        raise LayoutError(name, ["header sizes must be integers"]) from None
    if len(lines) < 1 + height:
        raise LayoutError(name, [f"expected {height} grid rows, got {len(lines) - 1}"])

    spawn = {}
    grid = []
    for y in range(height):
        row_text = lines[1 + y]
        if len(row_text) != width:
            raise LayoutError(name, [f"row {y} has width {len(row_text)}, expected {width}"])
        row = []
        for x, glyph in enumerate(row_text):
            if glyph in ("1", "2"):
                spawn[int(glyph) - 1] = (x, y)
                row.append(Tile.FLOOR)
            elif glyph in TILE_GLYPHS:
                row.append(TILE_GLYPHS[glyph])
            else:
                raise LayoutError(name, [f"unknown glyph {glyph!r} at ({x},{y})"])
        grid.append(tuple(row))

    recipes = []
    for ln in lines[1 + height:]:
        if not ln.strip():
            continue
        parts = ln.split()
        if parts[0] != "recipe":
            raise LayoutError(name, [f"unexpected trailing line {ln!r}"])
        if len(parts) < 3:
            raise LayoutError(name, [f"recipe line needs reward and ingredients: {ln!r}"])
        reward = int(parts[1])
        onions = sum(1 for ing in parts[2:] if ing == ONION)
        tomatoes = sum(1 for ing in parts[2:] if ing == TOMATO)
        if onions + tomatoes != len(parts) - 2:
            raise LayoutError(name, [f"unknown ingredient in recipe line {ln!r}"])
        recipes.append(Recipe(onions, tomatoes, reward))

    spawns = tuple(spawn[i] for i in sorted(spawn))
    layout = Layout(
        name=name,
        grid=tuple(grid),
        spawns=spawns,
        recipes=tuple(recipes),
        episode_length=episode_length,
        cook_time=cook_time,
    )
    return layout.validate()


def format_layout(layout: Layout) -> str:
    rows = []
    for y in range(layout.height):
        row = ""
        for x in range(layout.width):
            pos = (x, y)
            if pos == layout.spawns[0]:
                row += "1"
            elif pos == layout.spawns[1]:
                row += "2"
            else:
                row += GLYPH_OF_TILE[layout.grid[y][x]]
        rows.append(row)
    lines = [
        f"{layout.name} {layout.width} {layout.height} "
        f"{layout.episode_length} {layout.cook_time}"
    ]
    lines.extend(rows)
    for r in layout.recipes:
        ingredients = [ONION] * r.onions + [TOMATO] * r.tomatoes
        lines.append(f"recipe {r.reward} " + " ".join(ingredients))
    return "\n".join(lines) + "\n"
