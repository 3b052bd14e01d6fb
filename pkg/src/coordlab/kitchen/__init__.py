from .core import (
    ACTIONS,
    ACTION_INDEX,
    DIRECTIONS,
    GameState,
    Layout,
    PlayerState,
    PotState,
    Recipe,
    ShapedRewards,
    Soup,
    Tile,
    format_layout,
    parse_layout,
    reset,
    step,
)
from .observe import (
    CHANNEL_NAMES,
    SWAP_CHANNEL_PERMUTATION,
    observation_shape,
    observe,
)
from .builtin import builtin_layouts, get_layout, tiny_layouts

__all__ = [
    "ACTIONS",
    "ACTION_INDEX",
    "DIRECTIONS",
    "GameState",
    "Layout",
    "PlayerState",
    "PotState",
    "Recipe",
    "ShapedRewards",
    "Soup",
    "Tile",
    "CHANNEL_NAMES",
    "SWAP_CHANNEL_PERMUTATION",
    "builtin_layouts",
    "format_layout",
    "get_layout",
    "observation_shape",
    "observe",
    "parse_layout",
    "reset",
    "step",
    "tiny_layouts",
]
