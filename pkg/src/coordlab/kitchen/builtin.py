"""Built-in kitchen layouts.

The five classic two-cook kitchens plus Multi-strategy Counter, which reuses
the Counter Circuit ring but adds a tomato source and a second recipe so the
players must agree on which soup to cook; mixing ingredients ruins the pot.

``tiny_layouts`` are small kitchens used by tests and desk-scale experiments;
they are not part of the classic set.
"""

from .core import parse_layout

_BUILTIN_TEXTS = {
    "cramped-room": """\
cramped-room 5 4 400 20
##P##
O1.2O
#...#
#D#S#
recipe 20 onion onion onion
""",
    "asymmetric-advantages": """\
asymmetric-advantages 9 5 400 20
#########
O.#S#O#.S
#...P.1.#
#2..P...#
###D#D###
recipe 20 onion onion onion
""",
    "coordination-ring": """\
coordination-ring 5 5 400 20
###P#
#.1.P
D2#.#
O...#
#OS##
recipe 20 onion onion onion
""",
    "forced-coordination": """\
forced-coordination 5 5 400 20
###P#
O.#1P
O2#.#
D.#.#
###S#
recipe 20 onion onion onion
""",
    "counter-circuit": """\
counter-circuit 8 5 400 20
###PP###
#.1....#
D.####.S
#....2.#
###OO###
recipe 20 onion onion onion
""",
    "multi-strategy-counter": """\
multi-strategy-counter 8 5 400 20
###PP###
#.1....#
D.####.S
#....2.#
##TOO###
recipe 20 onion onion onion
recipe 20 tomato tomato tomato
""",
}

# Desk-scale kitchens. tiny-duo is the smallest kitchen where a soup can be
# served, sized so exhaustive joint-action search stays cheap; tiny-choice
# adds a tomato source and room to pass, for style-diversity experiments.
_TINY_TEXTS = {
    "tiny-duo": """\
tiny-duo 4 3 30 2
#OP#
1..2
#DS#
recipe 20 onion
""",
    "tiny-choice": """\
tiny-choice 3 4 50 5
OTP
1..
..2
DS#
recipe 20 onion
recipe 20 tomato
""",
}

_BUILTIN = {name: parse_layout(text) for name, text in _BUILTIN_TEXTS.items()}
_TINY = {name: parse_layout(text) for name, text in _TINY_TEXTS.items()}


def builtin_layouts():
    """The six standard layouts, in canonical order."""
    return [_BUILTIN[name] for name in _BUILTIN_TEXTS]


def tiny_layouts():
    return [_TINY[name] for name in _TINY_TEXTS]


def get_layout(name: str):
    """Look up any shipped layout by name."""
    if name in _BUILTIN:
        return _BUILTIN[name]
    if name in _TINY:
        return _TINY[name]
    known = ", ".join([*_BUILTIN_TEXTS, *_TINY_TEXTS])
    raise KeyError(f"unknown layout '{name}' (shipped layouts: {known})")
