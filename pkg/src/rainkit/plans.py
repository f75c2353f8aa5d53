"""Normalization plans: which layer kind sits in each generator normalization slot.

Named plans are defined on the 14-slot (depth 7) generator: slots 1-7 follow
the encoder stages from the outermost inwards, slots 8-14 the decoder stages
from the innermost outwards. For a shallower generator of depth ``d`` the
plan keeps the ``d`` outermost encoder slots and the ``d`` outermost decoder
slots, i.e. slots are dropped from the innermost end on both sides.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .norm import NormKind

CANONICAL_DEPTH = 7
CANONICAL_SLOTS = 2 * CANONICAL_DEPTH

_UNIFORM = {k.value: k for k in NormKind}


@dataclass(frozen=True)
class NormPlan:
    name: str
    slots: tuple[NormKind, ...]

    def __len__(self) -> int:
        return len(self.slots)

    def __getitem__(self, index: int) -> NormKind:
        """1-based slot lookup, matching the layer numbering of the plan table."""
        if not 1 <= index <= len(self.slots):
            raise IndexError(f"slot {index} outside 1..{len(self.slots)}")
        return self.slots[index - 1]

    def short(self) -> str:
        return " ".join("R" if s is NormKind.RAIN else s.value for s in self.slots)


def _rain_at(indices) -> tuple[NormKind, ...]:
    # 1-based slot indices receive RAIN, the rest IN
    chosen = set(indices)
    return tuple(NormKind.RAIN if i in chosen else NormKind.IN for i in range(1, CANONICAL_SLOTS + 1))


def _canonical(name: str) -> tuple[NormKind, ...]:
    if name in _UNIFORM:
        return (_UNIFORM[name],) * CANONICAL_SLOTS
    d = CANONICAL_DEPTH
    if name == "RAIN-Decoder":
        return _rain_at(range(d + 1, 2 * d + 1))
    if name == "RAIN-Encoder":
        return _rain_at(range(1, d + 1))
    if m := re.fullmatch(r"RAIN-Decoder-([1-4])", name):
        k = int(m.group(1))
        return _rain_at(range(2 * d - k + 1, 2 * d + 1))
    if m := re.fullmatch(r"RAIN-([1-6])", name):
        k = int(m.group(1))
        return _rain_at(list(range(1, k + 1)) + list(range(2 * d - k + 1, 2 * d + 1)))
    if m := re.fullmatch(r"RAIN-Inner-([3-5])", name):
        k = int(m.group(1))
        return _rain_at(range(d - k + 1, d + k + 1))
    raise KeyError(name)


PLAN_NAMES: tuple[str, ...] = (
    ("None", "IN", "BN", "RN", "RAIN")
    + tuple(f"RAIN-Decoder-{k}" for k in range(1, 5))
    + ("RAIN-Decoder", "RAIN-Encoder")
    + tuple(f"RAIN-{k}" for k in range(1, 7))
    + tuple(f"RAIN-Inner-{k}" for k in range(3, 6))
)


class UnknownPlan(KeyError):
    def __str__(self) -> str:
        return f"unknown norm plan {self.args[0]!r}; valid plans: {', '.join(PLAN_NAMES)}"


def get_plan(name: str, depth: int = CANONICAL_DEPTH) -> NormPlan:
    if name not in PLAN_NAMES:
        raise UnknownPlan(name)
    full = _canonical(name)
    if depth == CANONICAL_DEPTH:
        return NormPlan(name, full)
    if name in _UNIFORM:
        return NormPlan(name, (full[0],) * (2 * depth))
    if not 1 <= depth < CANONICAL_DEPTH:
        raise ValueError(f"plan {name!r} is defined for depth <= {CANONICAL_DEPTH}, got depth {depth}")
    return NormPlan(name, full[:depth] + full[CANONICAL_SLOTS - depth :])
