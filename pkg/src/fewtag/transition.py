"""Collapsed label-transition table and its expansion to concrete label sets.

Label dependencies are learned over abstract tags only: the previous tag is
collapsed to one of {START, O, B, I} and the next tag to one of
{O, sB, dB, sI, dI, END}, where s/d distinguish whether the next B or I tag
shares the previous tag's slot type. The 19 live cells of this table are the
only transition parameters, whatever the size of the target label set.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .corpus import LabelSet, split_label

START = "START"
END = "END"

# scores at or below IMPOSSIBLE are treated as structurally forbidden
NEG_SCORE = -1e30
IMPOSSIBLE = -1e29

ROWS = (START, "O", "B", "I")
COLS = ("O", "sB", "dB", "sI", "dI", END)

LIVE_CELLS: tuple[tuple[str, str], ...] = (
    (START, "O"),
    (START, "sB"),
    (START, "sI"),
    ("O", "O"),
    ("O", "sB"),
    ("O", "sI"),
    ("O", END),
    ("B", "O"),
    ("B", "sB"),
    ("B", "dB"),
    ("B", "sI"),
    ("B", "dI"),
    ("B", END),
    ("I", "O"),
    ("I", "sB"),
    ("I", "dB"),
    ("I", "sI"),
    ("I", "dI"),
    ("I", END),
)

N_LIVE_CELLS = len(LIVE_CELLS)  # 19


class TransitionError(ValueError):
    pass


@dataclass
class CollapsedTransitionTable:
    """The learnable abstract-transition scores, one per live cell.

    Values are unconstrained log-potentials; normalization happens in the
    CRF partition function.
    """

    values: dict[tuple[str, str], float] = field(
        default_factory=lambda: {cell: 0.0 for cell in LIVE_CELLS}
    )

    def __post_init__(self):
        extra = set(self.values) - set(LIVE_CELLS)
        missing = set(LIVE_CELLS) - set(self.values)
        if extra or missing:
            raise TransitionError(
                f"table must have exactly the live cells; extra={sorted(extra)} "
                f"missing={sorted(missing)}"
            )
        for cell, v in self.values.items():
            if not np.isfinite(v):
                raise TransitionError(f"non-finite value at cell {cell}")

    def __getitem__(self, cell: tuple[str, str]) -> float:
        try:
            return self.values[cell]
        except KeyError:
            raise TransitionError(f"cell {cell} is not a live cell") from None

    def __setitem__(self, cell: tuple[str, str], value: float) -> None:
        if cell not in self.values:
            raise TransitionError(f"cell {cell} is not a live cell")
        self.values[cell] = float(value)

    def as_vector(self) -> np.ndarray:
        return np.array([self.values[c] for c in LIVE_CELLS])

    @classmethod
    def from_vector(cls, vec) -> "CollapsedTransitionTable":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (N_LIVE_CELLS,):
            raise TransitionError(f"expected {N_LIVE_CELLS} values, got {vec.shape}")
        return cls(values={c: float(v) for c, v in zip(LIVE_CELLS, vec)})

    def copy(self) -> "CollapsedTransitionTable":
        return CollapsedTransitionTable(values=dict(self.values))


def _abstract(state: str) -> tuple[str, str | None]:
    """Collapse a state to its abstract row tag plus slot (None for O/START)."""
    if state in (START, END):
        return state, None
    prefix, slot = split_label(state)
    return prefix, slot


def collapsed_index(prev: str, next_state: str) -> tuple[str, str]:
    """Map a concrete (prev, next) state pair to its live collapsed cell.

    States are BIO labels plus START/END. Raises for structurally impossible
    pairs (into START, out of END, START directly to END).
    """
    if next_state == START or prev == END:
        raise TransitionError(f"impossible transition ({prev} -> {next_state})")
    if prev == START and next_state == END:
        raise TransitionError("START -> END is impossible: sentences are nonempty")
    prev_tag, prev_slot = _abstract(prev)
    next_tag, next_slot = _abstract(next_state)
    if next_tag == END:
        return prev_tag, END
    if next_tag == "O":
        return prev_tag, "O"
    if prev_tag in (START, "O"):
        # from O (or the start) every B is "any B" and every I is "any I"
        return prev_tag, "sB" if next_tag == "B" else "sI"
    same = prev_slot == next_slot
    if next_tag == "B":
        return prev_tag, "sB" if same else "dB"
    return prev_tag, "sI" if same else "dI"


def state_names(label_set: LabelSet) -> tuple[str, ...]:
    """States of the expanded matrix: the bio labels, then START, then END."""
    return label_set.bio_labels + (START, END)


@dataclass
class ExpandedTransition:
    """A concrete (L+2)-state transition matrix filled from a collapsed table."""

    states: tuple[str, ...]
    matrix: np.ndarray

    @property
    def n_labels(self) -> int:
        return len(self.states) - 2

    @property
    def start_index(self) -> int:
        return len(self.states) - 2

    @property
    def end_index(self) -> int:
        return len(self.states) - 1


def _iter_possible_pairs(states: tuple[str, ...]) -> Iterator[tuple[int, int]]:
    n = len(states)
    start, end = n - 2, n - 1
    for i in range(n):
        if i == end:
            continue
        for j in range(n):
            if j == start or (i == start and j == end):
                continue
            yield i, j


def expand_transitions(
    table: CollapsedTransitionTable, label_set: LabelSet
) -> ExpandedTransition:
    """Fill the full transition matrix by copying each live cell's value into
    every concrete pair that collapses to it. Impossible cells get NEG_SCORE."""
    states = state_names(label_set)
    matrix = np.full((len(states), len(states)), NEG_SCORE)
    for i, j in _iter_possible_pairs(states):
        matrix[i, j] = table[collapsed_index(states[i], states[j])]
    return ExpandedTransition(states=states, matrix=matrix)


def rule_mask(label_set: LabelSet) -> np.ndarray:
    """Boolean legality matrix for the rule-based baseline.

    I-x may only follow B-x or I-x (so never opens a sentence); everything
    else among the structurally possible pairs is legal.
    """
    states = state_names(label_set)
    mask = np.zeros((len(states), len(states)), dtype=bool)
    for i, j in _iter_possible_pairs(states):
        next_tag, next_slot = _abstract(states[j])
        if next_tag == "I":
            prev_tag, prev_slot = _abstract(states[i])
            mask[i, j] = prev_tag in ("B", "I") and prev_slot == next_slot
        else:
            mask[i, j] = True
    return mask
