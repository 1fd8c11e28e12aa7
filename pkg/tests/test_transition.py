from __future__ import annotations

import numpy as np
import pytest

from fewtag.corpus import LabelSet, split_label
from fewtag.transition import (
    END,
    LIVE_CELLS,
    NEG_SCORE,
    START,
    CollapsedTransitionTable,
    TransitionError,
    collapsed_index,
    expand_transitions,
    rule_mask,
    state_names,
)


def oracle_cell(prev: str, nxt: str) -> tuple[str, str]:
    """Independent cell classifier, written as a flat case analysis."""
    prev_abs = prev if prev in (START, "O") else prev[0]
    if nxt == "O":
        return prev_abs, "O"
    if nxt == END:
        return prev_abs, END
    nxt_prefix, nxt_slot = split_label(nxt)
    if prev in (START, "O"):
        return prev_abs, "sB" if nxt_prefix == "B" else "sI"
    prev_slot = split_label(prev)[1]
    same = "s" if prev_slot == nxt_slot else "d"
    return prev_abs, f"{same}{nxt_prefix}"


class TestCollapsedIndex:
    def test_paper_cases(self):
        assert collapsed_index("B-loc", "B-team") == ("B", "dB")
        assert collapsed_index("O", "B-x") == ("O", "sB")
        assert collapsed_index("B-loc", "I-loc") == ("B", "sI")
        assert collapsed_index("I-a", "O") == ("I", "O")

    def test_start_and_end(self):
        assert collapsed_index(START, "O") == (START, "O")
        assert collapsed_index(START, "B-a") == (START, "sB")
        assert collapsed_index(START, "I-a") == (START, "sI")
        assert collapsed_index("O", END) == ("O", END)
        assert collapsed_index("I-a", END) == ("I", END)

    def test_same_vs_different_inner(self):
        assert collapsed_index("I-a", "I-a") == ("I", "sI")
        assert collapsed_index("I-a", "I-b") == ("I", "dI")
        assert collapsed_index("I-a", "B-a") == ("I", "sB")

    def test_impossible_pairs(self):
        for prev, nxt in ((END, "O"), ("O", START), (START, END)):
            with pytest.raises(TransitionError):
                collapsed_index(prev, nxt)


class TestTable:
    def test_exactly_19_cells(self):
        assert len(LIVE_CELLS) == 19
        table = CollapsedTransitionTable()
        assert len(table.values) == 19

    def test_reject_non_live_cells(self):
        table = CollapsedTransitionTable()
        with pytest.raises(TransitionError):
            table[(START, "dB")]
        with pytest.raises(TransitionError):
            table[(START, "dB")] = 1.0
        with pytest.raises(TransitionError):
            CollapsedTransitionTable(values={(START, "O"): 0.0})

    def test_vector_round_trip(self):
        vec = np.arange(19, dtype=float)
        table = CollapsedTransitionTable.from_vector(vec)
        assert np.array_equal(table.as_vector(), vec)


class TestExpand:
    def test_direct_index_application(self):
        table = CollapsedTransitionTable.from_vector(np.arange(19, dtype=float))
        ls = LabelSet(("loc", "team"))
        exp = expand_transitions(table, ls)
        i = ls.label_id("B-loc")
        j = ls.label_id("I-team")
        assert exp.matrix[i, j] == table[("B", "dI")]

    def test_zero_table(self):
        exp = expand_transitions(CollapsedTransitionTable(), LabelSet(("a",)))
        states = state_names(LabelSet(("a",)))
        n = len(states)
        start, end = n - 2, n - 1
        for i in range(n):
            for j in range(n):
                impossible = i == end or j == start or (i == start and j == end)
                if impossible:
                    assert exp.matrix[i, j] == NEG_SCORE
                else:
                    assert exp.matrix[i, j] == 0.0

    @pytest.mark.parametrize("n_slots", [2, 3, 5])
    def test_matches_cell_oracle(self, n_slots):
        rng = np.random.default_rng(n_slots)
        table = CollapsedTransitionTable.from_vector(rng.standard_normal(19))
        ls = LabelSet(tuple(f"s{i}" for i in range(n_slots)))
        exp = expand_transitions(table, ls)
        states = state_names(ls)
        for i, prev in enumerate(states):
            for j, nxt in enumerate(states):
                if prev == END or nxt == START or (prev == START and nxt == END):
                    assert exp.matrix[i, j] == NEG_SCORE
                else:
                    assert exp.matrix[i, j] == table[oracle_cell(prev, nxt)]

    def test_tied_groups_with_distinct_values(self):
        table = CollapsedTransitionTable.from_vector(np.arange(19, dtype=float) + 1)
        ls = LabelSet(("a", "b", "c"))
        exp = expand_transitions(table, ls)
        states = state_names(ls)
        value_to_cells: dict[float, set] = {}
        for i, prev in enumerate(states):
            for j, nxt in enumerate(states):
                v = exp.matrix[i, j]
                if v == NEG_SCORE:
                    continue
                value_to_cells.setdefault(v, set()).add(collapsed_index(prev, nxt))
        assert len(value_to_cells) == 19
        for cells in value_to_cells.values():
            assert len(cells) == 1  # equal scores only within one collapsed cell

    def test_slot_permutation_equivariance(self):
        rng = np.random.default_rng(0)
        table = CollapsedTransitionTable.from_vector(rng.standard_normal(19))
        ls1 = LabelSet(("alpha", "beta"))
        ls2 = LabelSet(("beta", "alpha"))  # same set, same canonical order
        assert np.array_equal(
            expand_transitions(table, ls1).matrix, expand_transitions(table, ls2).matrix
        )
        # renaming slots permutes states; scores must follow the permutation
        renamed = LabelSet(("gamma", "beta"))  # alpha -> gamma
        exp1 = expand_transitions(table, ls1)
        exp2 = expand_transitions(table, renamed)
        mapping = {"alpha": "gamma", "beta": "beta"}

        def rename(state):
            if state in (START, END, "O"):
                return state
            prefix, slot = split_label(state)
            return f"{prefix}-{mapping[slot]}"

        states1 = state_names(ls1)
        states2 = state_names(renamed)
        index2 = {s: i for i, s in enumerate(states2)}
        perm = [index2[rename(s)] for s in states1]
        assert np.array_equal(exp1.matrix, exp2.matrix[np.ix_(perm, perm)])

    def test_changing_one_cell_changes_only_its_group(self):
        ls = LabelSet(("a", "b"))
        t1 = CollapsedTransitionTable.from_vector(np.zeros(19))
        t2 = t1.copy()
        t2[("B", "dB")] = 5.0
        m1 = expand_transitions(t1, ls).matrix
        m2 = expand_transitions(t2, ls).matrix
        states = state_names(ls)
        for i, prev in enumerate(states):
            for j, nxt in enumerate(states):
                if m1[i, j] == NEG_SCORE:
                    continue
                changed = m1[i, j] != m2[i, j]
                assert changed == (collapsed_index(prev, nxt) == ("B", "dB"))


class TestRuleMask:
    def test_basic_rules(self):
        ls = LabelSet(("a", "b"))
        mask = rule_mask(ls)
        states = state_names(ls)
        idx = {s: i for i, s in enumerate(states)}
        assert not mask[idx["O"], idx["I-a"]]
        assert mask[idx["B-a"], idx["I-a"]]
        assert not mask[idx["B-a"], idx["I-b"]]
        assert not mask[idx[START], idx["I-a"]]
        assert mask[idx[START], idx["B-b"]]
        assert mask[idx["I-a"], idx["I-a"]]

    def test_matches_enumerated_bio_legality(self):
        ls = LabelSet(("x", "y"))
        mask = rule_mask(ls)
        states = state_names(ls)
        for i, prev in enumerate(states):
            for j, nxt in enumerate(states):
                if prev == END or nxt == START or (prev == START and nxt == END):
                    assert not mask[i, j]
                    continue
                if nxt == END or nxt == "O" or nxt.startswith("B-"):
                    assert mask[i, j]
                else:  # I-slot
                    slot = split_label(nxt)[1]
                    assert mask[i, j] == (prev in (f"B-{slot}", f"I-{slot}"))
