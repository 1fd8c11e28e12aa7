from __future__ import annotations

import itertools

import numpy as np
import pytest
from scipy.special import logsumexp

from fewtag.corpus import LabelSet
from fewtag.crf import (
    CrfError,
    CrfScore,
    constrained_greedy,
    greedy_decode,
    log_partition,
    nll_loss,
    posterior_marginals,
    sequence_score,
    viterbi,
)
from fewtag.transition import (
    NEG_SCORE,
    CollapsedTransitionTable,
    expand_transitions,
    rule_mask,
)

SLOT_SETS = {
    1: LabelSet(("a",)),
    2: LabelSet(("a", "b")),
}


def random_score(rng, n, n_slots, lam=None, scale=2.0) -> CrfScore:
    ls = SLOT_SETS[n_slots]
    table = CollapsedTransitionTable.from_vector(rng.standard_normal(19) * scale)
    trans = expand_transitions(table, ls)
    raw = rng.standard_normal((n, len(ls))) * scale
    emission = raw - logsumexp(raw, axis=1, keepdims=True)
    if lam is None:
        lam = float(rng.uniform(0.2, 2.0))
    return CrfScore(emission, trans, lam)


def all_sequences_scores(score: CrfScore) -> tuple[np.ndarray, np.ndarray]:
    """Score every one of the L^n sequences by direct summation."""
    n, L = score.emission.shape
    seqs = np.array(list(itertools.product(range(L), repeat=n)), dtype=int)
    trans = score.transition.matrix
    start, end = score.transition.start_index, score.transition.end_index
    totals = trans[start, seqs[:, 0]] + trans[seqs[:, -1], end]
    for t in range(1, n):
        totals = totals + trans[seqs[:, t - 1], seqs[:, t]]
    for t in range(n):
        totals = totals + score.lam * score.emission[t, seqs[:, t]]
    return seqs, totals


class TestSequenceScore:
    def test_single_token_zero_transitions(self):
        ls = SLOT_SETS[1]
        trans = expand_transitions(CollapsedTransitionTable(), ls)
        emission = np.log(np.array([[0.2, 0.3, 0.5]]))
        score = CrfScore(emission, trans, lam=1.0)
        assert sequence_score(score, [2]) == pytest.approx(emission[0, 2])

    def test_lambda_zero_is_transitions_only(self):
        rng = np.random.default_rng(0)
        score = random_score(rng, 3, 2, lam=0.0)
        trans = score.transition.matrix
        start, end = score.transition.start_index, score.transition.end_index
        y = [1, 2, 0]
        expect = trans[start, 1] + trans[1, 2] + trans[2, 0] + trans[0, end]
        assert sequence_score(score, y) == pytest.approx(expect, abs=1e-12)

    def test_term_by_term_recomputation(self):
        rng = np.random.default_rng(1)
        score = random_score(rng, 4, 1)  # 4 tokens x 3 labels
        y = [int(rng.integers(3)) for _ in range(4)]
        trans = score.transition.matrix
        start, end = score.transition.start_index, score.transition.end_index
        total = trans[start, y[0]]
        for t in range(1, 4):
            total += trans[y[t - 1], y[t]]
        total += trans[y[-1], end]
        total += score.lam * sum(score.emission[t, y[t]] for t in range(4))
        assert sequence_score(score, y) == pytest.approx(total, abs=1e-12)

    def test_label_out_of_range(self):
        score = random_score(np.random.default_rng(2), 2, 1)
        with pytest.raises(CrfError):
            sequence_score(score, [0, 99])
        with pytest.raises(CrfError):
            sequence_score(score, [0])


def uniform_score(n, L_slots, n_labels) -> CrfScore:
    ls = SLOT_SETS[L_slots]
    assert len(ls) == n_labels
    trans = expand_transitions(CollapsedTransitionTable(), ls)
    emission = np.zeros((n, n_labels))
    return CrfScore(emission, trans, lam=1.0)


class TestLogPartition:
    def test_uniform_cases(self):
        # all-zero scores: Z is just the number of sequences
        assert log_partition(uniform_score(1, 1, 3)) == pytest.approx(np.log(3))
        assert log_partition(uniform_score(2, 1, 3)) == pytest.approx(np.log(9))

    def test_matches_enumeration(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            n = int(rng.integers(1, 7))
            score = random_score(rng, n, int(rng.integers(1, 3)))
            _, totals = all_sequences_scores(score)
            assert log_partition(score) == pytest.approx(
                logsumexp(totals), abs=1e-8
            )

    def test_stable_for_large_scores(self):
        score = random_score(np.random.default_rng(4), 4, 1, scale=1.0)
        big = CrfScore(score.emission, score.transition, lam=1.0)
        big.emission = big.emission + 1e4
        assert np.isfinite(log_partition(big))

    def test_emission_shift_moves_logz_by_lam_n_c(self):
        rng = np.random.default_rng(5)
        score = random_score(rng, 5, 2, lam=0.7)
        base = log_partition(score)
        shifted = CrfScore(score.emission + 3.0, score.transition, score.lam)
        assert log_partition(shifted) == pytest.approx(
            base + 0.7 * 5 * 3.0, abs=1e-8
        )
        assert viterbi(score)[0] == viterbi(shifted)[0]


class TestNllLoss:
    def test_only_legal_sequence(self):
        ls = SLOT_SETS[1]
        trans = expand_transitions(CollapsedTransitionTable(), ls)
        matrix = np.full_like(trans.matrix, NEG_SCORE)
        start, end = trans.start_index, trans.end_index
        gold = [1, 2]
        matrix[start, 1] = 0.0
        matrix[1, 2] = 0.0
        matrix[2, end] = 0.0
        trans.matrix = matrix
        emission = np.log(np.full((2, 3), 1 / 3))
        assert nll_loss(CrfScore(emission, trans, 1.0), gold) == pytest.approx(0.0, abs=1e-9)

    def test_uniform_binary(self):
        ls = SLOT_SETS[1]
        trans = expand_transitions(CollapsedTransitionTable(), ls)
        score = CrfScore(np.zeros((1, 3)), trans, 1.0)
        assert nll_loss(score, [0]) == pytest.approx(np.log(3))

    def test_matches_enumerated_probability(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            n = int(rng.integers(1, 6))
            score = random_score(rng, n, 1)
            seqs, totals = all_sequences_scores(score)
            gold = [int(rng.integers(3)) for _ in range(n)]
            gold_idx = next(
                i for i, s in enumerate(seqs) if list(s) == gold
            )
            log_p = totals[gold_idx] - logsumexp(totals)
            assert nll_loss(score, gold) == pytest.approx(-log_p, abs=1e-8)
            assert nll_loss(score, gold) >= -1e-12


class TestViterbi:
    def test_one_hot_emissions(self):
        ls = SLOT_SETS[1]
        trans = expand_transitions(CollapsedTransitionTable(), ls)
        emission = np.log(np.array([[0.9, 0.05, 0.05], [0.1, 0.8, 0.1]]) )
        labels, _ = viterbi(CrfScore(emission, trans, 1.0))
        assert labels == [0, 1]

    def test_masked_transition_avoided(self):
        ls = SLOT_SETS[2]
        table = CollapsedTransitionTable()
        trans = expand_transitions(table, ls)
        i_ba = ls.label_id("B-a")
        i_ib = ls.label_id("I-b")
        trans.matrix[i_ba, i_ib] = NEG_SCORE
        emission = np.full((2, len(ls)), -10.0)
        emission[0, i_ba] = 0.0
        emission[1, i_ib] = 0.0
        labels, _ = viterbi(CrfScore(emission, trans, 1.0))
        assert labels != [i_ba, i_ib]

    def test_matches_enumeration(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            n = int(rng.integers(1, 7))
            score = random_score(rng, n, int(rng.integers(1, 3)))
            seqs, totals = all_sequences_scores(score)
            best = int(np.argmax(totals))
            labels, value = viterbi(score)
            assert labels == list(seqs[best])
            assert value == pytest.approx(totals[best], abs=1e-9)

    def test_uniform_ties_break_to_smallest(self):
        labels, _ = viterbi(uniform_score(3, 1, 3))
        assert labels == [0, 0, 0]

    def test_deterministic(self):
        score = random_score(np.random.default_rng(8), 5, 2)
        assert viterbi(score) == viterbi(score)

    def test_viterbi_below_log_partition(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            score = random_score(rng, int(rng.integers(1, 6)), 1)
            assert viterbi(score)[1] <= log_partition(score) + 1e-9


class TestMarginals:
    def test_unary_rows_sum_to_one(self):
        score = random_score(np.random.default_rng(10), 4, 2)
        unary, pair = posterior_marginals(score)
        assert np.allclose(unary.sum(axis=1), 1.0, atol=1e-9)
        assert np.allclose(pair.sum(axis=(1, 2)), 1.0, atol=1e-9)

    def test_matches_enumeration(self):
        rng = np.random.default_rng(11)
        score = random_score(rng, 3, 1)
        seqs, totals = all_sequences_scores(score)
        probs = np.exp(totals - logsumexp(totals))
        unary, pair = posterior_marginals(score)
        for t in range(3):
            for j in range(3):
                expect = probs[seqs[:, t] == j].sum()
                assert unary[t, j] == pytest.approx(expect, abs=1e-9)
        for t in range(2):
            for i in range(3):
                for j in range(3):
                    expect = probs[(seqs[:, t] == i) & (seqs[:, t + 1] == j)].sum()
                    assert pair[t, i, j] == pytest.approx(expect, abs=1e-9)


class TestGreedy:
    def test_one_hot(self):
        emission = np.log(np.array([[0.7, 0.2, 0.1], [0.1, 0.1, 0.8]]))
        assert greedy_decode(emission) == [0, 2]

    def test_uniform_tie_breaks_to_zero(self):
        assert greedy_decode(np.zeros((3, 4))) == [0, 0, 0]

    def test_equals_viterbi_with_zero_transitions(self):
        rng = np.random.default_rng(12)
        ls = SLOT_SETS[2]
        trans = expand_transitions(CollapsedTransitionTable(), ls)
        for _ in range(100):
            raw = rng.standard_normal((int(rng.integers(1, 8)), len(ls)))
            emission = raw - logsumexp(raw, axis=1, keepdims=True)
            score = CrfScore(emission, trans, lam=1.0)
            assert greedy_decode(emission) == viterbi(score)[0]


class TestConstrainedGreedy:
    def test_inner_blocked_at_start(self):
        ls = SLOT_SETS[2]
        legal = rule_mask(ls)
        i_ia = ls.label_id("I-a")
        emission = np.full((1, len(ls)), -5.0)
        emission[0, i_ia] = 0.0
        out = constrained_greedy(emission, legal)
        assert out[0] != i_ia

    def test_legal_favorites_equal_greedy(self):
        ls = SLOT_SETS[2]
        legal = rule_mask(ls)
        emission = np.full((3, len(ls)), -5.0)
        path = [ls.label_id("B-a"), ls.label_id("I-a"), ls.label_id("O")]
        for t, lab in enumerate(path):
            emission[t, lab] = 0.0
        assert constrained_greedy(emission, legal) == greedy_decode(emission)

    def test_hand_simulated_trace(self):
        # favorites: I-b, I-b, B-a, I-b, I-a
        # t0: I-b illegal after start      -> best legal is B-b (second best)
        # t1: I-b legal after B-b          -> I-b
        # t2: B-a always legal             -> B-a
        # t3: I-b illegal after B-a        -> falls to B-b (next best)
        # t4: I-a illegal after B-b        -> falls to I-b
        ls = SLOT_SETS[2]
        legal = rule_mask(ls)
        ib, ia, ba, bb, o = (
            ls.label_id("I-b"),
            ls.label_id("I-a"),
            ls.label_id("B-a"),
            ls.label_id("B-b"),
            ls.label_id("O"),
        )
        emission = np.full((5, len(ls)), -9.0)
        emission[0, ib], emission[0, bb] = 0.0, -1.0
        emission[1, ib] = 0.0
        emission[2, ba] = 0.0
        emission[3, ib], emission[3, bb] = 0.0, -1.0
        emission[4, ia], emission[4, ib] = 0.0, -1.0
        assert constrained_greedy(emission, legal) == [bb, ib, ba, bb, ib]
