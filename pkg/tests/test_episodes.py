from __future__ import annotations

from collections import Counter

import numpy as np
import pytest

from fewtag.corpus import Sentence, domain_from_sentences
from fewtag.episodes import (
    SamplingError,
    build_split,
    count_bio_labels,
    load_episodes,
    sample_episode,
    sample_support,
    save_episodes,
)

from synth import make_domain


def covers(support, domain, k) -> bool:
    """Criterion 1: every label occurring in the domain occurs >= k times."""
    domain_counts = count_bio_labels(domain.sentences)
    sup_counts = count_bio_labels(support.sentences)
    return all(
        sup_counts[lab] >= k for lab, n in domain_counts.items() if n > 0
    )


def is_minimal(support, domain, k) -> bool:
    """Criterion 2: removing any one sentence breaks criterion 1."""
    domain_counts = count_bio_labels(domain.sentences)
    active = [lab for lab, n in domain_counts.items() if n > 0]
    sup_counts = count_bio_labels(support.sentences)
    for sent in support.sentences:
        removed = Counter(sup_counts)
        removed.subtract(Counter(sent.labels))
        if all(removed[lab] >= k for lab in active):
            return False
    return True


class TestSampleSupport:
    def test_minimality_forced(self):
        # one distinct label per sentence: the support must be one per label
        domain = domain_from_sentences(
            "d",
            [
                Sentence(("a",), ("B-a",)),
                Sentence(("b",), ("B-b",)),
                Sentence(("c",), ("B-c",)),
            ],
        )
        support = sample_support(domain, k=1, skip_prob=0.0,
                                 rng=np.random.default_rng(0))
        assert len(support) == 3
        assert covers(support, domain, 1)

    def test_label_may_repeat_to_cover_all(self):
        # co-occurrence can force a label above k occurrences
        domain = domain_from_sentences(
            "d",
            [
                Sentence(("x", "y"), ("B-a", "B-b")),
                Sentence(("x", "z"), ("B-a", "B-c")),
                Sentence(("q",), ("B-b",)),
                Sentence(("r",), ("B-c",)),
            ],
        )
        for seed in range(20):
            support = sample_support(domain, k=1, skip_prob=0.0,
                                     rng=np.random.default_rng(seed))
            assert covers(support, domain, 1)
            assert is_minimal(support, domain, 1)

    @pytest.mark.parametrize("k", [1, 5])
    def test_criteria_on_synthetic_domain(self, k):
        domain = make_domain("synth", np.random.default_rng(3), n_sentences=200)
        rng = np.random.default_rng(99)
        for _ in range(100):
            support = sample_support(domain, k=k, skip_prob=0.0, rng=rng)
            assert covers(support, domain, k)
            assert is_minimal(support, domain, k)

    def test_skip_prob_keeps_coverage(self):
        domain = make_domain("synth", np.random.default_rng(4), n_sentences=150)
        rng = np.random.default_rng(1)
        for _ in range(50):
            support = sample_support(domain, k=1, skip_prob=0.2, rng=rng)
            assert covers(support, domain, 1)

    def test_infeasible_lists_deficient_labels(self):
        domain = domain_from_sentences("d", [Sentence(("a",), ("B-a",))])
        with pytest.raises(SamplingError, match="B-a"):
            sample_support(domain, k=2, rng=np.random.default_rng(0))

    def test_bad_k(self):
        domain = domain_from_sentences("d", [Sentence(("a",), ("B-a",))])
        with pytest.raises(SamplingError):
            sample_support(domain, k=0, rng=np.random.default_rng(0))

    def test_label_counts_consistent(self):
        domain = make_domain("synth", np.random.default_rng(5), n_sentences=80)
        support = sample_support(domain, k=1, rng=np.random.default_rng(2))
        assert support.label_counts == count_bio_labels(support.sentences)

    def test_average_size_sanity_bound(self):
        domain = make_domain("snipslike", np.random.default_rng(6), n_sentences=200)
        rng = np.random.default_rng(17)
        sizes = [
            len(sample_support(domain, k=1, skip_prob=0.2, rng=rng))
            for _ in range(200)
        ]
        assert sum(sizes) / len(sizes) < len(domain.label_set.bio_labels) * 1 * 2


class TestSampleEpisode:
    def test_disjoint_queries(self):
        domain = make_domain("d", np.random.default_rng(7), n_sentences=100)
        ep = sample_episode(domain, k=1, n_query=20, skip_prob=0.2,
                            rng=np.random.default_rng(11))
        assert len(ep.queries) == 20
        assert not set(ep.queries) & set(ep.support.sentences)

    def test_zero_queries(self):
        domain = make_domain("d", np.random.default_rng(8), n_sentences=50)
        ep = sample_episode(domain, k=1, n_query=0, rng=np.random.default_rng(0))
        assert ep.queries == ()

    def test_insufficient_remaining(self):
        domain = domain_from_sentences(
            "d", [Sentence(("a",), ("B-a",)), Sentence(("b",), ("O",))]
        )
        with pytest.raises(SamplingError, match="queries"):
            sample_episode(domain, k=1, n_query=10, rng=np.random.default_rng(0))

    def test_determinism_replay(self):
        domain = make_domain("d", np.random.default_rng(9), n_sentences=100)
        ep1 = sample_episode(domain, k=1, n_query=10, skip_prob=0.2,
                             rng=np.random.default_rng(42))
        ep2 = sample_episode(domain, k=1, n_query=10, skip_prob=0.2,
                             rng=np.random.default_rng(42))
        assert ep1 == ep2

    def test_content_disjointness_with_duplicates(self):
        # the domain holds two copies of one sentence: the copy outside the
        # support must still not appear as a query
        dup = Sentence(("x", "pad"), ("B-a", "O"))
        domain = domain_from_sentences(
            "d", [dup, dup, Sentence(("y", "pad"), ("B-a", "O"))]
        )
        for seed in range(30):
            ep = sample_episode(domain, k=1, n_query=1,
                                rng=np.random.default_rng(seed))
            assert ep.queries[0] not in set(ep.support.sentences)


class TestBuildSplit:
    def test_counts(self):
        domain = make_domain("d", np.random.default_rng(10), n_sentences=120)
        split = build_split([domain], episodes_per_domain=100, k=1, n_query=20, seed=5)
        assert len(split) == 100
        assert sum(len(e.queries) for e in split.episodes) == 2000

    def test_empty(self):
        domain = make_domain("d", np.random.default_rng(11), n_sentences=60)
        split = build_split([domain], episodes_per_domain=0, k=1, n_query=5, seed=0)
        assert len(split) == 0

    def test_round_trip(self, tmp_path):
        domains = [
            make_domain("d1", np.random.default_rng(12), n_sentences=80),
            make_domain("d2", np.random.default_rng(13), n_sentences=80),
        ]
        split = build_split(domains, episodes_per_domain=3, k=1, n_query=4, seed=9)
        path = tmp_path / "episodes.jsonl"
        save_episodes(split, path)
        assert load_episodes(path) == split

    def test_error_names_domain(self):
        bad = domain_from_sentences("tinydom", [Sentence(("a",), ("B-a",))])
        with pytest.raises(SamplingError, match="tinydom"):
            build_split([bad], episodes_per_domain=1, k=2, n_query=0, seed=0)

    def test_replay_is_identical(self):
        d1 = make_domain("d1", np.random.default_rng(14), n_sentences=80)
        d2 = make_domain("d2", np.random.default_rng(15), n_sentences=80)
        both = build_split([d1, d2], episodes_per_domain=2, k=1, n_query=3, seed=21)
        again = build_split([d1, d2], episodes_per_domain=2, k=1, n_query=3, seed=21)
        assert again == both
