"""K-shot support construction (minimum-including) and episode assembly."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import CorpusError, Domain, LabelSet, Sentence


class SamplingError(ValueError):
    """Raised when a support set or episode cannot be constructed."""


@dataclass(frozen=True)
class SupportSet:
    """The few labeled sentences available for a domain in one episode."""

    sentences: tuple[Sentence, ...]
    label_counts: Mapping[str, int]

    def __post_init__(self):
        object.__setattr__(self, "sentences", tuple(self.sentences))
        object.__setattr__(self, "label_counts", dict(self.label_counts))

    def __len__(self) -> int:
        return len(self.sentences)


@dataclass(frozen=True)
class Episode:
    domain_name: str
    support: SupportSet
    queries: tuple[Sentence, ...]
    label_set: LabelSet
    episode_id: int

    def __post_init__(self):
        object.__setattr__(self, "queries", tuple(self.queries))
        support_keys = set(self.support.sentences)
        for q in self.queries:
            if q in support_keys:
                raise SamplingError(
                    f"episode {self.episode_id}: query duplicates a support "
                    f"sentence: {' '.join(q.tokens)!r}"
                )


@dataclass(frozen=True)
class EpisodeSet:
    episodes: tuple[Episode, ...]
    k: int
    queries_per_episode: int
    rng_seed: int

    def __post_init__(self):
        object.__setattr__(self, "episodes", tuple(self.episodes))

    def __len__(self) -> int:
        return len(self.episodes)


def count_bio_labels(sentences: Iterable[Sentence]) -> Counter:
    counts: Counter = Counter()
    for sent in sentences:
        counts.update(sent.labels)
    return counts


def sample_support(
    domain: Domain,
    k: int,
    skip_prob: float = 0.2,
    rng: np.random.Generator | None = None,
) -> SupportSet:
    """Sample a K-shot support set with the minimum-including procedure.

    Greedy phase: walk the domain's BIO labels in their canonical order and
    keep adding sentences containing an under-covered label until every label
    occurring in the domain occurs at least ``k`` times. Shrink phase: revisit
    the selected sentences in insertion order and drop each one whose removal
    keeps full coverage; each removal attempt is skipped with probability
    ``skip_prob`` (the skip counters the greedy phase's bias toward
    slot-dense sentences).

    With ``skip_prob == 0`` the result is minimal: removing any single
    sentence breaks coverage.
    """
    if k < 1:
        raise SamplingError(f"k must be >= 1, got {k}")
    if not 0.0 <= skip_prob <= 1.0:
        raise SamplingError(f"skip_prob must be in [0, 1], got {skip_prob}")
    if rng is None:
        rng = np.random.default_rng()

    domain_counts = count_bio_labels(domain.sentences)
    active = [lab for lab in domain.label_set.bio_labels if domain_counts[lab] > 0]
    deficient = [lab for lab in active if domain_counts[lab] < k]
    if deficient:
        raise SamplingError(
            f"domain {domain.name!r} cannot cover k={k}: deficient labels "
            + ", ".join(f"{lab} ({domain_counts[lab]} < {k})" for lab in deficient)
        )

    per_sentence = [Counter(s.labels) for s in domain.sentences]
    selected: list[int] = []
    in_support: set[int] = set()
    counts: Counter = Counter()

    for lab in active:
        while counts[lab] < k:
            candidates = [
                i
                for i in range(len(domain.sentences))
                if i not in in_support and per_sentence[i][lab] > 0
            ]
            if not candidates:
                raise SamplingError(
                    f"domain {domain.name!r}: exhausted sentences for {lab}"
                )
            pick = candidates[int(rng.integers(len(candidates)))]
            selected.append(pick)
            in_support.add(pick)
            counts.update(per_sentence[pick])

    kept: list[int] = []
    for idx in selected:
        if skip_prob > 0 and rng.random() < skip_prob:
            kept.append(idx)
            continue
        occ = per_sentence[idx]
        if any(counts[lab] - occ[lab] < k for lab in occ):
            kept.append(idx)
        else:
            counts.subtract(occ)

    sentences = tuple(domain.sentences[i] for i in kept)
    return SupportSet(sentences=sentences, label_counts=count_bio_labels(sentences))


def sample_episode(
    domain: Domain,
    k: int,
    n_query: int,
    skip_prob: float = 0.2,
    rng: np.random.Generator | None = None,
    episode_id: int = 0,
) -> Episode:
    """Sample a support set plus ``n_query`` unincluded query sentences."""
    if n_query < 0:
        raise SamplingError(f"n_query must be >= 0, got {n_query}")
    if rng is None:
        rng = np.random.default_rng()
    support = sample_support(domain, k, skip_prob, rng)
    support_keys = set(support.sentences)
    remaining = [i for i, s in enumerate(domain.sentences) if s not in support_keys]
    if len(remaining) < n_query:
        raise SamplingError(
            f"domain {domain.name!r}: {len(remaining)} sentences left outside "
            f"the support set, need {n_query} queries"
        )
    chosen = rng.choice(len(remaining), size=n_query, replace=False) if n_query else []
    queries = tuple(domain.sentences[remaining[int(i)]] for i in chosen)
    return Episode(
        domain_name=domain.name,
        support=support,
        queries=queries,
        label_set=domain.label_set,
        episode_id=episode_id,
    )


def build_split(
    domains: Sequence[Domain],
    episodes_per_domain: int,
    k: int,
    n_query: int,
    seed: int,
    skip_prob: float = 0.2,
) -> EpisodeSet:
    """Sample ``episodes_per_domain`` episodes for each domain.

    Every (domain, episode) slot gets its own generator derived from
    ``seed``, so per-domain sampling is order-independent and can run
    concurrently without changing the result.
    """
    episodes: list[Episode] = []
    episode_id = 0
    for d_idx, domain in enumerate(domains):
        for e_idx in range(episodes_per_domain):
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=(seed, d_idx, e_idx))
            )
            try:
                episodes.append(
                    sample_episode(domain, k, n_query, skip_prob, rng, episode_id)
                )
            except SamplingError as exc:
                raise SamplingError(f"domain {domain.name!r}: {exc}") from None
            episode_id += 1
    return EpisodeSet(
        episodes=tuple(episodes),
        k=k,
        queries_per_episode=n_query,
        rng_seed=seed,
    )


def _sentence_to_doc(sent: Sentence) -> dict:
    return {"tokens": list(sent.tokens), "labels": list(sent.labels)}


def _sentence_from_doc(doc: dict) -> Sentence:
    return Sentence(tuple(doc["tokens"]), tuple(doc["labels"]))


def save_episodes(episode_set: EpisodeSet, path: str | Path) -> None:
    """Write an episode file: one meta line, then one JSON episode per line."""
    with open(path, "w", encoding="utf-8") as fh:
        meta = {
            "k": episode_set.k,
            "queries_per_episode": episode_set.queries_per_episode,
            "seed": episode_set.rng_seed,
        }
        fh.write(json.dumps(meta, sort_keys=True) + "\n")
        for ep in episode_set.episodes:
            doc = {
                "episode_id": ep.episode_id,
                "domain": ep.domain_name,
                "label_set": list(ep.label_set.slots),
                "support": [_sentence_to_doc(s) for s in ep.support.sentences],
                "queries": [_sentence_to_doc(s) for s in ep.queries],
            }
            fh.write(json.dumps(doc, sort_keys=True, ensure_ascii=False) + "\n")


def load_episodes(path: str | Path) -> EpisodeSet:
    path = Path(path)
    episodes: list[Episode] = []
    meta: dict = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON: {exc}") from None
            if "episode_id" not in doc:
                meta = doc
                continue
            support_sents = tuple(_sentence_from_doc(d) for d in doc["support"])
            episodes.append(
                Episode(
                    domain_name=doc["domain"],
                    support=SupportSet(
                        sentences=support_sents,
                        label_counts=count_bio_labels(support_sents),
                    ),
                    queries=tuple(_sentence_from_doc(d) for d in doc["queries"]),
                    label_set=LabelSet(tuple(doc["label_set"])),
                    episode_id=int(doc["episode_id"]),
                )
            )
    return EpisodeSet(
        episodes=tuple(episodes),
        k=int(meta.get("k", 0)),
        queries_per_episode=int(meta.get("queries_per_episode", 0)),
        rng_seed=int(meta.get("seed", 0)),
    )
