"""Token and label-name vectors: deterministic hash embedder and file store.

Query words are embedded once per support sentence (pair-conditioned records
produced offline) and averaged here; support words take the vectors from
their own (query, support) pair. A context-free provider such as the hash
embedder collapses both to plain per-sentence embeddings.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from .corpus import Sentence, split_label
from .episodes import SupportSet

TOKEN_KEY_KIND = "tok"
LABEL_KEY_KIND = "lab"

TokenKey = tuple[int, str, int, int, int]  # (episode, role, sent, pair, token)
LabelKey = tuple[str, str]  # (domain, bio label)

# pair index used for records encoded without a paired sentence
SOLO_PAIR = -1


class EmbeddingError(ValueError):
    """Raised for missing records or dimension mismatches."""


def default_label_text(bio_label: str) -> str:
    """Natural-language rendering of a BIO label for semantic embedding.

    B-x becomes "begin x", I-x becomes "inner x", O stays "O"; underscores in
    slot names read as spaces.
    """
    prefix, slot = split_label(bio_label)
    if slot is None:
        return "O"
    word = "begin" if prefix == "B" else "inner"
    return f"{word} {slot.replace('_', ' ')}"


def hash_embed(token: str, dim: int, seed: int = 0) -> np.ndarray:
    """Deterministic unit-norm vector for a token.

    The generator is seeded with a 64-bit digest of (seed, dim, lowercased
    token), so the mapping is stable across processes and platforms.
    """
    if dim < 1:
        raise EmbeddingError(f"dim must be >= 1, got {dim}")
    digest = hashlib.blake2b(
        f"{seed}|{dim}|{token.lower()}".encode("utf-8"), digest_size=8
    ).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    vec = rng.standard_normal(dim)
    norm = np.linalg.norm(vec)
    if norm == 0.0:  # probability zero, but keep the contract total
        vec[0] = 1.0
        norm = 1.0
    return vec / norm


class EmbeddingProvider(Protocol):
    dim: int
    context_free: bool

    def sentence_embedding(self, sentence: Sentence) -> np.ndarray: ...

    def label_vector(self, bio_label: str, domain: str) -> np.ndarray: ...


class HashEmbedder:
    """Context-free provider backed by hash_embed; test-scale encoder stand-in."""

    context_free = True

    def __init__(self, dim: int, seed: int = 0, label_text=default_label_text):
        self.dim = dim
        self.seed = seed
        self.label_text = label_text

    def sentence_embedding(self, sentence: Sentence) -> np.ndarray:
        return np.stack([hash_embed(t, self.dim, self.seed) for t in sentence.tokens])

    def label_vector(self, bio_label: str, domain: str) -> np.ndarray:
        return hash_embed(self.label_text(bio_label), self.dim, self.seed)


@dataclass
class EmbeddingStore:
    """Immutable in-memory view of precomputed token and label vectors."""

    dim: int
    token_records: dict[TokenKey, np.ndarray] = field(default_factory=dict)
    label_records: dict[LabelKey, np.ndarray] = field(default_factory=dict)

    context_free = False

    def token_vec(
        self, episode_id: int, role: str, sent_idx: int, pair_idx: int, tok_idx: int
    ) -> np.ndarray:
        key = (episode_id, role, sent_idx, pair_idx, tok_idx)
        try:
            return self.token_records[key]
        except KeyError:
            raise EmbeddingError(f"missing token record for key {key}") from None

    def label_vector(self, bio_label: str, domain: str) -> np.ndarray:
        key = (domain, bio_label)
        try:
            return self.label_records[key]
        except KeyError:
            raise EmbeddingError(f"missing label record for key {key}") from None

    def put_token(self, key: TokenKey, vec: np.ndarray) -> None:
        self._check_dim(vec, key)
        self.token_records[tuple(key)] = np.asarray(vec, dtype=np.float64)

    def put_label(self, key: LabelKey, vec: np.ndarray) -> None:
        self._check_dim(vec, key)
        self.label_records[tuple(key)] = np.asarray(vec, dtype=np.float64)

    def _check_dim(self, vec, key) -> None:
        if len(vec) != self.dim:
            raise EmbeddingError(
                f"record {key} has dimension {len(vec)}, store dimension {self.dim}"
            )


def pairwise_query_embedding(
    query: Sentence,
    support: SupportSet,
    source: EmbeddingStore | EmbeddingProvider,
    episode_id: int = 0,
    query_index: int = 0,
    pairwise: bool = True,
) -> np.ndarray:
    """Per-token query vectors, averaged over all (query, support) pairs.

    Each query token has one record per support sentence; its final vector is
    the arithmetic mean of those |S| pair-conditioned vectors. With
    ``pairwise=False`` (or a context-free provider) the tokens are embedded
    independently of the support set.
    """
    if getattr(source, "context_free", False):
        return source.sentence_embedding(query)
    store: EmbeddingStore = source
    n_support = len(support.sentences)
    if not pairwise:
        return np.stack(
            [
                store.token_vec(episode_id, "query", query_index, SOLO_PAIR, t)
                for t in range(len(query))
            ]
        )
    if n_support == 0:
        raise EmbeddingError("cannot pair-embed against an empty support set")
    out = np.zeros((len(query), store.dim))
    for pair_idx in range(n_support):
        for t in range(len(query)):
            out[t] += store.token_vec(episode_id, "query", query_index, pair_idx, t)
    return out / n_support


def support_token_embeddings(
    support: SupportSet,
    query: Sentence | None,
    source: EmbeddingStore | EmbeddingProvider,
    episode_id: int = 0,
    query_index: int = 0,
    pairwise: bool = True,
) -> list[np.ndarray]:
    """Per-token vectors for every support sentence.

    Store-backed lookups take support sentence i's tokens from the
    (query, support_i) pair encoding; context-free providers ignore the query.
    """
    if getattr(source, "context_free", False):
        return [source.sentence_embedding(s) for s in support.sentences]
    store: EmbeddingStore = source
    pair = query_index if pairwise else SOLO_PAIR
    out = []
    for s_idx, sent in enumerate(support.sentences):
        out.append(
            np.stack(
                [
                    store.token_vec(episode_id, "support", s_idx, pair, t)
                    for t in range(len(sent))
                ]
            )
        )
    return out


def label_semantic_embedding(
    bio_label: str,
    domain: str,
    source: EmbeddingStore | EmbeddingProvider,
) -> np.ndarray:
    return source.label_vector(bio_label, domain)


def _key_to_json(kind: str, key: tuple) -> list:
    return [kind, *key]


def save_store(store: EmbeddingStore, path: str | Path) -> None:
    """Write the store: one JSON header line, then one JSON record per line.

    Vectors are serialized at 32-bit float precision.
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"dim": store.dim, "kind": "f32"}) + "\n")
        for key in sorted(store.token_records):
            vec = np.asarray(store.token_records[key], dtype=np.float32)
            rec = {"key": _key_to_json(TOKEN_KEY_KIND, key), "vec": [float(x) for x in vec]}
            fh.write(json.dumps(rec) + "\n")
        for key in sorted(store.label_records):
            vec = np.asarray(store.label_records[key], dtype=np.float32)
            rec = {"key": _key_to_json(LABEL_KEY_KIND, key), "vec": [float(x) for x in vec]}
            fh.write(json.dumps(rec) + "\n")


def load_store(path: str | Path) -> EmbeddingStore:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
            dim = int(header["dim"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError):
            raise EmbeddingError(f"{path}: malformed store header") from None
        store = EmbeddingStore(dim=dim)
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                key = rec["key"]
                vec = np.asarray(rec["vec"], dtype=np.float64)
            except (json.JSONDecodeError, KeyError) as exc:
                raise EmbeddingError(f"{path}:{lineno}: bad record: {exc}") from None
            if len(vec) != dim:
                raise EmbeddingError(
                    f"{path}:{lineno}: vector of length {len(vec)} in a "
                    f"dimension-{dim} store"
                )
            kind = key[0]
            if kind == TOKEN_KEY_KIND:
                ep, role, sent_idx, pair_idx, tok_idx = key[1:]
                store.put_token(
                    (int(ep), str(role), int(sent_idx), int(pair_idx), int(tok_idx)),
                    vec,
                )
            elif kind == LABEL_KEY_KIND:
                domain, label = key[1:]
                store.put_label((str(domain), str(label)), vec)
            else:
                raise EmbeddingError(f"{path}:{lineno}: unknown key kind {kind!r}")
    return store
