"""Labeled sequence data: sentences, per-domain BIO label sets, ingestion."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable


class CorpusError(ValueError):
    """Raised for malformed corpus files or inconsistent annotations."""


def split_label(label: str) -> tuple[str, str | None]:
    """Split a BIO tag into (prefix, slot). "O" has slot None.

    Raises CorpusError for anything outside the closed alphabet
    {O, B-<slot>, I-<slot>}.
    """
    if label == "O":
        return "O", None
    prefix, sep, slot = label.partition("-")
    if sep and slot and prefix in ("B", "I"):
        return prefix, slot
    raise CorpusError(f"invalid BIO label {label!r}")


@dataclass(frozen=True)
class Sentence:
    """A tokenized utterance with one BIO tag per token."""

    tokens: tuple[str, ...]
    labels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(self.tokens) == 0:
            raise CorpusError("sentence must have at least one token")
        if len(self.tokens) != len(self.labels):
            raise CorpusError(
                f"{len(self.tokens)} tokens but {len(self.labels)} labels"
            )
        for lab in self.labels:
            split_label(lab)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def slots(self) -> set[str]:
        return {split_label(l)[1] for l in self.labels if l != "O"}


@dataclass(frozen=True)
class LabelSet:
    """The BIO label alphabet of one domain, with a stable integer indexing.

    Slot names are kept in lexicographic order so that label ids, reference
    assignment and score matrices are reproducible across runs regardless of
    the order slots were first seen in the data.
    """

    slots: tuple[str, ...]
    bio_labels: tuple[str, ...] = field(init=False)

    def __post_init__(self):
        ordered = tuple(sorted(set(self.slots)))
        object.__setattr__(self, "slots", ordered)
        bio = ["O"]
        for s in ordered:
            bio.append(f"B-{s}")
            bio.append(f"I-{s}")
        object.__setattr__(self, "bio_labels", tuple(bio))
        object.__setattr__(
            self, "_index", {lab: i for i, lab in enumerate(bio)}
        )

    def __len__(self) -> int:
        return len(self.bio_labels)

    def label_id(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise CorpusError(f"label {label!r} not in label set") from None

    def label_of(self, label_id: int) -> str:
        return self.bio_labels[label_id]

    def __contains__(self, label: str) -> bool:
        return label in self._index


@dataclass(frozen=True)
class Domain:
    """A named collection of labeled sentences sharing one label set."""

    name: str
    sentences: tuple[Sentence, ...]
    label_set: LabelSet

    def __post_init__(self):
        object.__setattr__(self, "sentences", tuple(self.sentences))
        for sent in self.sentences:
            for slot in sent.slots:
                if f"B-{slot}" not in self.label_set:
                    raise CorpusError(
                        f"slot {slot!r} in sentence not in label set of "
                        f"domain {self.name!r}"
                    )

    def __len__(self) -> int:
        return len(self.sentences)


def domain_from_sentences(name: str, sentences: Iterable[Sentence]) -> Domain:
    """Build a Domain whose label set is derived from the observed slots."""
    sents = tuple(sentences)
    slots = sorted({s for sent in sents for s in sent.slots})
    return Domain(name=name, sentences=sents, label_set=LabelSet(tuple(slots)))


def load_conll(path: str | Path, name: str | None = None) -> Domain:
    """Load a two-column CoNLL file (token<TAB>label, blank line = boundary).

    The domain name defaults to the file stem.
    """
    path = Path(path)
    sentences: list[Sentence] = []
    tokens: list[str] = []
    labels: list[str] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                if tokens:
                    sentences.append(Sentence(tuple(tokens), tuple(labels)))
                    tokens, labels = [], []
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0]:
                raise CorpusError(
                    f"{path}:{lineno}: expected 'token<TAB>label', got {line!r}"
                )
            try:
                split_label(parts[1])
            except CorpusError as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from None
            tokens.append(parts[0])
            labels.append(parts[1])
    if tokens:
        sentences.append(Sentence(tuple(tokens), tuple(labels)))
    if not sentences:
        raise CorpusError(f"{path}: no sentences")
    return domain_from_sentences(name or path.stem, sentences)


def load_json(path: str | Path) -> Domain:
    """Load a domain from a JSON document {name, sentences:[{tokens,labels}]}."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict) or "name" not in doc or "sentences" not in doc:
        raise CorpusError(f"{path}: document must have 'name' and 'sentences'")
    sentences = []
    for i, rec in enumerate(doc["sentences"]):
        if not isinstance(rec, dict) or "tokens" not in rec or "labels" not in rec:
            raise CorpusError(f"{path}: sentence {i} must have tokens and labels")
        try:
            sentences.append(Sentence(tuple(rec["tokens"]), tuple(rec["labels"])))
        except CorpusError as exc:
            raise CorpusError(f"{path}: sentence {i}: {exc}") from None
    if not sentences:
        raise CorpusError(f"{path}: no sentences")
    return domain_from_sentences(str(doc["name"]), sentences)


def write_json(domain: Domain, path: str | Path) -> None:
    doc = {
        "name": domain.name,
        "sentences": [
            {"tokens": list(s.tokens), "labels": list(s.labels)}
            for s in domain.sentences
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, ensure_ascii=False, sort_keys=True)
        fh.write("\n")


@dataclass(frozen=True)
class BioViolation:
    index: int
    label: str
    reason: str


def validate_bio(sentence: Sentence, strict: bool = False) -> list[BioViolation]:
    """Check BIO well-formedness of one sentence.

    Lenient mode accepts anything over the closed alphabet (I-x after O is
    tolerated, the way the standard chunk scorer reads it). Strict mode flags
    every I-x whose predecessor is neither B-x nor I-x.
    """
    violations: list[BioViolation] = []
    if not strict:
        return violations
    prev = "O"
    for i, lab in enumerate(sentence.labels):
        prefix, slot = split_label(lab)
        if prefix == "I" and prev not in (f"B-{slot}", f"I-{slot}"):
            violations.append(
                BioViolation(i, lab, f"I-{slot} not preceded by B-{slot}/I-{slot}")
            )
        prev = lab
    return violations
