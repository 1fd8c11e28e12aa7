"""Linear-chain CRF scoring and decoding over emission + transition scores.

The score of a label sequence y for an n-token sentence is

    TRANS(y) + lambda * EMIT(y)

where TRANS sums the transition scores along START -> y_1 -> ... -> y_n -> END
and EMIT sums the per-token emission log-probabilities of the chosen labels.
All operations run in log space; structurally impossible transitions carry the
NEG_SCORE sentinel instead of -inf so that arithmetic never produces NaN.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .transition import IMPOSSIBLE, ExpandedTransition


class CrfError(ValueError):
    pass


@dataclass
class CrfScore:
    """Emission log-probabilities (n x L), expanded transitions, and scale."""

    emission: np.ndarray
    transition: ExpandedTransition
    lam: float = 1.0

    def __post_init__(self):
        self.emission = np.asarray(self.emission, dtype=float)
        if self.emission.ndim != 2 or self.emission.shape[0] < 1:
            raise CrfError(f"emission must be n x L with n >= 1, got {self.emission.shape}")
        if self.emission.shape[1] != self.transition.n_labels:
            raise CrfError(
                f"emission has {self.emission.shape[1]} labels, transition "
                f"matrix has {self.transition.n_labels}"
            )

    @property
    def n(self) -> int:
        return self.emission.shape[0]

    @property
    def n_labels(self) -> int:
        return self.emission.shape[1]


def _check_labels(score: CrfScore, labels: Sequence[int]) -> None:
    if len(labels) != score.n:
        raise CrfError(f"expected {score.n} labels, got {len(labels)}")
    for y in labels:
        if not 0 <= int(y) < score.n_labels:
            raise CrfError(f"label id {y} outside label set of size {score.n_labels}")


def sequence_score(score: CrfScore, labels: Sequence[int]) -> float:
    """TRANS(y) + lambda * EMIT(y), including the START and END transitions."""
    _check_labels(score, labels)
    trans = score.transition.matrix
    start, end = score.transition.start_index, score.transition.end_index
    total = trans[start, labels[0]]
    for t in range(1, score.n):
        total += trans[labels[t - 1], labels[t]]
    total += trans[labels[-1], end]
    emit = sum(score.emission[t, labels[t]] for t in range(score.n))
    return float(total + score.lam * emit)


def _forward(score: CrfScore) -> np.ndarray:
    """Log-space forward messages alpha, shape n x L."""
    trans = score.transition.matrix
    L = score.n_labels
    start = score.transition.start_index
    alpha = np.empty((score.n, L))
    alpha[0] = trans[start, :L] + score.lam * score.emission[0]
    for t in range(1, score.n):
        alpha[t] = (
            logsumexp(alpha[t - 1][:, None] + trans[:L, :L], axis=0)
            + score.lam * score.emission[t]
        )
    return alpha


def _backward(score: CrfScore) -> np.ndarray:
    """Log-space backward messages beta, shape n x L."""
    trans = score.transition.matrix
    L = score.n_labels
    end = score.transition.end_index
    beta = np.empty((score.n, L))
    beta[-1] = trans[:L, end]
    for t in range(score.n - 2, -1, -1):
        beta[t] = logsumexp(
            trans[:L, :L] + (score.lam * score.emission[t + 1] + beta[t + 1])[None, :],
            axis=1,
        )
    return beta


def log_partition(score: CrfScore) -> float:
    """log of the sum of exp(sequence_score) over all label sequences."""
    alpha = _forward(score)
    end = score.transition.end_index
    return float(logsumexp(alpha[-1] + score.transition.matrix[: score.n_labels, end]))


def nll_loss(score: CrfScore, gold: Sequence[int]) -> float:
    """Negative log-probability of the gold sequence; always >= 0."""
    return log_partition(score) - sequence_score(score, gold)


def posterior_marginals(score: CrfScore) -> tuple[np.ndarray, np.ndarray]:
    """Unary marginals (n x L) and adjacent pairwise marginals ((n-1) x L x L).

    Probabilities of structurally impossible pairs come out as exact zeros.
    """
    trans = score.transition.matrix
    L = score.n_labels
    alpha = _forward(score)
    beta = _backward(score)
    end = score.transition.end_index
    log_z = logsumexp(alpha[-1] + trans[:L, end])

    unary = np.exp(alpha + beta - log_z)
    pair = np.zeros((max(score.n - 1, 0), L, L))
    for t in range(score.n - 1):
        log_pair = (
            alpha[t][:, None]
            + trans[:L, :L]
            + (score.lam * score.emission[t + 1] + beta[t + 1])[None, :]
            - log_z
        )
        pair[t] = np.exp(log_pair)
    return unary, pair


def viterbi(score: CrfScore) -> tuple[list[int], float]:
    """Best label sequence and its score; ties resolve to the smallest id."""
    trans = score.transition.matrix
    L = score.n_labels
    start, end = score.transition.start_index, score.transition.end_index
    delta = trans[start, :L] + score.lam * score.emission[0]
    backptr = np.zeros((score.n, L), dtype=int)
    for t in range(1, score.n):
        cand = delta[:, None] + trans[:L, :L]
        backptr[t] = np.argmax(cand, axis=0)
        delta = cand[backptr[t], np.arange(L)] + score.lam * score.emission[t]
    final = delta + trans[:L, end]
    best_last = int(np.argmax(final))
    labels = [best_last]
    for t in range(score.n - 1, 0, -1):
        labels.append(int(backptr[t, labels[-1]]))
    labels.reverse()
    return labels, float(final[best_last])


def greedy_decode(emission: np.ndarray) -> list[int]:
    """Per-token argmax of the emission rows, ignoring transitions."""
    emission = np.asarray(emission)
    return [int(i) for i in np.argmax(emission, axis=1)]


def constrained_greedy(emission: np.ndarray, legal: np.ndarray) -> list[int]:
    """Left-to-right argmax restricted to transitions legal after the
    previously chosen label; falls back to label 0 (O) if nothing is legal."""
    emission = np.asarray(emission)
    n, L = emission.shape
    start = legal.shape[0] - 2
    prev = start
    out: list[int] = []
    for t in range(n):
        allowed = legal[prev, :L]
        if not allowed.any():
            choice = 0
        else:
            masked = np.where(allowed, emission[t], -np.inf)
            choice = int(np.argmax(masked))
        out.append(choice)
        prev = choice
    return out


def is_impossible(value: float) -> bool:
    return value <= IMPOSSIBLE
