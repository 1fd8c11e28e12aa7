"""Per-token label emission scores from similarity to label representations.

A label is represented by mixing three ingredients: a learnable reference
vector shared across domains, the semantic embedding of the label's name, and
the prototype (mean support vector) observed in the episode. The projected
variants additionally build a projection that nulls the alignment error
between (label-enhanced) references and prototypes, then score tokens by dot
product in the projected space; the prototype-only variants score by negative
squared distance in the raw space.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

VARIANTS = ("wpz", "l-wpz", "tapnet", "l-tapnet")
ABLATIONS = ("pairwise", "label-semantic", "prototype", "cdt")

DEFAULT_ALPHA = 0.5
DEFAULT_BETA = 0.7

# singular values below this fraction of the largest count as zero when
# sizing the null space
SV_RTOL = 1e-9
DEGENERATE_NORM = 1e-12


class EmissionError(ValueError):
    pass


@dataclass
class ReferencePool:
    """Learnable per-label anchor vectors shared across domains."""

    refs: np.ndarray

    def __post_init__(self):
        self.refs = np.asarray(self.refs, dtype=float)
        if self.refs.ndim != 2:
            raise EmissionError(f"reference pool must be 2-d, got {self.refs.shape}")
        if not np.all(np.isfinite(self.refs)):
            raise EmissionError("reference pool contains non-finite entries")

    @property
    def n_pool(self) -> int:
        return self.refs.shape[0]

    @property
    def dim(self) -> int:
        return self.refs.shape[1]

    @classmethod
    def initialize(cls, n_pool: int, dim: int, seed: int = 0) -> "ReferencePool":
        """Random init on the float32 grid (checkpoints store f32 exactly)."""
        salt = int.from_bytes(b"refs", "little")
        rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, salt)))
        refs = rng.standard_normal((n_pool, dim)) / np.sqrt(dim)
        return cls(refs=refs.astype(np.float32).astype(np.float64))


@dataclass(frozen=True)
class ScorerConfig:
    """Resolved scorer settings: variant plus the knobs it fixes or exposes."""

    variant: str
    alpha: float
    beta: float
    project: bool
    similarity: str  # "dot" | "neg_sq_euclid"
    d_proj: int | None = None
    pairwise: bool = True
    use_cdt: bool = True


def build_scorer(
    variant: str,
    alpha: float | None = None,
    beta: float | None = None,
    d_proj: int | None = None,
    ablate: Sequence[str] = (),
) -> ScorerConfig:
    """Resolve a scorer variant name plus ablation flags into a config.

    wpz: prototypes only, squared-distance similarity. l-wpz: adds label-name
    semantics into the label representation. tapnet: references plus the
    error-nulling projection, dot-product similarity. l-tapnet: both.
    """
    variant = variant.lower()
    if variant not in VARIANTS:
        raise EmissionError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    for flag in ablate:
        if flag not in ABLATIONS:
            raise EmissionError(f"unknown ablation {flag!r}; choose from {ABLATIONS}")

    if variant == "wpz":
        if alpha not in (None, 0.0) or beta not in (None, 0.0):
            raise EmissionError("wpz fixes alpha=0 and beta=0")
        cfg = ScorerConfig("wpz", 0.0, 0.0, project=False, similarity="neg_sq_euclid")
    elif variant == "l-wpz":
        cfg = ScorerConfig(
            "l-wpz",
            1.0 if alpha is None else alpha,
            DEFAULT_BETA if beta is None else beta,
            project=False,
            similarity="neg_sq_euclid",
        )
    elif variant == "tapnet":
        if alpha not in (None, 0.0):
            raise EmissionError("tapnet fixes alpha=0 (no label semantics)")
        if beta not in (None, 1.0):
            raise EmissionError("tapnet fixes beta=1 (no prototype mixing)")
        cfg = ScorerConfig("tapnet", 0.0, 1.0, project=True, similarity="dot", d_proj=d_proj)
    else:
        cfg = ScorerConfig(
            "l-tapnet",
            DEFAULT_ALPHA if alpha is None else alpha,
            DEFAULT_BETA if beta is None else beta,
            project=True,
            similarity="dot",
            d_proj=d_proj,
        )

    if not 0.0 <= cfg.alpha <= 1.0:
        raise EmissionError(f"alpha must be in [0, 1], got {cfg.alpha}")
    if not 0.0 <= cfg.beta <= 1.0:
        raise EmissionError(f"beta must be in [0, 1], got {cfg.beta}")

    if "label-semantic" in ablate:
        cfg = replace(cfg, alpha=0.0)
    if "prototype" in ablate:
        cfg = replace(cfg, beta=1.0)
    if "pairwise" in ablate:
        cfg = replace(cfg, pairwise=False)
    if "cdt" in ablate:
        cfg = replace(cfg, use_cdt=False)
    return cfg


def assign_references(
    pool: ReferencePool,
    n_labels: int,
    mode: str = "deterministic",
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Injective map label id -> pool row.

    Training uses mode="random" to reshuffle the association per episode;
    evaluation uses the deterministic identity on the canonical label order.
    """
    if pool.n_pool < n_labels:
        raise EmissionError(
            f"reference pool has {pool.n_pool} rows, need {n_labels}"
        )
    if mode == "deterministic":
        return np.arange(n_labels)
    if mode == "random":
        if rng is None:
            raise EmissionError("random assignment requires a generator")
        return rng.permutation(pool.n_pool)[:n_labels]
    raise EmissionError(f"unknown assignment mode {mode!r}")


def compute_prototypes(
    support_embeddings: Sequence[np.ndarray],
    support_label_ids: Sequence[Sequence[int]],
    n_labels: int,
    dim: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Mean support vector per label; labels with no support tokens are
    flagged absent (their prototype row is all zeros and must not be read)."""
    totals = np.zeros((n_labels, dim))
    counts = np.zeros(n_labels)
    for emb, ids in zip(support_embeddings, support_label_ids):
        emb = np.asarray(emb, dtype=float)
        if emb.shape != (len(ids), dim):
            raise EmissionError(
                f"support embedding shape {emb.shape} does not match "
                f"{len(ids)} tokens of dimension {dim}"
            )
        for t, j in enumerate(ids):
            totals[j] += emb[t]
            counts[j] += 1
    present = counts > 0
    prototypes = np.zeros((n_labels, dim))
    prototypes[present] = totals[present] / counts[present, None]
    return prototypes, present


def enhanced_references(
    phi_assigned: np.ndarray, semantics: np.ndarray, alpha: float
) -> np.ndarray:
    """psi = (1 - alpha) * phi + alpha * s, rowwise."""
    if not 0.0 <= alpha <= 1.0:
        raise EmissionError(f"alpha must be in [0, 1], got {alpha}")
    return (1.0 - alpha) * phi_assigned + alpha * semantics


def error_nulling_projection(
    psi: np.ndarray,
    prototypes: np.ndarray,
    present: np.ndarray,
    d_proj: int | None = None,
) -> np.ndarray:
    """Projection whose range is orthogonal to the reference-prototype
    alignment errors.

    For each label k with a present prototype, the other present labels' mean
    is subtracted from psi_k, both sides are normalized, and the difference
    forms an error vector. The returned D x d matrix has orthonormal columns
    spanning directions on which every error vector has (numerically) zero
    component, taken from the singular decomposition of the stacked errors.
    Default d is D minus the number of present labels.
    """
    psi = np.asarray(psi, dtype=float)
    prototypes = np.asarray(prototypes, dtype=float)
    present = np.asarray(present, dtype=bool)
    dim = psi.shape[1]
    idx = np.flatnonzero(present)
    n_present = len(idx)
    if n_present == 0:
        raise EmissionError("no labels with present prototypes")
    if dim <= n_present:
        raise EmissionError(
            f"dimension {dim} must exceed the {n_present} labels with prototypes"
        )

    psi_p = psi[idx]
    c_p = prototypes[idx]
    if n_present == 1:
        psi_tilde = psi_p.copy()
    else:
        total = psi_p.sum(axis=0)
        psi_tilde = psi_p - (total - psi_p) / (n_present - 1)

    psi_norms = np.linalg.norm(psi_tilde, axis=1)
    c_norms = np.linalg.norm(c_p, axis=1)
    bad = (psi_norms < DEGENERATE_NORM) | (c_norms < DEGENERATE_NORM)
    if bad.any():
        raise EmissionError(
            "degenerate geometry: vanishing norm for labels "
            f"{[int(i) for i in idx[bad]]}"
        )
    errors = psi_tilde / psi_norms[:, None] - c_p / c_norms[:, None]

    _, sv, vt = np.linalg.svd(errors, full_matrices=True)
    tol = SV_RTOL * sv[0] if sv.size and sv[0] > 0 else 0.0
    rank = int(np.sum(sv > tol))
    null_dim = dim - rank
    d = dim - n_present if d_proj is None else d_proj
    if d < 1:
        raise EmissionError(f"projected dimension must be >= 1, got {d}")
    if d > null_dim:
        raise EmissionError(
            f"projected dimension {d} exceeds the {null_dim}-dimensional "
            "orthogonal complement of the error span"
        )
    return vt[dim - d :].T


def label_representations(
    prototypes: np.ndarray,
    present: np.ndarray,
    psi: np.ndarray,
    beta: float,
) -> np.ndarray:
    """omega = (1 - beta) * c + beta * psi; labels without a prototype fall
    back to psi alone."""
    if not 0.0 <= beta <= 1.0:
        raise EmissionError(f"beta must be in [0, 1], got {beta}")
    omega = np.array(psi, dtype=float, copy=True)
    pres = np.asarray(present, dtype=bool)
    omega[pres] = (1.0 - beta) * prototypes[pres] + beta * psi[pres]
    return omega


def similarity_scores(
    query_emb: np.ndarray,
    omega: np.ndarray,
    projection: np.ndarray | None,
    similarity: str,
) -> np.ndarray:
    """Raw (pre-softmax) similarity of each token to each label representation."""
    query_emb = np.asarray(query_emb, dtype=float)
    if similarity == "dot":
        if projection is not None:
            return (query_emb @ projection) @ (omega @ projection).T
        return query_emb @ omega.T
    if similarity == "neg_sq_euclid":
        diff = query_emb[:, None, :] - omega[None, :, :]
        return -np.sum(diff * diff, axis=2)
    raise EmissionError(f"unknown similarity {similarity!r}")


def emission_scores(
    query_emb: np.ndarray,
    omega: np.ndarray,
    projection: np.ndarray | None,
    similarity: str,
) -> np.ndarray:
    """Per-token emission log-probabilities: log-softmax over labels of the
    similarity scores. Every row log-sum-exps to zero."""
    z = similarity_scores(query_emb, omega, projection, similarity)
    return z - logsumexp(z, axis=1, keepdims=True)


@dataclass
class EpisodeBindings:
    """Everything episode-specific the scorer needs, built from one support set."""

    assignment: np.ndarray
    prototypes: np.ndarray
    present: np.ndarray
    semantics: np.ndarray
    psi: np.ndarray
    omega: np.ndarray
    projection: np.ndarray | None
    config: ScorerConfig

    def with_references(self, phi_assigned: np.ndarray) -> "EpisodeBindings":
        """Recompute psi and omega for new reference rows, keeping the
        projection (and everything non-trainable) frozen."""
        psi = enhanced_references(phi_assigned, self.semantics, self.config.alpha)
        omega = label_representations(
            self.prototypes, self.present, psi, self.config.beta
        )
        return EpisodeBindings(
            assignment=self.assignment,
            prototypes=self.prototypes,
            present=self.present,
            semantics=self.semantics,
            psi=psi,
            omega=omega,
            projection=self.projection,
            config=self.config,
        )


def build_bindings(
    pool: ReferencePool,
    support_embeddings: Sequence[np.ndarray],
    support_label_ids: Sequence[Sequence[int]],
    semantics: np.ndarray,
    config: ScorerConfig,
    assignment: np.ndarray,
) -> EpisodeBindings:
    """Derive prototypes, enhanced references, label representations and (for
    projected variants) the error-nulling projection for one episode."""
    n_labels, dim = semantics.shape
    prototypes, present = compute_prototypes(
        support_embeddings, support_label_ids, n_labels, dim
    )
    phi_assigned = pool.refs[assignment]
    psi = enhanced_references(phi_assigned, semantics, config.alpha)
    projection = None
    if config.project:
        projection = error_nulling_projection(psi, prototypes, present, config.d_proj)
    omega = label_representations(prototypes, present, psi, config.beta)
    return EpisodeBindings(
        assignment=np.asarray(assignment),
        prototypes=prototypes,
        present=present,
        semantics=semantics,
        psi=psi,
        omega=omega,
        projection=projection,
        config=config,
    )
