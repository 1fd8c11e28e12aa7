"""Optimization of the reference pool, collapsed transition table and the
emission scale on source-domain episodes.

The trainable parameters are exactly the pool rows, the 19 live transition
cells and the scalar scale. The error-nulling projection is rebuilt from the
current parameters for every loss evaluation but treated as a constant by
differentiation, so analytic gradients can be verified by central finite
differences with the projection pinned. Parameters live on the float32 grid
(rounded after every update) so checkpoints round-trip exactly.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from . import crf
from .corpus import LabelSet
from .embeddings import (
    EmbeddingProvider,
    EmbeddingStore,
    label_semantic_embedding,
    pairwise_query_embedding,
    support_token_embeddings,
)
from .emission import (
    EpisodeBindings,
    ReferencePool,
    ScorerConfig,
    assign_references,
    build_bindings,
    emission_scores,
    similarity_scores,
)
from .episodes import Episode
from .evaluation import episode_f1
from .transition import (
    LIVE_CELLS,
    N_LIVE_CELLS,
    CollapsedTransitionTable,
    collapsed_index,
    expand_transitions,
    rule_mask,
)

CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


def _variant_geometry(variant: str) -> tuple[bool, str]:
    if variant in ("wpz", "l-wpz"):
        return False, "neg_sq_euclid"
    return True, "dot"


@dataclass
class ModelState:
    pool: ReferencePool
    table: CollapsedTransitionTable
    lam: float
    config: ScorerConfig

    @property
    def dim(self) -> int:
        return self.pool.dim

    @property
    def n_pool(self) -> int:
        return self.pool.n_pool

    @property
    def n_params(self) -> int:
        return self.n_pool * self.dim + N_LIVE_CELLS + 1

    def params_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.pool.refs.ravel(), self.table.as_vector(), [self.lam]]
        )

    def with_params(self, vec: np.ndarray) -> "ModelState":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.n_params,):
            raise TrainingError(
                f"expected {self.n_params} parameters, got {vec.shape}"
            )
        n_ref = self.n_pool * self.dim
        return ModelState(
            pool=ReferencePool(refs=vec[:n_ref].reshape(self.n_pool, self.dim)),
            table=CollapsedTransitionTable.from_vector(vec[n_ref : n_ref + N_LIVE_CELLS]),
            lam=float(vec[-1]),
            config=self.config,
        )

    def copy(self) -> "ModelState":
        return self.with_params(self.params_vector())

    @classmethod
    def initialize(
        cls, n_pool: int, dim: int, config: ScorerConfig, seed: int = 0
    ) -> "ModelState":
        return cls(
            pool=ReferencePool.initialize(n_pool, dim, seed),
            table=CollapsedTransitionTable(),
            lam=1.0,
            config=config,
        )


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_episodes: int = 4
    patience: int = 3
    max_steps: int = 1000
    eval_every: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise TrainingError("learning_rate must be >= 0")
        if self.batch_episodes < 1 or self.patience < 1 or self.eval_every < 1:
            raise TrainingError("batch_episodes, patience, eval_every must be >= 1")
        if self.max_steps < 0:
            raise TrainingError("max_steps must be >= 0")


@dataclass
class TrainReport:
    losses: list[float] = field(default_factory=list)
    dev_history: list[tuple[int, float]] = field(default_factory=list)
    best_step: int = 0
    stopped_step: int = 0
    wall_time_s: float = 0.0


@dataclass
class EpisodeInputs:
    """Non-trainable tensors of one episode: embeddings, gold ids, semantics."""

    label_set: LabelSet
    support_embeddings: list[np.ndarray]
    support_label_ids: list[list[int]]
    query_embeddings: list[np.ndarray]
    query_label_ids: list[list[int]]
    semantics: np.ndarray


def episode_inputs(
    episode: Episode,
    source: EmbeddingStore | EmbeddingProvider,
    config: ScorerConfig,
) -> EpisodeInputs:
    label_set = episode.label_set
    query_embeddings = []
    query_label_ids = []
    for q_idx, query in enumerate(episode.queries):
        query_embeddings.append(
            pairwise_query_embedding(
                query,
                episode.support,
                source,
                episode_id=episode.episode_id,
                query_index=q_idx,
                pairwise=config.pairwise,
            )
        )
        query_label_ids.append([label_set.label_id(l) for l in query.labels])
    support_embeddings = support_token_embeddings(
        episode.support,
        episode.queries[0] if episode.queries else None,
        source,
        episode_id=episode.episode_id,
        query_index=0,
        pairwise=config.pairwise,
    )
    support_label_ids = [
        [label_set.label_id(l) for l in s.labels] for s in episode.support.sentences
    ]
    semantics = np.stack(
        [
            label_semantic_embedding(lab, episode.domain_name, source)
            for lab in label_set.bio_labels
        ]
    )
    return EpisodeInputs(
        label_set=label_set,
        support_embeddings=support_embeddings,
        support_label_ids=support_label_ids,
        query_embeddings=query_embeddings,
        query_label_ids=query_label_ids,
        semantics=semantics,
    )


def bindings_for(
    model: ModelState,
    inputs: EpisodeInputs,
    assignment: np.ndarray | None = None,
) -> EpisodeBindings:
    if assignment is None:
        assignment = assign_references(model.pool, len(inputs.label_set))
    return build_bindings(
        model.pool,
        inputs.support_embeddings,
        inputs.support_label_ids,
        inputs.semantics,
        model.config,
        assignment,
    )


def episode_loss(
    model: ModelState,
    episode: Episode,
    source: EmbeddingStore | EmbeddingProvider,
    assignment: np.ndarray | None = None,
    inputs: EpisodeInputs | None = None,
    bindings: EpisodeBindings | None = None,
) -> float:
    """Mean CRF negative log-likelihood over the episode's query sentences."""
    if not episode.queries:
        raise TrainingError(f"episode {episode.episode_id} has no queries")
    if inputs is None:
        inputs = episode_inputs(episode, source, model.config)
    if bindings is None:
        bindings = bindings_for(model, inputs, assignment)
    trans = expand_transitions(model.table, inputs.label_set)
    total = 0.0
    for emb, gold in zip(inputs.query_embeddings, inputs.query_label_ids):
        emission = emission_scores(
            emb, bindings.omega, bindings.projection, model.config.similarity
        )
        total += crf.nll_loss(crf.CrfScore(emission, trans, model.lam), gold)
    return total / len(inputs.query_embeddings)


@dataclass
class Grads:
    """Gradient of episode_loss per trainable parameter group."""

    pool: np.ndarray
    table: np.ndarray  # aligned with LIVE_CELLS
    lam: float

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.pool.ravel(), self.table, [self.lam]])


def _collapse_transition_grad(
    d_trans: np.ndarray, label_set: LabelSet
) -> np.ndarray:
    """Fold an expanded-transition gradient onto the 19 live cells."""
    states = label_set.bio_labels + ("START", "END")
    n = len(states)
    start, end = n - 2, n - 1
    cell_pos = {cell: i for i, cell in enumerate(LIVE_CELLS)}
    out = np.zeros(N_LIVE_CELLS)
    for i in range(n):
        if i == end:
            continue
        for j in range(n):
            if j == start or (i == start and j == end):
                continue
            g = d_trans[i, j]
            if g != 0.0:
                out[cell_pos[collapsed_index(states[i], states[j])]] += g
    return out


def gradients(
    model: ModelState,
    episode: Episode,
    source: EmbeddingStore | EmbeddingProvider,
    assignment: np.ndarray | None = None,
    inputs: EpisodeInputs | None = None,
    bindings: EpisodeBindings | None = None,
) -> Grads:
    """Exact gradient of episode_loss with the projection held constant.

    CRF posteriors give the gradient with respect to expanded transitions and
    emission log-probabilities; the emission part is then chained through the
    log-softmax, the similarity, and the label-representation mixing down to
    the reference rows bound in this episode.
    """
    if not episode.queries:
        raise TrainingError(f"episode {episode.episode_id} has no queries")
    if inputs is None:
        inputs = episode_inputs(episode, source, model.config)
    if bindings is None:
        bindings = bindings_for(model, inputs, assignment)
    cfg = model.config
    label_set = inputs.label_set
    n_labels = len(label_set)
    trans = expand_transitions(model.table, label_set)
    n_states = len(trans.states)
    start, end = trans.start_index, trans.end_index

    d_trans = np.zeros((n_states, n_states))
    d_omega = np.zeros_like(bindings.omega)
    d_lam = 0.0

    projector = None
    if bindings.projection is not None:
        projector = bindings.projection @ bindings.projection.T

    n_queries = len(inputs.query_embeddings)
    for emb, gold in zip(inputs.query_embeddings, inputs.query_label_ids):
        z = similarity_scores(emb, bindings.omega, bindings.projection, cfg.similarity)
        log_probs = z - logsumexp(z, axis=1, keepdims=True)
        score = crf.CrfScore(log_probs, trans, model.lam)
        unary, pair = crf.posterior_marginals(score)
        n = len(gold)

        gold_onehot = np.zeros((n, n_labels))
        gold_onehot[np.arange(n), gold] = 1.0
        resid = unary - gold_onehot

        d_trans[start, :n_labels] += resid[0]
        d_trans[:n_labels, end] += resid[-1]
        for t in range(n - 1):
            d_trans[:n_labels, :n_labels] += pair[t]
            d_trans[gold[t], gold[t + 1]] -= 1.0

        d_lam += float(np.sum(unary * log_probs)) - float(
            log_probs[np.arange(n), gold].sum()
        )

        d_e = model.lam * resid
        softmax = np.exp(log_probs)
        d_z = d_e - softmax * d_e.sum(axis=1, keepdims=True)

        if cfg.similarity == "dot":
            base = emb @ projector if projector is not None else emb
            d_omega += d_z.T @ base
        else:
            col = d_z.sum(axis=0)
            d_omega += 2.0 * (d_z.T @ emb - col[:, None] * bindings.omega)

    d_trans /= n_queries
    d_omega /= n_queries
    d_lam /= n_queries

    # omega -> psi -> assigned reference rows (prototypes and semantics fixed)
    psi_factor = np.where(bindings.present, cfg.beta, 1.0)
    d_psi = d_omega * psi_factor[:, None]
    d_phi_assigned = (1.0 - cfg.alpha) * d_psi
    d_pool = np.zeros_like(model.pool.refs)
    np.add.at(d_pool, bindings.assignment, d_phi_assigned)

    return Grads(
        pool=d_pool,
        table=_collapse_transition_grad(d_trans, label_set),
        lam=d_lam,
    )


@dataclass
class GradcheckEntry:
    name: str
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradcheckReport:
    entries: list[GradcheckEntry]
    tol: float

    @property
    def flagged(self) -> list[GradcheckEntry]:
        return [e for e in self.entries if e.rel_error > self.tol]

    @property
    def passed(self) -> bool:
        return not self.flagged

    @property
    def max_rel_error(self) -> float:
        return max((e.rel_error for e in self.entries), default=0.0)


def gradcheck(
    model: ModelState,
    episode: Episode,
    source: EmbeddingStore | EmbeddingProvider,
    eps: float = 1e-3,
    tol: float = 1e-3,
    fault_scale: dict[str, float] | None = None,
) -> GradcheckReport:
    """Compare analytic gradients against central finite differences.

    The projection, assignment, prototypes and semantics are frozen at the
    nominal parameters for both sides. Checked coordinates are the 19 live
    table cells, the scale, and every reference row bound in the episode.
    ``fault_scale`` multiplies named analytic gradients (for testing that the
    check itself can fail). Relative error is |a - f| / max(1, |a|, |f|).
    """
    if eps <= 0:
        raise TrainingError("step must be positive")
    inputs = episode_inputs(episode, source, model.config)
    bindings = bindings_for(model, inputs)
    grads = gradients(model, episode, source, inputs=inputs, bindings=bindings)
    if fault_scale:
        for name, scale in fault_scale.items():
            if name == "lam":
                grads.lam *= scale
            elif name == "table":
                grads.table *= scale
            elif name == "pool":
                grads.pool *= scale
            else:
                raise TrainingError(f"unknown fault target {name!r}")

    base = model.params_vector()
    n_ref = model.n_pool * model.dim

    def loss_at(vec: np.ndarray) -> float:
        perturbed = model.with_params(vec)
        frozen = bindings.with_references(perturbed.pool.refs[bindings.assignment])
        return episode_loss(
            perturbed, episode, source, inputs=inputs, bindings=frozen
        )

    def central(idx: int) -> float:
        plus = base.copy()
        plus[idx] += eps
        minus = base.copy()
        minus[idx] -= eps
        return (loss_at(plus) - loss_at(minus)) / (2 * eps)

    entries: list[GradcheckEntry] = []

    def add(name: str, idx: int, analytic: float) -> None:
        numeric = central(idx)
        rel = abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))
        entries.append(GradcheckEntry(name, analytic, numeric, rel))

    bound_rows = sorted({int(r) for r in bindings.assignment})
    for row in bound_rows:
        for col in range(model.dim):
            add(f"pool[{row},{col}]", row * model.dim + col, grads.pool[row, col])
    for c_idx, cell in enumerate(LIVE_CELLS):
        add(f"table[{cell[0]},{cell[1]}]", n_ref + c_idx, grads.table[c_idx])
    add("lam", len(base) - 1, grads.lam)
    return GradcheckReport(entries=entries, tol=tol)


def predict_episode(
    model: ModelState,
    episode: Episode,
    source: EmbeddingStore | EmbeddingProvider,
    decoder: str = "viterbi",
) -> list[list[str]]:
    """Decode every query of an episode to label strings."""
    inputs = episode_inputs(episode, source, model.config)
    bindings = bindings_for(model, inputs)
    label_set = inputs.label_set
    trans = expand_transitions(model.table, label_set)
    legal = rule_mask(label_set) if decoder == "rule" else None
    out = []
    for emb in inputs.query_embeddings:
        emission = emission_scores(
            emb, bindings.omega, bindings.projection, model.config.similarity
        )
        if decoder == "viterbi":
            ids, _ = crf.viterbi(crf.CrfScore(emission, trans, model.lam))
        elif decoder == "greedy":
            ids = crf.greedy_decode(emission)
        elif decoder == "rule":
            ids = crf.constrained_greedy(emission, legal)
        else:
            raise TrainingError(f"unknown decoder {decoder!r}")
        out.append([label_set.label_of(i) for i in ids])
    return out


def dev_f1(
    model: ModelState,
    episodes: Sequence[Episode],
    source: EmbeddingStore | EmbeddingProvider,
) -> float:
    scores = []
    for ep in episodes:
        preds = predict_episode(model, ep, source, decoder="viterbi")
        golds = [list(q.labels) for q in ep.queries]
        scores.append(episode_f1(preds, golds)[2])
    return sum(scores) / len(scores)


def train(
    model: ModelState,
    train_episodes: Sequence[Episode],
    dev_episodes: Sequence[Episode],
    cfg: TrainConfig,
    source: EmbeddingStore | EmbeddingProvider,
) -> tuple[ModelState, TrainReport]:
    """Adam over shuffled episode batches with dev-F1 early stopping.

    Returns the model restored to the best dev evaluation. Reference
    assignments are drawn fresh per episode visit during training and are
    deterministic given cfg.seed.
    """
    if not train_episodes:
        raise TrainingError("no training episodes")
    if cfg.max_steps > 0 and not dev_episodes:
        raise TrainingError("no dev episodes")
    t0 = time.monotonic()
    salt = int.from_bytes(b"train", "little")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(cfg.seed, salt)))
    report = TrainReport()

    inputs_cache = [episode_inputs(ep, source, model.config) for ep in train_episodes]

    params = model.params_vector()
    n_ref = model.n_pool * model.dim
    trainable = np.ones_like(params, dtype=bool)
    if not model.config.use_cdt:
        trainable[n_ref : n_ref + N_LIVE_CELLS] = False

    m = np.zeros_like(params)
    v = np.zeros_like(params)
    beta1, beta2, adam_eps = 0.9, 0.999, 1e-8

    best_params = params.copy()
    best_f1 = -np.inf
    best_step = 0
    evals_without_improvement = 0
    order: list[int] = []

    def next_batch() -> list[int]:
        nonlocal order
        batch = []
        while len(batch) < cfg.batch_episodes:
            if not order:
                order = list(rng.permutation(len(train_episodes)))
            batch.append(order.pop(0))
        return batch

    step = 0
    while step < cfg.max_steps:
        step += 1
        current = model.with_params(params)
        grad_total = np.zeros_like(params)
        loss_total = 0.0
        for idx in next_batch():
            ep = train_episodes[idx]
            assignment = assign_references(
                current.pool, len(ep.label_set), mode="random", rng=rng
            )
            inputs = inputs_cache[idx]
            bindings = bindings_for(current, inputs, assignment)
            loss_total += episode_loss(
                current, ep, source, inputs=inputs, bindings=bindings
            )
            grad_total += gradients(
                current, ep, source, inputs=inputs, bindings=bindings
            ).as_vector()
        loss = loss_total / cfg.batch_episodes
        grad = grad_total / cfg.batch_episodes
        if not np.isfinite(loss):
            raise TrainingError(f"training diverged at step {step}: loss={loss}")
        report.losses.append(float(loss))

        grad[~trainable] = 0.0
        m = beta1 * m + (1 - beta1) * grad
        v = beta2 * v + (1 - beta2) * grad * grad
        m_hat = m / (1 - beta1**step)
        v_hat = v / (1 - beta2**step)
        params = params - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + adam_eps)
        params = params.astype(np.float32).astype(np.float64)

        if step % cfg.eval_every == 0 or step == cfg.max_steps:
            f1 = dev_f1(model.with_params(params), dev_episodes, source)
            report.dev_history.append((step, float(f1)))
            if f1 > best_f1:
                best_f1 = f1
                best_params = params.copy()
                best_step = step
                evals_without_improvement = 0
            else:
                evals_without_improvement += 1
                if evals_without_improvement >= cfg.patience:
                    break

    report.best_step = best_step
    report.stopped_step = step
    report.wall_time_s = time.monotonic() - t0
    final = model.with_params(best_params if best_step > 0 else params)
    return final, report


def save_checkpoint(model: ModelState, path: str | Path) -> None:
    """JSON header line plus a little-endian float32 parameter blob."""
    cfg = model.config
    header = {
        "version": CHECKPOINT_VERSION,
        "dim": model.dim,
        "n_pool": model.n_pool,
        "variant": cfg.variant,
        "alpha": cfg.alpha,
        "beta": cfg.beta,
        "lambda": model.lam,
        "d_proj": cfg.d_proj,
        "flags": {"pairwise": cfg.pairwise, "use_cdt": cfg.use_cdt},
    }
    blob = np.concatenate([model.pool.refs.ravel(), model.table.as_vector()])
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(blob.astype("<f4").tobytes())


def load_checkpoint(path: str | Path) -> ModelState:
    path = Path(path)
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise TrainingError(f"{path}: malformed checkpoint header") from None
        if header.get("version") != CHECKPOINT_VERSION:
            raise TrainingError(
                f"{path}: checkpoint version {header.get('version')} not supported "
                f"(expected {CHECKPOINT_VERSION})"
            )
        dim = int(header["dim"])
        n_pool = int(header["n_pool"])
        blob = fh.read()
    expected = (n_pool * dim + N_LIVE_CELLS) * 4
    if len(blob) != expected:
        raise TrainingError(
            f"{path}: parameter blob has {len(blob)} bytes, expected {expected}"
        )
    params = np.frombuffer(blob, dtype="<f4").astype(np.float64)
    project, similarity = _variant_geometry(header["variant"])
    flags = header.get("flags", {})
    config = ScorerConfig(
        variant=header["variant"],
        alpha=float(header["alpha"]),
        beta=float(header["beta"]),
        project=project,
        similarity=similarity,
        d_proj=header.get("d_proj"),
        pairwise=bool(flags.get("pairwise", True)),
        use_cdt=bool(flags.get("use_cdt", True)),
    )
    n_ref = n_pool * dim
    return ModelState(
        pool=ReferencePool(refs=params[:n_ref].reshape(n_pool, dim)),
        table=CollapsedTransitionTable.from_vector(params[n_ref:]),
        lam=float(header["lambda"]),
        config=config,
    )
