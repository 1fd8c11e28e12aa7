"""Command-line driver: episode sampling, training, evaluation, gradcheck.

Configuration comes from one TOML document; command-line flags override it.
Exit codes: 0 success, 1 check failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from .corpus import CorpusError, Domain, load_conll, load_json, validate_bio
from .crf import CrfError
from .embeddings import EmbeddingError, HashEmbedder, load_store
from .emission import EmissionError, build_scorer
from .episodes import SamplingError, build_split, load_episodes, save_episodes
from .evaluation import EvaluationError, aggregate, bigram_accuracy, episode_f1
from .training import (
    ModelState,
    TrainConfig,
    TrainingError,
    gradcheck,
    load_checkpoint,
    predict_episode,
    save_checkpoint,
    train,
)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Resolved configuration for one command invocation."""

    paths: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    sampler: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)
    embeddings: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        with open(path, "rb") as fh:
            try:
                doc = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        cfg = cls(
            paths=doc.get("paths", {}),
            model=doc.get("model", {}),
            sampler=doc.get("sampler", {}),
            train=doc.get("train", {}),
            eval=doc.get("eval", {}),
            embeddings=doc.get("embeddings", {}),
        )
        cfg.base_dir = path.parent
        return cfg

    base_dir: Path = Path(".")

    def path(self, key: str, required: bool = True, must_exist: bool = False) -> Path | None:
        value = self.paths.get(key)
        if not value:
            if required:
                raise ConfigError(f"config is missing paths.{key}")
            return None
        p = Path(value)
        if not p.is_absolute():
            p = self.base_dir / p
        if must_exist and not p.exists():
            raise ConfigError(f"paths.{key} does not exist: {p}")
        return p


def _load_domain(path: Path) -> Domain:
    if path.suffix == ".json":
        return load_json(path)
    return load_conll(path)


def _embedding_source(cfg: RunConfig, dim: int, seed_offset: int = 0):
    provider = cfg.embeddings.get("provider", "hash")
    if provider == "store":
        store_path = cfg.path("store", must_exist=True)
        store = load_store(store_path)
        if store.dim != dim:
            raise ConfigError(
                f"store dimension {store.dim} does not match model dimension {dim}"
            )
        return store
    if provider == "hash":
        base_seed = int(cfg.embeddings.get("seed", 0))
        return HashEmbedder(dim=dim, seed=base_seed + seed_offset)
    raise ConfigError(f"unknown embeddings.provider {provider!r}")


def _scorer_config(cfg: RunConfig, args) -> "ScorerConfig":
    variant = args.variant or cfg.model.get("variant", "l-tapnet")
    ablate = list(args.ablate or []) + list(cfg.model.get("ablate", []))
    d_proj = cfg.model.get("d_proj") or None
    return build_scorer(
        variant,
        alpha=cfg.model.get("alpha"),
        beta=cfg.model.get("beta"),
        d_proj=d_proj,
        ablate=tuple(dict.fromkeys(ablate)),
    )


def _model_dims(cfg: RunConfig) -> tuple[int, int]:
    dim = int(cfg.model.get("dim", 64))
    n_pool = int(cfg.model.get("n_pool", 32))
    if dim < 1 or n_pool < 1:
        raise ConfigError("model.dim and model.n_pool must be >= 1")
    return dim, n_pool


def cmd_sample_episodes(cfg: RunConfig, args) -> int:
    corpora = cfg.paths.get("corpora")
    if not corpora:
        raise ConfigError("config is missing paths.corpora")
    domains = []
    for entry in corpora:
        p = Path(entry)
        if not p.is_absolute():
            p = cfg.base_dir / p
        if not p.exists():
            raise ConfigError(f"corpus file does not exist: {p}")
        domains.append(_load_domain(p))

    if args.strict_bio:
        violations = 0
        for domain in domains:
            for s_idx, sent in enumerate(domain.sentences):
                for v in validate_bio(sent, strict=True):
                    violations += 1
                    print(
                        f"{domain.name}: sentence {s_idx} token {v.index}: {v.reason}",
                        file=sys.stderr,
                    )
        if violations:
            print(f"strict BIO check failed: {violations} violations", file=sys.stderr)
            return EXIT_CHECK_FAILED

    k = args.k if args.k is not None else int(cfg.sampler.get("k", 1))
    if k < 1:
        raise ConfigError(f"sampler.k must be >= 1, got {k}")
    n_episodes = int(cfg.sampler.get("episodes_per_domain", 100))
    n_query = int(cfg.sampler.get("queries_per_episode", 20))
    skip_prob = float(cfg.sampler.get("skip_prob", 0.2))
    seed = args.seed if args.seed is not None else int(cfg.sampler.get("seed", 0))

    split = build_split(domains, n_episodes, k, n_query, seed, skip_prob)
    out = Path(args.out) if args.out else cfg.path("episodes")
    save_episodes(split, out)

    print(f"{'domain':<16}{'episodes':>10}{'ave |S|':>10}")
    for domain in domains:
        eps = [e for e in split.episodes if e.domain_name == domain.name]
        ave = sum(len(e.support) for e in eps) / len(eps) if eps else 0.0
        print(f"{domain.name:<16}{len(eps):>10}{ave:>10.2f}")
    print(f"wrote {len(split.episodes)} episodes to {out}")
    return EXIT_OK


def _init_model(cfg: RunConfig, args, seed: int) -> ModelState:
    dim, n_pool = _model_dims(cfg)
    scorer = _scorer_config(cfg, args)
    return ModelState.initialize(n_pool=n_pool, dim=dim, config=scorer, seed=seed)


def cmd_train(cfg: RunConfig, args) -> int:
    train_set = load_episodes(cfg.path("train_episodes", must_exist=True))
    dev_set = load_episodes(cfg.path("dev_episodes", must_exist=True))
    dim, _ = _model_dims(cfg)
    source = _embedding_source(cfg, dim)

    seed = args.seed if args.seed is not None else int(cfg.train.get("seed", 0))
    tcfg = TrainConfig(
        learning_rate=float(cfg.train.get("learning_rate", 1e-3)),
        batch_episodes=int(cfg.train.get("batch_episodes", 4)),
        patience=int(cfg.train.get("patience", 3)),
        max_steps=(
            args.max_steps
            if args.max_steps is not None
            else int(cfg.train.get("max_steps", 1000))
        ),
        eval_every=int(cfg.train.get("eval_every", 50)),
        seed=seed,
    )
    model = _init_model(cfg, args, seed)
    trained, report = train(
        model, list(train_set.episodes), list(dev_set.episodes), tcfg, source
    )

    ckpt = Path(args.out) if args.out else cfg.path("checkpoint")
    save_checkpoint(trained, ckpt)
    report_path = cfg.path("train_report", required=False)
    if report_path:
        doc = {
            "losses": report.losses,
            "dev_f1": [[s, f] for s, f in report.dev_history],
            "best_step": report.best_step,
            "stopped_step": report.stopped_step,
        }
        with open(report_path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True)
            fh.write("\n")
    final_loss = report.losses[-1] if report.losses else float("nan")
    best_f1 = max((f for _, f in report.dev_history), default=float("nan"))
    print(
        f"trained {report.stopped_step} steps "
        f"(best dev F1 {best_f1:.2f} at step {report.best_step}); wrote {ckpt}"
    )
    print(f"final batch loss {final_loss:.6f}")
    print(f"wall time {report.wall_time_s:.1f}s", file=sys.stderr)
    return EXIT_OK


def _decode_all(model, episodes, source, decoder, threads):
    def run(ep):
        return predict_episode(model, ep, source, decoder=decoder)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run, episodes))
    return [run(ep) for ep in episodes]


def cmd_eval(cfg: RunConfig, args) -> int:
    test_set = load_episodes(cfg.path("test_episodes", must_exist=True))
    model = load_checkpoint(cfg.path("checkpoint", must_exist=True))
    decoder = args.decoder or cfg.eval.get("decoder", "viterbi")
    if decoder not in ("viterbi", "greedy", "rule"):
        raise ConfigError(f"unknown decoder {decoder!r}")
    seeds = cfg.eval.get("seeds", [0])
    if args.seed is not None:
        seeds = [args.seed]
    threads = max(1, args.threads)

    f1s_by_seed: dict[int, list[float]] = {}
    episode_rows = []
    all_preds: list[list[str]] = []
    all_golds: list[list[str]] = []
    for seed in seeds:
        source = _embedding_source(cfg, model.dim, seed_offset=int(seed))
        preds_per_ep = _decode_all(model, test_set.episodes, source, decoder, threads)
        f1s = []
        for ep, preds in zip(test_set.episodes, preds_per_ep):
            golds = [list(q.labels) for q in ep.queries]
            p, r, f1 = episode_f1(preds, golds)
            f1s.append(f1)
            episode_rows.append((int(seed), ep.episode_id, ep.domain_name, p, r, f1))
            all_preds.extend(preds)
            all_golds.extend(golds)
        f1s_by_seed[int(seed)] = f1s
    report = aggregate(f1s_by_seed)

    doc = {
        "decoder": decoder,
        "mean_f1": report.mean_f1,
        "std_f1": report.std_f1,
        "per_seed_mean": {str(s): m for s, m in report.per_seed_mean.items()},
        "per_seed_f1": {str(s): v for s, v in report.per_seed_f1s.items()},
    }
    if args.bigram or cfg.eval.get("bigram", False):
        doc["bigram"] = bigram_accuracy(all_preds, all_golds)
    report_path = Path(args.out) if args.out else cfg.path("report", required=False)
    if report_path:
        with open(report_path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True)
            fh.write("\n")
    if args.csv:
        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["seed", "episode_id", "domain", "precision", "recall", "f1"])
            for row in episode_rows:
                writer.writerow([row[0], row[1], row[2]] + [f"{x:.4f}" for x in row[3:]])

    print(f"{'seed':<8}{'episodes':>10}{'mean F1':>10}")
    for seed in sorted(report.per_seed_mean):
        print(
            f"{seed:<8}{len(report.per_seed_f1s[seed]):>10}"
            f"{report.per_seed_mean[seed]:>10.2f}"
        )
    print(f"{'all':<8}{'':>10}{report.mean_f1:>10.2f}  (std {report.std_f1:.2f})")
    if "bigram" in doc:
        print(f"{'bigram':<12}{'prop %':>8}{'acc %':>8}")
        for cat, row in doc["bigram"].items():
            print(f"{cat:<12}{row['proportion']:>8.1f}{row['accuracy']:>8.1f}")
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    episodes_path = cfg.path("train_episodes", required=False, must_exist=True) or cfg.path(
        "episodes", must_exist=True
    )
    episode_set = load_episodes(episodes_path)
    if not episode_set.episodes:
        raise ConfigError(f"no episodes in {episodes_path}")
    dim, _ = _model_dims(cfg)
    source = _embedding_source(cfg, dim)
    seed = args.seed if args.seed is not None else 0
    model = _init_model(cfg, args, seed)

    fault = {"lam": 1.1} if args.inject_fault else None
    n_eps = min(args.episodes_count, len(episode_set.episodes))
    worst = 0.0
    failures = 0
    for ep in episode_set.episodes[:n_eps]:
        rep = gradcheck(model, ep, source, eps=args.eps, tol=args.tol, fault_scale=fault)
        worst = max(worst, rep.max_rel_error)
        if not rep.passed:
            failures += 1
            for entry in rep.flagged[:5]:
                print(
                    f"episode {ep.episode_id}: {entry.name}: analytic "
                    f"{entry.analytic:.6g} vs numeric {entry.numeric:.6g} "
                    f"(rel {entry.rel_error:.3g})",
                    file=sys.stderr,
                )
    status = "PASS" if failures == 0 else "FAIL"
    print(
        f"gradcheck {status}: {n_eps} episodes, max relative error "
        f"{worst:.3g} (tol {args.tol:g})"
    )
    return EXIT_OK if failures == 0 else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fewtag",
        description="Few-shot slot tagging: episode sampling, training, evaluation.",
    )
    parser.add_argument("--version", action="version", version=f"fewtag {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="TOML configuration file")
        p.add_argument("--seed", type=int, default=None, help="override the command seed")
        p.add_argument("--threads", type=int, default=1, help="worker cap for episode-parallel stages")
        p.add_argument(
            "--variant",
            choices=["wpz", "l-wpz", "tapnet", "l-tapnet"],
            default=None,
            help="override model.variant",
        )
        p.add_argument(
            "--ablate",
            action="append",
            choices=["pairwise", "label-semantic", "prototype", "cdt"],
            default=None,
            help="disable one model component (repeatable)",
        )

    p = sub.add_parser("sample-episodes", help="sample K-shot episodes from corpora")
    common(p)
    p.add_argument("-k", type=int, default=None, help="shots per label (>= 1)")
    p.add_argument("-o", "--out", default=None, help="episode file to write")
    p.add_argument("--strict-bio", action="store_true", help="reject I-after-O annotations")
    p.set_defaults(func=cmd_sample_episodes)

    p = sub.add_parser("train", help="train on source episodes with dev early stopping")
    common(p)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("-o", "--out", default=None, help="checkpoint file to write")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="decode episodes and report span F1")
    common(p)
    p.add_argument("--decoder", choices=["viterbi", "greedy", "rule"], default=None)
    p.add_argument("--bigram", action="store_true", help="include bigram-category accuracy")
    p.add_argument("--csv", default=None, help="write per-episode scores as CSV")
    p.add_argument("-o", "--out", default=None, help="report JSON to write")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="verify analytic gradients by finite differences")
    common(p)
    p.add_argument("--eps", type=float, default=1e-3, help="finite-difference step")
    p.add_argument("--tol", type=float, default=1e-3, help="relative-error tolerance")
    p.add_argument("--episodes-count", type=int, default=5)
    p.add_argument(
        "--inject-fault",
        action="store_true",
        help="corrupt the scale gradient to prove the check can fail",
    )
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "k", None) is not None and args.k < 1:
        parser.error(f"-k must be >= 1, got {args.k}")
    try:
        cfg = RunConfig.load(args.config)
        return args.func(cfg, args)
    except (
        ConfigError,
        CorpusError,
        CrfError,
        SamplingError,
        EmissionError,
        EmbeddingError,
        EvaluationError,
        TrainingError,
        OSError,
    ) as exc:
        print(f"fewtag {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
