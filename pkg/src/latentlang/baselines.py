"""Baseline experiment drivers and paired report comparison.

Every baseline consumes the same corpus, seeds, and budgets as the
hypothesis-selection run it is compared against and emits one metrics
record per (kind, seed). Comparison is paired per task: bootstrap
resampling of per-task score differences yields a 95% interval, and an
ordering verdict only names a winner when that interval excludes zero.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ComparisonError, ConfigError
from .nav.model import (FinetuneConfig, NavAdapter, NavTrainConfig,
                        dagger_pretrain, rl_multitask_run_task,
                        rl_scratch_run_task)
from .protocol import (LANG, TEST, VAL, DomainAdapter, MultitaskModel,
                       TaskDataset, TrainConfig, meta_joint_pretrain,
                       multitask_fit, refit_task_embedding)
from .seeding import derive_rng, derive_seed
from .strings.model import identity_metric

__all__ = ["BaselineConfig", "DOMAIN_KINDS", "run_baseline",
           "pretrain_baseline", "evaluate_baseline", "compare",
           "corpus_fingerprint", "NAV_CONCEPT_BATCHES"]

DOMAIN_KINDS = {
    "shapes": ("multitask", "meta", "meta-joint"),
    "strings": ("multitask", "meta", "meta-joint", "identity"),
    "nav": ("rl-multitask", "rl-scratch"),
}
_ALL_KINDS = sorted({k for kinds in DOMAIN_KINDS.values() for k in kinds})

# the selection-phase episode budget is spent in this many reward batches
NAV_CONCEPT_BATCHES = 10


@dataclass
class BaselineConfig:
    """One baseline variant: what replaces the description context.

    emb_dim None takes the adapter's context width; an explicit value
    must match it, because the scorer pairs the context with a
    fixed-width representation.
    """
    kind: str
    emb_dim: int | None = None
    aux_weight: float = 1.0

    def __post_init__(self):
        if self.kind not in _ALL_KINDS:
            raise ConfigError(f"unknown baseline kind {self.kind!r}; "
                              f"expected one of {_ALL_KINDS}")

    def validate(self, domain: str) -> None:
        if domain not in DOMAIN_KINDS:
            raise ConfigError(f"unknown domain {domain!r}")
        if self.kind not in DOMAIN_KINDS[domain]:
            raise ConfigError(
                f"baseline {self.kind!r} is not defined for domain "
                f"{domain!r}; valid kinds: {DOMAIN_KINDS[domain]}")


def corpus_fingerprint(corpus: list[TaskDataset]) -> str:
    """Content identity used to refuse cross-corpus comparisons.

    Ground-truth annotations pin the sampled concepts/rules/instructions,
    so two corpora agree on the fingerprint only if they were built from
    the same seed and configuration.
    """
    h = hashlib.sha256()
    for t in corpus:
        h.update(f"{t.task_id}|{t.split}|{t.oracle_annotation()}\n"
                 .encode("utf-8"))
    return h.hexdigest()[:16]


def _split_tasks(corpus: list[TaskDataset], split: str) -> list[TaskDataset]:
    return [t for t in corpus if t.split == split]


def _metric_key(domain: str) -> str:
    return "mean_reward" if domain == "nav" else "accuracy"


def _eval_multitask(model, adapter: DomainAdapter, tasks: list[TaskDataset],
                    cfg: TrainConfig, seed: int) -> np.ndarray:
    out = np.zeros(len(tasks))
    for i, task in enumerate(tasks):
        theta = refit_task_embedding(model, adapter, task.examples, cfg,
                                     derive_seed(seed, "refit", i))
        out[i] = adapter.task_metric_ctx(model.store, task, theta,
                                         derive_rng(seed, "metric", i))
    return out


def _eval_meta(store, adapter: DomainAdapter, tasks: list[TaskDataset],
               seed: int) -> np.ndarray:
    out = np.zeros(len(tasks))
    for i, task in enumerate(tasks):
        ctx = adapter.meta_context_np(store, task.examples)
        out[i] = adapter.task_metric_ctx(store, task, ctx,
                                         derive_rng(seed, "metric", i))
    return out


def _nav_concept_budget(adapter: NavAdapter) -> FinetuneConfig:
    per = max(1, adapter.episode_budget // NAV_CONCEPT_BATCHES)
    return FinetuneConfig(batches=NAV_CONCEPT_BATCHES, batch_episodes=per)


def _check_args(domain: str, config: BaselineConfig,
                adapter: DomainAdapter | None) -> None:
    config.validate(domain)
    if config.kind != "identity" and adapter is None:
        raise ConfigError(f"baseline {config.kind!r} needs a domain adapter")
    if config.emb_dim is not None and adapter is not None \
            and config.emb_dim != adapter.hidden:
        raise ConfigError(
            f"task-embedding dim {config.emb_dim} must equal the context "
            f"width {adapter.hidden} the scorer was built around")


def pretrain_baseline(domain: str, config: BaselineConfig,
                      corpus: list[TaskDataset], seed: int, *,
                      adapter: DomainAdapter | None = None,
                      train_cfg=None) -> dict:
    """Shared-parameter training for kinds that have any.

    Returns {"store": ParameterStore, ...} plus multitask bookkeeping;
    identity and rl-scratch return an empty dict (nothing to train).
    """
    _check_args(domain, config, adapter)
    kind = config.kind
    lang = _split_tasks(corpus, LANG)
    if kind in ("identity", "rl-scratch"):
        return {}
    if kind == "rl-multitask":
        cfg = train_cfg if train_cfg is not None else NavTrainConfig()
        store = dagger_pretrain(lang, adapter, cfg, seed, use_embeddings=True)
        return {"store": store}
    cfg = train_cfg if train_cfg is not None else TrainConfig()
    if kind == "multitask":
        emb = config.emb_dim if config.emb_dim is not None else adapter.hidden
        model = multitask_fit(lang, adapter, cfg, seed, emb)
        return {"store": model.store,
                "task_index": model.task_index, "emb_dim": model.emb_dim}
    weight = config.aux_weight if kind == "meta-joint" else 0.0
    store = meta_joint_pretrain(lang, adapter, cfg, seed, aux_weight=weight)
    return {"store": store}


def evaluate_baseline(domain: str, config: BaselineConfig,
                      corpus: list[TaskDataset], seed: int,
                      pretrained: dict, *,
                      adapter: DomainAdapter | None = None,
                      train_cfg=None,
                      nav_finetune: FinetuneConfig | None = None,
                      eval_splits: tuple[str, ...] | None = None) -> dict:
    """Concept-time refit plus held-out metrics from trained parameters.

    Returns one JSON-ready metrics record; per-task scores and task ids
    are kept so reports can be compared pairwise. Navigation kinds also
    carry per-task boundary rewards and reward curves.
    """
    _check_args(domain, config, adapter)
    kind = config.kind
    if kind not in ("identity", "rl-scratch") and "store" not in pretrained:
        raise ConfigError(f"baseline {kind!r} needs pretrained parameters")
    if eval_splits is None:
        eval_splits = (TEST,) if domain == "nav" else (VAL, TEST)
    t0 = time.perf_counter()
    record: dict = {
        "domain": domain, "kind": kind, "method": kind, "seed": seed,
        "corpus_hash": corpus_fingerprint(corpus),
        "splits": {}, "per_task": {}, "task_ids": {}, "budgets": {},
    }

    if domain == "nav":
        assert isinstance(adapter, NavAdapter)
        cfg = train_cfg if train_cfg is not None else NavTrainConfig()
        record["budgets"] = asdict(cfg)
        record["budgets"]["episode_budget"] = adapter.episode_budget
        store = pretrained.get("store")
        concept_cfg = _nav_concept_budget(adapter)
        record["curves"] = {}
        record["per_task_boundary"] = {}
        for split in eval_splits:
            tasks = _split_tasks(corpus, split)
            scores, boundary = [], []
            for i, task in enumerate(tasks):
                if kind == "rl-multitask":
                    rec = rl_multitask_run_task(store, adapter, task, seed, i,
                                                concept_cfg,
                                                ft_cfg=nav_finetune)
                else:
                    rec = rl_scratch_run_task(
                        adapter, task, seed, i,
                        nav_finetune if nav_finetune is not None
                        else FinetuneConfig())
                scores.append(rec.final_reward)
                boundary.append(rec.selection_reward)
                record["curves"][task.task_id] = [asdict(p) for p in rec.curve]
            record["splits"][split] = {"mean_reward": float(np.mean(scores))}
            record["per_task"][split] = [float(s) for s in scores]
            record["per_task_boundary"][split] = [float(s) for s in boundary]
            record["task_ids"][split] = [t.task_id for t in tasks]
        record["wall_clock_s"] = time.perf_counter() - t0
        return record

    cfg = train_cfg if train_cfg is not None else TrainConfig()
    record["budgets"] = asdict(cfg)
    if kind == "identity":
        evaluator = identity_metric
    elif kind == "multitask":
        model = MultitaskModel(
            run_id=f"{adapter.name}-multitask-{seed}",
            store=pretrained["store"],
            task_index=pretrained.get("task_index", {}),
            emb_dim=pretrained.get("emb_dim", adapter.hidden))

        def evaluator(tasks, model=model):
            return _eval_multitask(model, adapter, tasks, cfg, seed)
    else:
        def evaluator(tasks, store=pretrained["store"]):
            return _eval_meta(store, adapter, tasks, seed)

    for split in eval_splits:
        tasks = _split_tasks(corpus, split)
        scores = evaluator(tasks)
        record["splits"][split] = {"accuracy": float(np.mean(scores))}
        record["per_task"][split] = [float(s) for s in scores]
        record["task_ids"][split] = [t.task_id for t in tasks]
    record["wall_clock_s"] = time.perf_counter() - t0
    return record


def run_baseline(domain: str, config: BaselineConfig,
                 corpus: list[TaskDataset], seed: int, *,
                 adapter: DomainAdapter | None = None,
                 train_cfg=None,
                 nav_finetune: FinetuneConfig | None = None,
                 eval_splits: tuple[str, ...] | None = None) -> dict:
    """Pretrain (where the kind calls for it), refit, evaluate."""
    pretrained = pretrain_baseline(domain, config, corpus, seed,
                                   adapter=adapter, train_cfg=train_cfg)
    return evaluate_baseline(domain, config, corpus, seed, pretrained,
                             adapter=adapter, train_cfg=train_cfg,
                             nav_finetune=nav_finetune,
                             eval_splits=eval_splits)


# ---------------------------------------------------------------------------
# paired comparison


def _group_reports(reports: list[dict]) -> dict[str, list[dict]]:
    """Group by method; a duplicate (method, seed) becomes its own
    column so self-comparisons stay well-defined."""
    groups: dict[str, list[dict]] = {}
    for rep in reports:
        name = rep.get("method", rep.get("kind"))
        if name is None:
            raise ComparisonError("report lacks a method/kind field")
        label = name
        n = 2
        while any(r["seed"] == rep["seed"] for r in groups.get(label, [])):
            label = f"{name}#{n}"
            n += 1
        groups.setdefault(label, []).append(rep)
    return groups


def compare(reports: list[dict], split: str = TEST, n_boot: int = 2000,
            seed: int = 0) -> dict:
    """Paired per-task ordering table over matched reports.

    Reports must share the corpus fingerprint, the task list for the
    chosen split, and the seed set per method. Scores are paired by
    (seed, task); each method pair gets the mean difference, a 95%
    bootstrap interval, and a verdict ("A > B", "B > A", or "tie").
    """
    if len(reports) < 2:
        raise ComparisonError("compare needs at least two reports")
    groups = _group_reports(reports)
    if len(groups) < 2:
        raise ComparisonError("compare needs at least two distinct methods")

    hashes = {rep.get("corpus_hash") for rep in reports}
    if len(hashes) != 1:
        raise ComparisonError(f"mismatched corpora: {sorted(map(str, hashes))}")
    ids = None
    for rep in reports:
        if split not in rep.get("per_task", {}):
            raise ComparisonError(
                f"report {rep.get('method')!r} (seed {rep.get('seed')}) has "
                f"no per-task scores for split {split!r}")
        if ids is None:
            ids = rep["task_ids"][split]
        elif rep["task_ids"][split] != ids:
            raise ComparisonError("reports cover different task lists")
    seed_sets = {name: sorted(r["seed"] for r in reps)
                 for name, reps in groups.items()}
    if len({tuple(s) for s in seed_sets.values()}) != 1:
        raise ComparisonError(f"mismatched seeds across methods: {seed_sets}")

    vectors = {}
    for name, reps in groups.items():
        rows = [np.asarray(r["per_task"][split], dtype=np.float64)
                for r in sorted(reps, key=lambda r: r["seed"])]
        vectors[name] = np.concatenate(rows)

    names = list(groups)
    methods = [{"method": n, "mean": float(vectors[n].mean()),
                "n_scores": int(len(vectors[n]))} for n in names]
    rng = derive_rng(seed, "bootstrap")
    pairs = []
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            a, b = names[i], names[j]
            diff = vectors[a] - vectors[b]
            idx = rng.integers(0, len(diff), size=(n_boot, len(diff)))
            boots = diff[idx].mean(axis=1)
            lo = float(np.percentile(boots, 2.5))
            hi = float(np.percentile(boots, 97.5))
            if lo > 0:
                verdict = f"{a} > {b}"
            elif hi < 0:
                verdict = f"{b} > {a}"
            else:
                verdict = "tie"
            pairs.append({"a": a, "b": b, "mean_diff": float(diff.mean()),
                          "ci_low": lo, "ci_high": hi, "verdict": verdict})
    return {"split": split, "methods": methods, "pairs": pairs}
