"""The domain-agnostic three-phase protocol and its baselines.

Phase 1 (language learning): fit interpretation parameters by minimizing
per-example loss under ground-truth descriptions, and proposal
parameters by maximizing description log-likelihood given examples.
Phase 2 (concept learning): sample candidate descriptions from the
proposal model, score each by interpretation loss on the concept
examples, keep the argmin. Phase 3 (evaluation): predict with the
selected description.

Baselines swap the description context for a trainable per-task
embedding (multitask), the mean example representation (meta), or the
meta context trained with an auxiliary description head (meta+joint).
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import AnnotationAccessError, ContractError
from .optim import AdamState, adam_step
from .params import ParameterStore
from .seeding import derive_rng, derive_seed

__all__ = [
    "LANG", "VAL", "TEST", "SPLITS", "TaskDataset", "ModelBundle",
    "Hypothesis", "DomainAdapter", "TrainConfig", "language_learn",
    "concept_learn", "evaluate", "oracle_hypothesis", "multitask_fit",
    "refit_task_embedding", "meta_predict", "meta_joint_pretrain",
    "evaluate_tasks", "MultitaskModel",
]

LANG = "language-learning"
VAL = "validation"
TEST = "test"
SPLITS = (LANG, VAL, TEST)


class TaskDataset:
    """One task: concept examples, an optional description, a split tag.

    Descriptions of language-learning tasks are training data; for
    validation/test tasks they exist only for reporting and oracle rows,
    and reading them through `.annotation` is a contract violation.
    """

    __slots__ = ("task_id", "examples", "split", "info", "_annotation")

    def __init__(self, task_id: str, examples: list, split: str,
                 annotation: list[int] | None = None,
                 info: dict[str, Any] | None = None):
        if split not in SPLITS:
            raise ContractError(f"unknown split {split!r}")
        if split == LANG and annotation is None:
            raise ContractError(f"task {task_id}: language-learning tasks "
                                "must carry an annotation")
        self.task_id = task_id
        self.examples = examples
        self.split = split
        self.info = info or {}
        self._annotation = annotation

    @property
    def annotation(self) -> list[int]:
        if self.split != LANG:
            raise AnnotationAccessError(
                f"task {self.task_id} is in split {self.split!r}; "
                "its annotation is not available to learners")
        return self._annotation

    def oracle_annotation(self) -> list[int] | None:
        """Ground-truth description for oracle rows and reporting only."""
        return self._annotation


@dataclass
class ModelBundle:
    """Interpretation + proposal parameters from one language-learning run."""
    run_id: str
    interp: ParameterStore
    proposal: ParameterStore
    info: dict[str, Any] = field(default_factory=dict)


@dataclass
class Hypothesis:
    """A candidate description with its concept-example loss."""
    tokens: tuple[int, ...]
    loss: float
    proposal_logprob: float
    fallback: bool = False
    candidates: list[dict] = field(default_factory=list)


@dataclass
class MultitaskModel:
    """Shared parameters plus the per-task embedding table."""
    run_id: str
    store: ParameterStore
    task_index: dict[str, int]
    emb_dim: int


@dataclass
class TrainConfig:
    """Knobs for one language-learning (or baseline pretraining) run."""
    interp_steps: int = 400
    proposal_steps: int = 400
    interp_step_size: float = 0.001
    proposal_step_size: float = 0.001
    batch_tasks: int = 20
    checkpoint_grid: tuple[float, ...] = (1.0,)
    val_budget: int = 40
    val_k: int = 10
    refit_steps: int = 50
    refit_step_size: float = 0.01
    temperature: float = 1.0
    aux_weight: float = 1.0
    log_every: int = 50


class DomainAdapter(ABC):
    """Everything that varies across domains.

    Training-time hooks run under an active tape and take the tensor
    dict of the relevant store; concept-time hooks run on frozen numpy
    parameters. Batches are adapter-defined dicts, but must carry
    "task_idx" (int array) when used with the multitask path.
    """

    name: str = "abstract"
    max_desc_len: int = 20

    # --- architecture -----------------------------------------------------
    @abstractmethod
    def init_rep(self, store: ParameterStore) -> None:
        """Example-representation (and scoring) parameters."""

    @abstractmethod
    def init_desc_encoder(self, store: ParameterStore) -> None:
        """Description-encoder parameters (interpretation side)."""

    @abstractmethod
    def init_proposal(self, store: ParameterStore) -> None:
        """Proposal model: its own example encoder plus a decoder."""

    def init_aux_head(self, store: ParameterStore) -> None:
        """Description head for meta+joint; defaults to the proposal decoder."""
        self.init_proposal(store)

    def encode_annotation(self, annotation) -> tuple[int, ...]:
        """Stored annotation as decoder token ids (identity when the
        corpus already stores ids)."""
        return tuple(annotation)

    # --- recorded forward passes -------------------------------------------
    @abstractmethod
    def desc_context(self, tensors: dict[str, Tensor], batch: dict) -> Tensor:
        """Encoded ground-truth descriptions, one row per batch example."""

    @abstractmethod
    def meta_context(self, tensors: dict[str, Tensor], batch: dict) -> Tensor:
        """Mean example representation per batch example's task."""

    @abstractmethod
    def interp_loss_ctx(self, tensors: dict[str, Tensor], ctx: Tensor,
                        batch: dict) -> Tensor:
        """Mean per-example interpretation loss given context rows."""

    @abstractmethod
    def proposal_loss(self, tensors: dict[str, Tensor], batch: dict) -> Tensor:
        """Mean negative log-likelihood of annotations given examples."""

    def aux_loss(self, tensors: dict[str, Tensor], batch: dict) -> Tensor:
        """Auxiliary description-prediction loss for meta+joint."""
        return self.proposal_loss(tensors, batch)

    # --- batching -----------------------------------------------------------
    @abstractmethod
    def interp_batches(self, tasks: list[TaskDataset], store: ParameterStore,
                       rng: np.random.Generator, cfg: TrainConfig) -> Iterator[dict]:
        """Endless deterministic stream of interpretation batches."""

    @abstractmethod
    def proposal_batches(self, tasks: list[TaskDataset],
                         rng: np.random.Generator, cfg: TrainConfig) -> Iterator[dict]:
        """Endless deterministic stream of proposal batches."""

    # --- concept phase (frozen parameters) ----------------------------------
    @abstractmethod
    def proposal_context_np(self, bundle: ModelBundle, examples) -> np.ndarray:
        """Conditioning vector for the proposal decoder."""

    @abstractmethod
    def propose_one(self, bundle: ModelBundle, context: np.ndarray,
                    rng: np.random.Generator, temperature: float) -> list[int]:
        """One sampled description (content tokens, no EOS)."""

    @abstractmethod
    def proposal_logprobs(self, bundle: ModelBundle, context: np.ndarray,
                          candidates: list[tuple[int, ...]]) -> np.ndarray:
        """Log q(candidate | context) for every candidate, batched."""

    @abstractmethod
    def hypothesis_losses(self, interp: ParameterStore,
                          candidates: list[tuple[int, ...]], examples,
                          rng: np.random.Generator) -> np.ndarray:
        """Summed concept-example loss per candidate, batched."""

    # --- evaluation ----------------------------------------------------------
    @abstractmethod
    def predict(self, interp: ParameterStore, tokens: tuple[int, ...], x):
        """Deterministic prediction for one evaluation input."""

    @abstractmethod
    def task_metric(self, interp: ParameterStore, task: TaskDataset,
                    tokens: tuple[int, ...], rng: np.random.Generator) -> float:
        """Score of the description on the task's held-out evaluation."""

    # --- baseline hooks (classification/transduction domains) ----------------
    def concept_refit_batch(self, examples) -> dict:
        """Concept examples as one batch for the multitask refit; must
        include "_n" (row count)."""
        raise NotImplementedError(f"{self.name}: no multitask refit")

    def meta_context_np(self, store: ParameterStore, examples) -> np.ndarray:
        """Frozen-parameter mean example representation."""
        raise NotImplementedError(f"{self.name}: no meta context")

    def predict_ctx(self, store: ParameterStore, ctx: np.ndarray, x):
        """Prediction from a raw context vector instead of a description."""
        raise NotImplementedError(f"{self.name}: no context prediction")

    def task_metric_ctx(self, store: ParameterStore, task: "TaskDataset",
                        ctx: np.ndarray, rng: np.random.Generator) -> float:
        """Held-out metric from a raw context vector."""
        raise NotImplementedError(f"{self.name}: no context metric")


# ---------------------------------------------------------------------------
# phase 1: language learning


def _grid_steps(total: int, fractions: tuple[float, ...]) -> list[int]:
    pts = sorted({max(1, min(total, int(round(f * total)))) for f in fractions})
    if not pts or pts[-1] != total:
        pts.append(total)
    return pts


def _train_store(store: ParameterStore, loss_fn, batches: Iterator[dict],
                 steps: int, step_size: float, snapshots: list[int],
                 label: str) -> dict[int, ParameterStore]:
    """Adam-train `store` for `steps` batches; snapshot at listed steps."""
    tensors = store.tensors()
    state = AdamState(step_size=step_size)
    names = list(store.arrays)
    out: dict[int, ParameterStore] = {}
    for step in range(1, steps + 1):
        batch = next(batches)
        with ad.recording() as tape:
            loss = loss_fn(tensors, batch)
            grads = ad.grad(loss, [tensors[n] for n in names], tape)
        if not np.isfinite(loss.data):
            raise ContractError(f"{label}: non-finite loss at step {step}")
        adam_step(store.arrays, dict(zip(names, grads)), state)
        if step in snapshots:
            out[step] = store.clone()
    return out


def language_learn(tasks: list[TaskDataset], adapter: DomainAdapter,
                   cfg: TrainConfig, seed: int,
                   val_tasks: list[TaskDataset] | None = None,
                   val_k: int | None = None) -> ModelBundle:
    """Fit interpretation and proposal parameters on annotated tasks.

    Both models train independently on the same data. When validation
    tasks are supplied and the checkpoint grid has more than one point,
    the returned bundle is the grid point with the best validation
    concept-learning score.
    """
    for t in tasks:
        if t.annotation is None:
            raise ContractError(f"task {t.task_id} lacks an annotation")

    interp = ParameterStore(derive_rng(seed, "interp-init"))
    adapter.init_rep(interp)
    adapter.init_desc_encoder(interp)
    proposal = ParameterStore(derive_rng(seed, "proposal-init"))
    adapter.init_proposal(proposal)

    igrid = _grid_steps(cfg.interp_steps, cfg.checkpoint_grid)
    pgrid = _grid_steps(cfg.proposal_steps, cfg.checkpoint_grid)

    isnaps = _train_store(
        interp,
        lambda tsr, b: adapter.interp_loss_ctx(tsr, adapter.desc_context(tsr, b), b),
        adapter.interp_batches(tasks, interp, derive_rng(seed, "interp-batches"), cfg),
        cfg.interp_steps, cfg.interp_step_size, igrid, f"{adapter.name}/interp")
    psnaps = _train_store(
        proposal, adapter.proposal_loss,
        adapter.proposal_batches(tasks, derive_rng(seed, "proposal-batches"), cfg),
        cfg.proposal_steps, cfg.proposal_step_size, pgrid, f"{adapter.name}/proposal")

    run_id = f"{adapter.name}-l3-{seed}"
    bundles = [ModelBundle(run_id, isnaps[i], psnaps[p],
                           {"interp_steps": i, "proposal_steps": p})
               for i, p in zip(igrid, pgrid)]
    if val_tasks and len(bundles) > 1:
        subset = val_tasks[:cfg.val_budget]
        k = val_k if val_k is not None else cfg.val_k
        best, best_score = None, -np.inf
        for idx, b in enumerate(bundles):
            score = float(np.mean(evaluate_tasks(
                b, adapter, subset, k, derive_seed(seed, "val-select", idx),
                cfg.temperature)))
            if score > best_score:
                best, best_score = b, score
        best.info["val_score"] = best_score
        return best
    return bundles[-1]


# ---------------------------------------------------------------------------
# phase 2: concept learning


def concept_learn(examples, bundle: ModelBundle, adapter: DomainAdapter,
                  k: int, rng: np.random.Generator,
                  temperature: float = 1.0) -> Hypothesis:
    """Sample k descriptions, score them on the examples, keep the argmin.

    Samples are deduplicated and empty sequences dropped; if every draw
    is empty, falls back to one greedy decode (reported on the
    hypothesis). Ties break toward higher proposal log-probability, then
    lexicographically over token ids.
    """
    if k < 1:
        raise ContractError("sample budget k must be >= 1")
    if not _nonempty(examples):
        raise ContractError("concept_learn needs at least one example")
    ctx = adapter.proposal_context_np(bundle, examples)
    seen: set[tuple[int, ...]] = set()
    cands: list[tuple[int, ...]] = []
    for _ in range(k):
        toks = tuple(adapter.propose_one(bundle, ctx, rng, temperature))
        if toks and toks not in seen:
            seen.add(toks)
            cands.append(toks)
    fallback = not cands
    if fallback:
        cands = [tuple(adapter.propose_one(bundle, ctx, rng, 0.0))]
    losses = np.asarray(adapter.hypothesis_losses(bundle.interp, cands,
                                                  examples, rng), dtype=np.float64)
    logprobs = np.asarray(adapter.proposal_logprobs(bundle, ctx, cands),
                          dtype=np.float64)
    if not np.all(np.isfinite(losses)):
        raise ContractError("non-finite hypothesis loss")
    order = sorted(range(len(cands)),
                   key=lambda i: (losses[i], -logprobs[i], cands[i]))
    best = order[0]
    records = [{"tokens": list(cands[i]), "loss": float(losses[i]),
                "proposal_logprob": float(logprobs[i]),
                "selected": i == best} for i in range(len(cands))]
    return Hypothesis(tokens=cands[best], loss=float(losses[best]),
                      proposal_logprob=float(logprobs[best]),
                      fallback=fallback, candidates=records)


def _nonempty(examples) -> bool:
    try:
        return len(examples) > 0
    except TypeError:
        return examples is not None  # domain handles without a length


def oracle_hypothesis(task: TaskDataset, bundle: ModelBundle,
                      adapter: DomainAdapter,
                      rng: np.random.Generator) -> Hypothesis:
    """Score the ground-truth description as if it had been proposed.

    Evaluation then runs identically to the inferred-hypothesis path.
    """
    tokens = task.oracle_annotation()
    if tokens is None:
        raise ContractError(f"task {task.task_id} has no ground-truth description")
    toks = adapter.encode_annotation(tokens)
    loss = float(adapter.hypothesis_losses(bundle.interp, [toks],
                                           task.examples, rng)[0])
    ctx = adapter.proposal_context_np(bundle, task.examples)
    lp = float(adapter.proposal_logprobs(bundle, ctx, [toks])[0])
    return Hypothesis(tokens=toks, loss=loss, proposal_logprob=lp,
                      candidates=[{"tokens": list(toks), "loss": loss,
                                   "proposal_logprob": lp, "selected": True}])


# ---------------------------------------------------------------------------
# phase 3: evaluation


def evaluate(hypothesis: Hypothesis, bundle: ModelBundle,
             adapter: DomainAdapter, eval_input):
    """Deterministic prediction for one evaluation input."""
    return adapter.predict(bundle.interp, hypothesis.tokens, eval_input)


def evaluate_tasks(bundle: ModelBundle, adapter: DomainAdapter,
                   tasks: list[TaskDataset], k: int, seed: int,
                   temperature: float = 1.0,
                   method: str = "l3") -> np.ndarray:
    """Per-task metric under sampled (or oracle) descriptions."""
    out = np.zeros(len(tasks))
    for i, task in enumerate(tasks):
        rng = derive_rng(seed, "concept", i)
        if method == "l3-oracle-descriptions":
            hyp = oracle_hypothesis(task, bundle, adapter, rng)
        else:
            hyp = concept_learn(task.examples, bundle, adapter, k, rng,
                                temperature)
        out[i] = adapter.task_metric(bundle.interp, task, hyp.tokens,
                                     derive_rng(seed, "metric", i))
    return out


# ---------------------------------------------------------------------------
# baselines


def multitask_fit(tasks: list[TaskDataset], adapter: DomainAdapter,
                  cfg: TrainConfig, seed: int, emb_dim: int) -> MultitaskModel:
    """Jointly train shared parameters and one embedding per task."""
    if emb_dim <= 0:
        raise ContractError("task-embedding dim must be positive")
    store = ParameterStore(derive_rng(seed, "multitask-init"))
    adapter.init_rep(store)
    store.add("task_emb", (len(tasks), emb_dim), fan_in=emb_dim)
    task_index = {t.task_id: i for i, t in enumerate(tasks)}

    def loss_fn(tensors, batch):
        ctx = ad.gather_rows(tensors["task_emb"], batch["task_idx"])
        return adapter.interp_loss_ctx(tensors, ctx, batch)

    _train_store(store, loss_fn,
                 adapter.interp_batches(tasks, store,
                                        derive_rng(seed, "interp-batches"), cfg),
                 cfg.interp_steps, cfg.interp_step_size,
                 [cfg.interp_steps], f"{adapter.name}/multitask")
    return MultitaskModel(run_id=f"{adapter.name}-multitask-{seed}",
                          store=store, task_index=task_index, emb_dim=emb_dim)


def refit_task_embedding(model: MultitaskModel, adapter: DomainAdapter,
                         examples, cfg: TrainConfig, seed: int) -> np.ndarray:
    """Concept-time refit of a fresh embedding; shared parameters frozen."""
    frozen = {name: ad.constant(arr) for name, arr in model.store.arrays.items()}
    theta = ParameterStore(derive_rng(seed, "theta-init"))
    theta.add("theta_c", (1, model.emb_dim), zero=True)
    tensors = theta.tensors()
    state = AdamState(step_size=cfg.refit_step_size)
    batch = adapter.concept_refit_batch(examples)
    n = batch["_n"]
    for _ in range(cfg.refit_steps):
        with ad.recording() as tape:
            ctx = ad.gather_rows(tensors["theta_c"], np.zeros(n, dtype=np.intp))
            loss = adapter.interp_loss_ctx(frozen, ctx, batch)
            (g,) = ad.grad(loss, [tensors["theta_c"]], tape)
        adam_step(theta.arrays, {"theta_c": g}, state)
    return theta.arrays["theta_c"][0]


def meta_predict(examples, eval_input, store: ParameterStore,
                 adapter: DomainAdapter):
    """Score the query against the mean example representation.

    No concept-time optimization happens; the context is a pure function
    of the examples.
    """
    ctx = adapter.meta_context_np(store, examples)
    return adapter.predict_ctx(store, ctx, eval_input)


def meta_joint_pretrain(tasks: list[TaskDataset], adapter: DomainAdapter,
                        cfg: TrainConfig, seed: int,
                        aux_weight: float = 1.0) -> ParameterStore:
    """Meta pretraining, optionally with a description-prediction term.

    aux_weight 0 runs the plain Meta objective; the auxiliary head is
    then never created, so the main-parameter trajectory is identical
    step for step. The head is dropped at concept time either way (this
    function only ever returns the main store).
    """
    store = ParameterStore(derive_rng(seed, "meta-init"))
    adapter.init_rep(store)
    aux: ParameterStore | None = None
    aux_tensors: dict[str, Tensor] = {}
    aux_state = None
    aux_log: list[float] = []
    if aux_weight > 0:
        aux = ParameterStore(derive_rng(seed, "meta-aux-init"))
        adapter.init_aux_head(aux)
        aux_tensors = aux.tensors()
        aux_state = AdamState(step_size=cfg.interp_step_size)

    tensors = store.tensors()
    names = list(store.arrays)
    state = AdamState(step_size=cfg.interp_step_size)
    batches = adapter.interp_batches(tasks, store,
                                     derive_rng(seed, "interp-batches"), cfg)
    for step in range(1, cfg.interp_steps + 1):
        batch = next(batches)
        with ad.recording() as tape:
            ctx = adapter.meta_context(tensors, batch)
            main = adapter.interp_loss_ctx(tensors, ctx, batch)
            if aux is not None:
                both = {**tensors, **aux_tensors}
                a = adapter.aux_loss(both, batch)
                total = ad.add(main, ad.mul(a, ad.constant(aux_weight)))
                aux_names = list(aux.arrays)
                grads = ad.grad(total, [tensors[n] for n in names] +
                                [aux_tensors[n] for n in aux_names], tape)
                adam_step(store.arrays, dict(zip(names, grads[:len(names)])), state)
                adam_step(aux.arrays, dict(zip(aux_names, grads[len(names):])),
                          aux_state)
                if not (np.isfinite(main.data) and np.isfinite(a.data)):
                    raise ContractError(f"meta+joint: non-finite loss at step {step}")
                aux_log.append(float(a.data))
            else:
                grads = ad.grad(main, [tensors[n] for n in names], tape)
                if not np.isfinite(main.data):
                    raise ContractError(f"meta: non-finite loss at step {step}")
                adam_step(store.arrays, dict(zip(names, grads)), state)
    store.aux_loss_log = aux_log  # inspection hook for trend checks
    return store
