"""Sequence models for the string-editing domain.

Interpretation model: encode the input word and the rule description
with separate GRUs and decode the output word from their concatenation,
so a description is useful exactly to the extent it predicts the edit.
Proposal model: encode each demonstration pair as one separator-joined
character sequence, average over the pairs, decode a description.

The baselines reuse the same input encoder and output decoder; only the
description context changes (task embedding, or mean pair encoding).
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..errors import ContractError
from ..params import ParameterStore
from ..protocol import DomainAdapter, ModelBundle, TaskDataset, TrainConfig
from ..seeding import derive_rng
from ..seq import (EOS, Vocab, decode_logprob, decode_sample, decoder_view,
                   gru_view, init_decoder, init_gru, pad_batch, rnn_encode)
from .describe import description_vocab_tokens, parse_description
from .transducer import ALPHABET, apply_transducer, parse_formal_tokens

__all__ = ["StringsAdapter", "char_vocab", "desc_vocab", "oracle_select",
           "engine_metric", "identity_metric"]

SEPARATOR = "|"


def char_vocab() -> Vocab:
    """Characters plus the pair separator used by example encoders."""
    return Vocab(list(ALPHABET) + [SEPARATOR])


def desc_vocab() -> Vocab:
    return Vocab(description_vocab_tokens())


class StringsAdapter(DomainAdapter):
    """Transduction: 5 demonstration pairs, exact match on one query."""

    name = "strings"

    def __init__(self, hidden: int = 32, emb: int = 16,
                 max_desc_len: int = 12):
        self.hidden = hidden
        self.emb = emb
        self.max_desc_len = max_desc_len
        self.chars = char_vocab()
        self.descs = desc_vocab()

    # --- architecture -----------------------------------------------------
    def init_rep(self, store: ParameterStore) -> None:
        nv = len(self.chars)
        init_gru(store, "xenc", nv, self.emb, self.hidden)
        init_gru(store, "pair", nv, self.emb, self.hidden)
        init_decoder(store, "ydec", nv, self.emb, self.hidden,
                     ctx_dim=2 * self.hidden)

    def init_desc_encoder(self, store: ParameterStore) -> None:
        init_gru(store, "wenc", len(self.descs), self.emb, self.hidden)

    def init_proposal(self, store: ParameterStore) -> None:
        init_gru(store, "qenc", len(self.chars), self.emb, self.hidden)
        init_decoder(store, "qdec", len(self.descs), self.emb, self.hidden,
                     ctx_dim=self.hidden)

    def init_aux_head(self, store: ParameterStore) -> None:
        # decoder only: the auxiliary loss must flow back into the shared
        # pair encoder, otherwise it could not shape the representation
        init_decoder(store, "auxdec", len(self.descs), self.emb, self.hidden,
                     ctx_dim=self.hidden)

    # --- id helpers ---------------------------------------------------------
    def _word_ids(self, w: str) -> list[int]:
        return self.chars.encode(list(w))

    def _pair_ids(self, x: str, y: str) -> list[int]:
        return self.chars.encode(list(x) + [SEPARATOR] + list(y))

    def _desc_ids(self, tokens) -> list[int]:
        return self.descs.encode(list(tokens))

    def encode_annotation(self, annotation) -> tuple[int, ...]:
        return tuple(self._desc_ids(annotation))

    # --- batching -----------------------------------------------------------
    def _make_batch(self, tasks: list[TaskDataset],
                    global_idx: np.ndarray) -> dict:
        xs, ys, pairs, desc_enc, task_idx = [], [], [], [], []
        desc_dec = []
        for g, task in zip(global_idx, tasks):
            d = self._desc_ids(task.annotation)
            desc_dec.append(d + [EOS])
            for x, y in task.examples:
                xs.append(self._word_ids(x))
                ys.append(self.chars.encode(list(y)) + [EOS])
                pairs.append(self._pair_ids(x, y))
                desc_enc.append(d)
                task_idx.append(g)
        b = len(xs)
        t = len(tasks)
        per = b // t
        block = np.repeat(np.arange(t), per)
        same = block[:, None] == block[None, :]
        loo = same.astype(np.float64)
        np.fill_diagonal(loo, 0.0)
        loo /= np.maximum(loo.sum(axis=1, keepdims=True), 1.0)
        task_mean = (np.arange(t)[:, None] == block[None, :]) / float(per)
        return {"x": pad_batch(xs), "y": pad_batch(ys),
                "pair": pad_batch(pairs), "desc_enc": pad_batch(desc_enc),
                "desc_dec": pad_batch(desc_dec),
                "task_idx": np.asarray(task_idx, dtype=np.intp),
                "loo": loo, "task_mean": task_mean, "_n": b}

    def _batch_stream(self, tasks: list[TaskDataset],
                      rng: np.random.Generator,
                      cfg: TrainConfig) -> Iterator[dict]:
        n = len(tasks)
        size = min(cfg.batch_tasks, n)
        while True:
            idx = rng.choice(n, size=size, replace=False)
            yield self._make_batch([tasks[i] for i in idx], idx)

    def interp_batches(self, tasks, store, rng, cfg):
        return self._batch_stream(tasks, rng, cfg)

    def proposal_batches(self, tasks, rng, cfg):
        return self._batch_stream(tasks, rng, cfg)

    # --- recorded forward passes ---------------------------------------------
    def desc_context(self, tensors: dict[str, Tensor], batch: dict) -> Tensor:
        return rnn_encode(batch["desc_enc"], gru_view(tensors, "wenc"))

    def meta_context(self, tensors: dict[str, Tensor], batch: dict) -> Tensor:
        # leave-one-out mean keeps the predicted pair out of its own context
        reps = rnn_encode(batch["pair"], gru_view(tensors, "pair"))
        return ad.matmul(ad.constant(batch["loo"]), reps)

    def interp_loss_ctx(self, tensors: dict[str, Tensor], ctx: Tensor,
                        batch: dict) -> Tensor:
        enc_x = rnn_encode(batch["x"], gru_view(tensors, "xenc"))
        full = ad.concat([enc_x, ctx], axis=1)
        lp = decode_logprob(batch["y"], full, decoder_view(tensors, "ydec"))
        return ad.tmean(ad.neg(lp))

    def proposal_loss(self, tensors: dict[str, Tensor], batch: dict) -> Tensor:
        reps = rnn_encode(batch["pair"], gru_view(tensors, "qenc"))
        ctx = ad.matmul(ad.constant(batch["task_mean"]), reps)
        lp = decode_logprob(batch["desc_dec"], ctx, decoder_view(tensors, "qdec"))
        return ad.tmean(ad.neg(lp))

    def aux_loss(self, tensors: dict[str, Tensor], batch: dict) -> Tensor:
        reps = rnn_encode(batch["pair"], gru_view(tensors, "pair"))
        ctx = ad.matmul(ad.constant(batch["task_mean"]), reps)
        lp = decode_logprob(batch["desc_dec"], ctx,
                            decoder_view(tensors, "auxdec"))
        return ad.tmean(ad.neg(lp))

    # --- concept phase --------------------------------------------------------
    def proposal_context_np(self, bundle: ModelBundle, examples) -> np.ndarray:
        ids = pad_batch([self._pair_ids(x, y) for x, y in examples])
        reps = rnn_encode(ids, gru_view(bundle.proposal.tensors(), "qenc"))
        return reps.data.mean(axis=0)

    def propose_one(self, bundle: ModelBundle, context: np.ndarray,
                    rng: np.random.Generator, temperature: float) -> list[int]:
        dec = decoder_view(bundle.proposal.tensors(), "qdec")
        return decode_sample(context, dec, rng, temperature, self.max_desc_len)

    def proposal_logprobs(self, bundle: ModelBundle, context: np.ndarray,
                          candidates: list[tuple[int, ...]]) -> np.ndarray:
        dec = decoder_view(bundle.proposal.tensors(), "qdec")
        ids = pad_batch([list(c) + [EOS] for c in candidates])
        ctx = ad.constant(np.tile(context, (len(candidates), 1)))
        return decode_logprob(ids, ctx, dec).data.copy()

    def hypothesis_losses(self, interp: ParameterStore,
                          candidates: list[tuple[int, ...]], examples,
                          rng: np.random.Generator) -> np.ndarray:
        tensors = interp.tensors()
        c, n = len(candidates), len(examples)
        enc_w = rnn_encode(pad_batch([list(t) for t in candidates]),
                           gru_view(tensors, "wenc"))
        enc_x = rnn_encode(pad_batch([self._word_ids(x) for x, _ in examples]),
                           gru_view(tensors, "xenc"))
        y_ids = pad_batch([self.chars.encode(list(y)) + [EOS]
                           for _, y in examples])
        w_rows = ad.gather_rows(enc_w, np.repeat(np.arange(c), n))
        x_rows = ad.gather_rows(enc_x, np.tile(np.arange(n), c))
        full = ad.concat([x_rows, w_rows], axis=1)
        lp = decode_logprob(np.tile(y_ids, (c, 1)), full,
                            decoder_view(tensors, "ydec"))
        return -lp.data.reshape(c, n).sum(axis=1)

    # --- evaluation -------------------------------------------------------------
    def _greedy_decode(self, tensors: dict[str, Tensor], ctx: np.ndarray,
                       x: str) -> str:
        dec = decoder_view(tensors, "ydec")
        ids = decode_sample(ctx, dec, np.random.default_rng(0),
                            temperature=0.0, max_len=3 * max(len(x), 1) + 4)
        return "".join(self.chars.decode(ids))

    def predict(self, interp: ParameterStore, tokens: tuple[int, ...],
                x: str) -> str:
        tensors = interp.tensors()
        enc_w = rnn_encode(pad_batch([list(tokens)]),
                           gru_view(tensors, "wenc")).data[0]
        enc_x = rnn_encode(pad_batch([self._word_ids(x)]),
                           gru_view(tensors, "xenc")).data[0]
        return self._greedy_decode(tensors, np.concatenate([enc_x, enc_w]), x)

    def task_metric(self, interp: ParameterStore, task: TaskDataset,
                    tokens: tuple[int, ...], rng: np.random.Generator) -> float:
        got = self.predict(interp, tokens, task.info["query_in"])
        return float(got == task.info["query_out"])

    # --- baseline hooks -----------------------------------------------------------
    def concept_refit_batch(self, examples) -> dict:
        xs = [self._word_ids(x) for x, _ in examples]
        ys = [self.chars.encode(list(y)) + [EOS] for _, y in examples]
        return {"x": pad_batch(xs), "y": pad_batch(ys), "_n": len(xs)}

    def meta_context_np(self, store: ParameterStore, examples) -> np.ndarray:
        ids = pad_batch([self._pair_ids(x, y) for x, y in examples])
        reps = rnn_encode(ids, gru_view(store.tensors(), "pair"))
        return reps.data.mean(axis=0)

    def predict_ctx(self, store: ParameterStore, ctx: np.ndarray,
                    x: str) -> str:
        tensors = store.tensors()
        enc_x = rnn_encode(pad_batch([self._word_ids(x)]),
                           gru_view(tensors, "xenc")).data[0]
        return self._greedy_decode(tensors, np.concatenate([enc_x, ctx]), x)

    def task_metric_ctx(self, store: ParameterStore, task: TaskDataset,
                        ctx: np.ndarray, rng: np.random.Generator) -> float:
        got = self.predict_ctx(store, ctx, task.info["query_in"])
        return float(got == task.info["query_out"])


# ---------------------------------------------------------------------------
# symbolic execution of proposed descriptions


def _parse_tokens(words: list[str], annotation_mode: str):
    if annotation_mode == "formal":
        return parse_formal_tokens(words)
    return parse_description(words)


def _execute(rule, x: str) -> str:
    """Unparseable candidates behave as the identity program."""
    return x if rule is None else apply_transducer(rule, x)


def oracle_select(pairs: list[tuple[str, str]], candidates: list,
                  engine=_execute):
    """Candidate program with the fewest demonstration mismatches.

    A program consistent with all pairs always wins over any partial
    match; ties keep the earliest candidate (proposal order).
    """
    best_rule, best_miss = None, None
    for rule in candidates:
        miss = sum(engine(rule, x) != y for x, y in pairs)
        if best_miss is None or miss < best_miss:
            best_rule, best_miss = rule, miss
    return best_rule


def engine_metric(bundle: ModelBundle, adapter: StringsAdapter,
                  tasks: list[TaskDataset], k: int, seed: int,
                  temperature: float = 1.0,
                  annotation_mode: str = "natural",
                  log: list | None = None) -> np.ndarray:
    """Per-task exact match when candidates are run as programs.

    Candidates come from the same proposal model, but scoring swaps the
    learned executor for the rule engine. With `log` supplied, one
    record per task is appended: tokens and mismatch count per
    candidate, plus the selected index.
    """
    if k < 1:
        raise ContractError("sample budget k must be >= 1")
    out = np.zeros(len(tasks))
    for i, task in enumerate(tasks):
        rng = derive_rng(seed, "concept", i)
        ctx = adapter.proposal_context_np(bundle, task.examples)
        seen: set[tuple[int, ...]] = set()
        cands: list[tuple[int, ...]] = []
        for _ in range(k):
            toks = tuple(adapter.propose_one(bundle, ctx, rng, temperature))
            if toks and toks not in seen:
                seen.add(toks)
                cands.append(toks)
        if not cands:
            cands = [tuple(adapter.propose_one(bundle, ctx, rng, 0.0))]
        rules = [_parse_tokens(adapter.descs.decode(list(toks)),
                               annotation_mode) for toks in cands]
        best_rule = oracle_select(task.examples, rules)
        got = _execute(best_rule, task.info["query_in"])
        out[i] = float(got == task.info["query_out"])
        if log is not None:
            misses = [sum(_execute(r, x) != y for x, y in task.examples)
                      for r in rules]
            sel = rules.index(best_rule)
            log.append({"task_id": task.task_id,
                        "candidates": [
                            {"tokens": list(t), "mismatches": int(m),
                             "selected": j == sel}
                            for j, (t, m) in enumerate(zip(cands, misses))]})
    return out


def identity_metric(tasks: list[TaskDataset]) -> np.ndarray:
    """Copy-the-input baseline; the floor any learned model must clear."""
    return np.array([float(t.info["query_in"] == t.info["query_out"])
                     for t in tasks])
