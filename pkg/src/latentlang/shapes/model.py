"""Models for the visual domain.

Interpretation: a small convolution stack and two fully-connected
layers embed the raster; a GRU embeds the caption; the match
probability is the sigmoid of their inner product. Proposal: a separate
convolution stack embeds the four positive scenes, and a GRU decoder
emits a caption conditioned on their mean embedding.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..errors import ContractError
from ..params import ParameterStore
from ..protocol import DomainAdapter, ModelBundle, TaskDataset, TrainConfig
from ..seq import (EOS, Vocab, decode_logprob, decode_sample, decoder_view,
                   gru_view, init_decoder, init_gru, pad_batch, rnn_encode)
from .scenes import RASTER_SIZE, Scene, caption_words

__all__ = ["ShapesAdapter", "shapes_vocab"]

KERNEL = 5
STRIDE = 2


def shapes_vocab() -> Vocab:
    return Vocab(caption_words())


def _conv_out(size: int) -> int:
    return (size - KERNEL) // STRIDE + 1


class ShapesAdapter(DomainAdapter):
    """Classification: 4 positive scenes, one balanced yes/no query."""

    name = "shapes"

    def __init__(self, hidden: int = 32, emb: int = 16,
                 conv1: int = 8, conv2: int = 16, fc: int = 64,
                 max_desc_len: int = 12):
        self.hidden = hidden
        self.emb = emb
        self.conv1 = conv1
        self.conv2 = conv2
        self.fc = fc
        self.max_desc_len = max_desc_len
        self.vocab = shapes_vocab()
        side = _conv_out(_conv_out(RASTER_SIZE))
        self.flat = side * side * conv2

    # --- architecture -----------------------------------------------------
    def _init_conv(self, store: ParameterStore, prefix: str) -> None:
        store.add(f"{prefix}conv1_w", (KERNEL, KERNEL, 8, self.conv1),
                  fan_in=KERNEL * KERNEL * 8)
        store.add(f"{prefix}conv1_b", (self.conv1,), zero=True)
        store.add(f"{prefix}conv2_w", (KERNEL, KERNEL, self.conv1, self.conv2),
                  fan_in=KERNEL * KERNEL * self.conv1)
        store.add(f"{prefix}conv2_b", (self.conv2,), zero=True)
        store.add(f"{prefix}fc1_w", (self.flat, self.fc))
        store.add(f"{prefix}fc1_b", (self.fc,), zero=True)
        store.add(f"{prefix}fc2_w", (self.fc, self.hidden))
        store.add(f"{prefix}fc2_b", (self.hidden,), zero=True)

    def init_rep(self, store: ParameterStore) -> None:
        self._init_conv(store, "")

    def init_desc_encoder(self, store: ParameterStore) -> None:
        init_gru(store, "wenc", len(self.vocab), self.emb, self.hidden)

    def init_proposal(self, store: ParameterStore) -> None:
        self._init_conv(store, "q")
        init_decoder(store, "qdec", len(self.vocab), self.emb, self.hidden,
                     ctx_dim=self.hidden)

    def init_aux_head(self, store: ParameterStore) -> None:
        # decoder only; the auxiliary loss backpropagates into the shared
        # convolution stack through the meta context
        init_decoder(store, "auxdec", len(self.vocab), self.emb, self.hidden,
                     ctx_dim=self.hidden)

    # --- forward pieces -----------------------------------------------------
    def _rep(self, tensors: dict[str, Tensor], raster: np.ndarray,
             prefix: str = "") -> Tensor:
        x = ad.constant(np.ascontiguousarray(raster, dtype=np.float64))
        h = ad.tanh(ad.conv2d(x, tensors[f"{prefix}conv1_w"],
                              tensors[f"{prefix}conv1_b"], stride=STRIDE))
        h = ad.tanh(ad.conv2d(h, tensors[f"{prefix}conv2_w"],
                              tensors[f"{prefix}conv2_b"], stride=STRIDE))
        flat = ad.reshape(h, (raster.shape[0], self.flat))
        f = ad.tanh(ad.add(ad.matmul(flat, tensors[f"{prefix}fc1_w"]),
                           tensors[f"{prefix}fc1_b"]))
        return ad.add(ad.matmul(f, tensors[f"{prefix}fc2_w"]),
                      tensors[f"{prefix}fc2_b"])

    @staticmethod
    def _bce(z: Tensor, labels: np.ndarray) -> Tensor:
        """Mean binary cross-entropy from match logits, computed as
        two-class cross-entropy for stability."""
        b = z.data.shape[0]
        logits = ad.concat([ad.constant(np.zeros((b, 1))),
                            ad.reshape(z, (b, 1))], axis=1)
        return ad.tmean(ad.softmax_xent(logits, labels.astype(np.intp)))

    # --- batching -----------------------------------------------------------
    def _make_batch(self, tasks: list[TaskDataset],
                    global_idx: np.ndarray) -> dict:
        rasters, labels, desc_enc, task_idx = [], [], [], []
        desc_dec, positive_row = [], []
        for g, task in zip(global_idx, tasks):
            d = self.vocab.encode(list(task.annotation))
            desc_dec.append(d + [EOS])
            for scene in task.examples:
                rasters.append(scene.raster)
                labels.append(1)
                positive_row.append(True)
                desc_enc.append(d)
                task_idx.append(g)
            rasters.append(task.info["query"].raster)
            labels.append(int(task.info["label"]))
            positive_row.append(False)
            desc_enc.append(d)
            task_idx.append(g)
        b = len(rasters)
        t = len(tasks)
        per = b // t
        block = np.repeat(np.arange(t), per)
        pos = np.asarray(positive_row)
        picks = pos[None, :] & (block[None, :] == block[:, None])
        pos_mean = picks / picks.sum(axis=1, keepdims=True)
        task_pos = pos[None, :] & (block[None, :] == np.arange(t)[:, None])
        task_pos_mean = task_pos / task_pos.sum(axis=1, keepdims=True)
        return {"raster": np.stack(rasters).astype(np.float64),
                "labels": np.asarray(labels, dtype=np.intp),
                "desc_enc": pad_batch(desc_enc),
                "desc_dec": pad_batch(desc_dec),
                "task_idx": np.asarray(task_idx, dtype=np.intp),
                "pos_mean": pos_mean, "task_pos_mean": task_pos_mean,
                "_n": b}

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
        rep = self._rep(tensors, batch["raster"])
        return ad.matmul(ad.constant(batch["pos_mean"]), rep)

    def interp_loss_ctx(self, tensors: dict[str, Tensor], ctx: Tensor,
                        batch: dict) -> Tensor:
        rep = self._rep(tensors, batch["raster"])
        z = ad.tsum(ad.mul(ctx, rep), axis=1)
        return self._bce(z, batch["labels"])

    def proposal_loss(self, tensors: dict[str, Tensor], batch: dict) -> Tensor:
        rep = self._rep(tensors, batch["raster"], prefix="q")
        ctx = ad.matmul(ad.constant(batch["task_pos_mean"]), rep)
        lp = decode_logprob(batch["desc_dec"], ctx, decoder_view(tensors, "qdec"))
        return ad.tmean(ad.neg(lp))

    def aux_loss(self, tensors: dict[str, Tensor], batch: dict) -> Tensor:
        rep = self._rep(tensors, batch["raster"])
        ctx = ad.matmul(ad.constant(batch["task_pos_mean"]), rep)
        lp = decode_logprob(batch["desc_dec"], ctx,
                            decoder_view(tensors, "auxdec"))
        return ad.tmean(ad.neg(lp))

    # --- concept phase --------------------------------------------------------
    def encode_annotation(self, annotation) -> tuple[int, ...]:
        return tuple(self.vocab.encode(list(annotation)))

    def _stack(self, scenes) -> np.ndarray:
        return np.stack([s.raster for s in scenes]).astype(np.float64)

    def proposal_context_np(self, bundle: ModelBundle, examples) -> np.ndarray:
        tensors = bundle.proposal.tensors()
        rep = self._rep(tensors, self._stack(examples), prefix="q")
        return rep.data.mean(axis=0)

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
        enc_w = rnn_encode(pad_batch([list(c) for c in candidates]),
                           gru_view(tensors, "wenc")).data
        rep = self._rep(tensors, self._stack(examples)).data
        z = enc_w @ rep.T  # (candidates, positives)
        return np.logaddexp(0.0, -z).sum(axis=1)

    # --- evaluation -------------------------------------------------------------
    def score(self, interp: ParameterStore, tokens: tuple[int, ...],
              scene: Scene) -> float:
        """Match probability sigma(enc(description) . rep(scene))."""
        tensors = interp.tensors()
        enc_w = rnn_encode(pad_batch([list(tokens)]),
                           gru_view(tensors, "wenc")).data[0]
        rep = self._rep(tensors, self._stack([scene])).data[0]
        z = float(enc_w @ rep)
        return float(1.0 / (1.0 + np.exp(-z))) if z >= 0 else \
            float(np.exp(z) / (1.0 + np.exp(z)))

    def predict(self, interp: ParameterStore, tokens: tuple[int, ...],
                x: Scene) -> int:
        return int(self.score(interp, tokens, x) > 0.5)

    def task_metric(self, interp: ParameterStore, task: TaskDataset,
                    tokens: tuple[int, ...], rng: np.random.Generator) -> float:
        got = self.predict(interp, tokens, task.info["query"])
        return float(got == task.info["label"])

    # --- baseline hooks -----------------------------------------------------------
    def concept_refit_batch(self, examples) -> dict:
        return {"raster": self._stack(examples),
                "labels": np.ones(len(examples), dtype=np.intp),
                "_n": len(examples)}

    def meta_context_np(self, store: ParameterStore, examples) -> np.ndarray:
        rep = self._rep(store.tensors(), self._stack(examples))
        return rep.data.mean(axis=0)

    def _score_ctx(self, store: ParameterStore, ctx: np.ndarray,
                   scene: Scene) -> float:
        rep = self._rep(store.tensors(), self._stack([scene])).data[0]
        z = float(np.asarray(ctx) @ rep)
        return float(1.0 / (1.0 + np.exp(-z))) if z >= 0 else \
            float(np.exp(z) / (1.0 + np.exp(z)))

    def predict_ctx(self, store: ParameterStore, ctx: np.ndarray,
                    x: Scene) -> int:
        return int(self._score_ctx(store, ctx, x) > 0.5)

    def task_metric_ctx(self, store: ParameterStore, task: TaskDataset,
                        ctx: np.ndarray, rng: np.random.Generator) -> float:
        got = self.predict_ctx(store, ctx, task.info["query"])
        return float(got == task.info["label"])
