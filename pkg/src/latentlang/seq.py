"""GRU sequence encoder and autoregressive decoder.

All interpretation and proposal models that touch token sequences build
on these pieces: a `Vocab` with four reserved tokens, a batched GRU
encoder that masks trailing padding, and a decoder whose hidden state is
initialised from a projected context vector. Ops run through the
autodiff tensors whether or not a tape is active, so the same code path
serves training, scoring, and sampling.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError
from .params import ParameterStore

__all__ = [
    "PAD", "BOS", "EOS", "UNK", "Vocab", "pad_batch",
    "init_gru", "init_decoder", "GruParams", "DecoderParams",
    "gru_cell", "rnn_encode", "decode_logprob", "decode_sample",
]

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<s>", "</s>", "<unk>")


class Vocab:
    """Token list with the four reserved entries pinned to indices 0-3."""

    def __init__(self, tokens: list[str]):
        for r in RESERVED:
            if r in tokens:
                raise ContractError(f"reserved token {r!r} in content tokens")
        if len(set(tokens)) != len(tokens):
            raise ContractError("duplicate tokens in vocabulary")
        self._tokens = list(RESERVED) + list(tokens)
        self._index = {t: i for i, t in enumerate(self._tokens)}

    def __len__(self) -> int:
        return len(self._tokens)

    def index(self, token: str) -> int:
        return self._index.get(token, UNK)

    def token(self, index: int) -> str:
        return self._tokens[index]

    def encode(self, tokens: list[str]) -> list[int]:
        return [self.index(t) for t in tokens]

    def decode(self, ids) -> list[str]:
        return [self._tokens[int(i)] for i in ids
                if int(i) not in (PAD, BOS, EOS)]

    def to_file(self, path: str | Path) -> None:
        Path(path).write_text(
            "\n".join(self._tokens[len(RESERVED):]) + "\n", encoding="utf-8")

    @classmethod
    def from_file(cls, path: str | Path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([ln for ln in lines if ln])


def pad_batch(seqs: list[list[int]]) -> np.ndarray:
    """Stack variable-length id lists into a PAD-filled (B, T) int array."""
    if not seqs:
        raise ContractError("pad_batch needs at least one sequence")
    t = max(1, max(len(s) for s in seqs))
    out = np.full((len(seqs), t), PAD, dtype=np.intp)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out


# ---------------------------------------------------------------------------
# parameter block construction


@dataclass
class GruParams:
    emb: Tensor
    wz: Tensor
    bz: Tensor
    wr: Tensor
    br: Tensor
    wc: Tensor
    bc: Tensor

    @property
    def hidden(self) -> int:
        return self.wz.data.shape[1]

    @property
    def vocab_size(self) -> int:
        return self.emb.data.shape[0]


@dataclass
class DecoderParams:
    gru: GruParams
    ctx_w: Tensor
    ctx_b: Tensor
    out_w: Tensor  # (|Vocab|, hidden): one row of weights per vocab token
    out_b: Tensor


def init_gru(store: ParameterStore, prefix: str, vocab_size: int,
             emb_dim: int, hidden: int) -> None:
    store.add(f"{prefix}/emb", (vocab_size, emb_dim), fan_in=emb_dim)
    for gate in ("z", "r", "c"):
        store.add(f"{prefix}/w{gate}", (emb_dim + hidden, hidden))
        store.add(f"{prefix}/b{gate}", (hidden,), zero=True)


def init_decoder(store: ParameterStore, prefix: str, vocab_size: int,
                 emb_dim: int, hidden: int, ctx_dim: int) -> None:
    # the projected context rides along as part of every step's input,
    # not just the initial state, so the gates take emb + 2*hidden
    store.add(f"{prefix}/emb", (vocab_size, emb_dim), fan_in=emb_dim)
    for gate in ("z", "r", "c"):
        store.add(f"{prefix}/w{gate}", (emb_dim + 2 * hidden, hidden))
        store.add(f"{prefix}/b{gate}", (hidden,), zero=True)
    store.add(f"{prefix}/ctx_w", (ctx_dim, hidden))
    store.add(f"{prefix}/ctx_b", (hidden,), zero=True)
    store.add(f"{prefix}/out_w", (vocab_size, hidden), fan_in=hidden)
    store.add(f"{prefix}/out_b", (vocab_size,), zero=True)


def gru_view(tensors: dict[str, Tensor], prefix: str) -> GruParams:
    return GruParams(emb=tensors[f"{prefix}/emb"],
                     wz=tensors[f"{prefix}/wz"], bz=tensors[f"{prefix}/bz"],
                     wr=tensors[f"{prefix}/wr"], br=tensors[f"{prefix}/br"],
                     wc=tensors[f"{prefix}/wc"], bc=tensors[f"{prefix}/bc"])


def decoder_view(tensors: dict[str, Tensor], prefix: str) -> DecoderParams:
    return DecoderParams(gru=gru_view(tensors, prefix),
                         ctx_w=tensors[f"{prefix}/ctx_w"],
                         ctx_b=tensors[f"{prefix}/ctx_b"],
                         out_w=tensors[f"{prefix}/out_w"],
                         out_b=tensors[f"{prefix}/out_b"])


# ---------------------------------------------------------------------------
# recurrence


def gru_cell(x_emb: Tensor, h: Tensor, p: GruParams) -> Tensor:
    """One GRU step on a (B, emb) input and (B, hidden) state."""
    if x_emb.data.ndim != 2 or h.data.ndim != 2 or \
            x_emb.data.shape[0] != h.data.shape[0] or \
            x_emb.data.shape[1] + h.data.shape[1] != p.wz.data.shape[0]:
        raise ContractError(
            f"gru_cell dims: x {x_emb.data.shape}, h {h.data.shape}, "
            f"wz {p.wz.data.shape}")
    xh = ad.concat([x_emb, h], axis=1)
    z = ad.sigmoid(ad.add(ad.matmul(xh, p.wz), p.bz))
    r = ad.sigmoid(ad.add(ad.matmul(xh, p.wr), p.br))
    xrh = ad.concat([x_emb, ad.mul(r, h)], axis=1)
    cand = ad.tanh(ad.add(ad.matmul(xrh, p.wc), p.bc))
    one = ad.constant(1.0)
    return ad.add(ad.mul(ad.sub(one, z), h), ad.mul(z, cand))


def _check_ids(ids: np.ndarray, vocab_size: int) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.intp)
    if ids.ndim != 2:
        raise ContractError("expected a (B, T) id batch")
    if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
        raise ContractError("token id outside the vocabulary")
    return ids


def rnn_encode(ids: np.ndarray, p: GruParams) -> Tensor:
    """Final hidden state after consuming BOS then the non-PAD tokens.

    `ids` is a (B, T) PAD-padded batch. Updates at PAD positions are
    masked out, so trailing padding never changes the result.
    """
    ids = _check_ids(ids, p.vocab_size)
    b, t = ids.shape
    h = ad.constant(np.zeros((b, p.hidden)))
    bos = ad.gather_rows(p.emb, np.full(b, BOS, dtype=np.intp))
    h = gru_cell(bos, h, p)
    for step in range(t):
        col = ids[:, step]
        live = col != PAD
        if not live.any():
            break
        x = ad.gather_rows(p.emb, np.where(live, col, 0))
        h_new = gru_cell(x, h, p)
        if live.all():
            h = h_new
        else:
            mask = ad.constant(live.astype(np.float64)[:, None])
            h = ad.add(ad.mul(mask, h_new),
                       ad.mul(ad.sub(ad.constant(1.0), mask), h))
    return h


def _init_hidden(context: Tensor, p: DecoderParams) -> Tensor:
    return ad.tanh(ad.add(ad.matmul(context, p.ctx_w), p.ctx_b))


def decode_logprob(ids: np.ndarray, context: Tensor, p: DecoderParams) -> Tensor:
    """Log-probability of each EOS-terminated row of `ids` given `context`.

    Returns a (B,) tensor of sums over steps of log softmax probabilities.
    Rows must contain EOS; positions after it must be PAD and contribute 0.
    """
    ids = _check_ids(ids, p.gru.vocab_size)
    if not (ids == EOS).any(axis=1).all():
        raise ContractError("decode_logprob rows must be EOS-terminated")
    b, t = ids.shape
    feed = _init_hidden(context, p)
    h = feed
    out_wt = ad.transpose(p.out_w)
    prev = np.full(b, BOS, dtype=np.intp)
    total = ad.constant(np.zeros(b))
    seen_eos = np.zeros(b, dtype=bool)
    for step in range(t):
        target = ids[:, step]
        live = ~seen_eos & (target != PAD)
        if not live.any():
            break
        x = ad.concat([ad.gather_rows(p.gru.emb, prev), feed], axis=1)
        h_new = gru_cell(x, h, p.gru)
        if live.all():
            h = h_new
        else:
            mask = ad.constant(live.astype(np.float64)[:, None])
            h = ad.add(ad.mul(mask, h_new),
                       ad.mul(ad.sub(ad.constant(1.0), mask), h))
        logits = ad.add(ad.matmul(h, out_wt), p.out_b)
        xent = ad.softmax_xent(logits, np.where(live, target, EOS))
        total = ad.sub(total, ad.mul(xent, ad.constant(live.astype(np.float64))))
        seen_eos |= live & (target == EOS)
        prev = np.where(live, target, prev)
    return total


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    ax = np.abs(x)
    e = np.exp(-ax)
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def gru_step_np(x: np.ndarray, h: np.ndarray, p: GruParams) -> np.ndarray:
    """1-D numpy mirror of gru_cell for the sampling hot loop.

    Kept step-for-step equal to gru_cell within 1e-12 (see tests); the
    tensor version remains the source of truth for training."""
    xh = np.concatenate([x, h])
    z = _sigmoid_np(xh @ p.wz.data + p.bz.data)
    r = _sigmoid_np(xh @ p.wr.data + p.br.data)
    xrh = np.concatenate([x, r * h])
    c = np.tanh(xrh @ p.wc.data + p.bc.data)
    return (1.0 - z) * h + z * c


def decode_sample(context: np.ndarray, p: DecoderParams,
                  rng: np.random.Generator, temperature: float = 1.0,
                  max_len: int = 20) -> list[int]:
    """Ancestral sampling of one sequence; returns content ids without EOS.

    temperature == 0 decodes greedily (explicit argmax, no division).
    Draws consume `rng` one uniform per emitted token, so sampling k then
    k' > k sequences from a fresh stream shares the first k exactly.
    """
    if max_len < 1:
        raise ContractError("max_len must be >= 1")
    if temperature < 0:
        raise ContractError("temperature must be >= 0")
    ctx = np.asarray(context, dtype=np.float64)
    feed = np.tanh(ctx @ p.ctx_w.data + p.ctx_b.data)
    h = feed
    emb = p.gru.emb.data
    out_wt = p.out_w.data.T
    out_b = p.out_b.data
    prev = BOS
    out: list[int] = []
    for _ in range(max_len):
        h = gru_step_np(np.concatenate([emb[prev], feed]), h, p.gru)
        logits = (h @ out_wt + out_b).copy()
        logits[PAD] = -np.inf  # never emit padding
        logits[BOS] = -np.inf
        if temperature == 0.0:
            tok = int(np.argmax(logits))
        else:
            probs = _masked_softmax(logits / temperature)
            tok = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
            tok = min(tok, len(probs) - 1)
        if tok == EOS:
            return out
        out.append(tok)
        prev = tok
    return out


def _masked_softmax(logits: np.ndarray) -> np.ndarray:
    finite = logits[np.isfinite(logits)]
    z = logits - finite.max()
    ez = np.where(np.isfinite(z), np.exp(z), 0.0)
    return ez / ez.sum()
