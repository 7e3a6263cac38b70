"""GRU cells, bidirectional encoding, additive attention and the output network."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

GRU_FIELDS = (
    "W_update", "W_reset", "W_cand",
    "U_update", "U_reset", "U_cand",
    "b_update", "b_reset", "b_cand",
)


@dataclass
class GruParams:
    W_update: Tensor  # hidden x input
    W_reset: Tensor
    W_cand: Tensor
    U_update: Tensor  # hidden x hidden
    U_reset: Tensor
    U_cand: Tensor
    b_update: Tensor
    b_reset: Tensor
    b_cand: Tensor

    @property
    def hidden(self) -> int:
        return self.U_update.shape[0]

    @property
    def input(self) -> int:
        return self.W_update.shape[1]

    @classmethod
    def from_store(cls, store, prefix: str) -> "GruParams":
        return cls(**{f: store[f"{prefix}.{f}"] for f in GRU_FIELDS})

    @staticmethod
    def shapes(input_dim: int, hidden: int) -> dict[str, tuple[int, ...]]:
        out = {}
        for f in GRU_FIELDS:
            if f[0] == "W":
                out[f] = (hidden, input_dim)
            elif f[0] == "U":
                out[f] = (hidden, hidden)
            else:
                out[f] = (hidden,)
        return out


@dataclass
class AttentionParams:
    W_a: Tensor  # attn x encoder width
    U_a: Tensor  # attn x decoder width
    v_a: Tensor  # attn

    @classmethod
    def from_store(cls, store, prefix: str = "attn") -> "AttentionParams":
        return cls(store[f"{prefix}.W_a"], store[f"{prefix}.U_a"], store[f"{prefix}.v_a"])


@dataclass
class EmbeddingParams:
    E: Tensor  # vocab x embed; also the output projection

    @property
    def vocab_size(self) -> int:
        return self.E.shape[0]


@dataclass
class OutputNetParams:
    """g: tanh hidden layer of embedding width, then the tied projection onto E."""

    W_hidden: Tensor  # embed x (context + state)
    b_hidden: Tensor
    b_vocab: Tensor

    @classmethod
    def from_store(cls, store, prefix: str = "out") -> "OutputNetParams":
        return cls(store[f"{prefix}.W_hidden"], store[f"{prefix}.b_hidden"], store[f"{prefix}.b_vocab"])


def _check_width(t: Tensor, width: int, what: str) -> None:
    if t.shape[-1] != width:
        raise ShapeError(f"{what}: expected last dimension {width}, got shape {t.shape}")


def gru_cell_composed(x_t: Tensor, h_prev: Tensor, p: GruParams) -> Tensor:
    """GRU step spelled out with elementary ops; reference for the fused kernel."""
    z = ad.sigmoid(ad.add(ad.add(ad.matmul(x_t, p.W_update, trans_b=True),
                                 ad.matmul(h_prev, p.U_update, trans_b=True)), p.b_update))
    r = ad.sigmoid(ad.add(ad.add(ad.matmul(x_t, p.W_reset, trans_b=True),
                                 ad.matmul(h_prev, p.U_reset, trans_b=True)), p.b_reset))
    cand = ad.tanh(ad.add(ad.add(ad.matmul(x_t, p.W_cand, trans_b=True),
                                 ad.matmul(ad.mul(r, h_prev), p.U_cand, trans_b=True)), p.b_cand))
    # (1 - z) * h_prev + z * cand
    return ad.add(h_prev, ad.mul(z, ad.sub(cand, h_prev)))


def gru_cell(x_t: Tensor, h_prev: Tensor, p: GruParams, fused: bool = True) -> Tensor:
    """One GRU step on a batch: ``x_t`` is (B, input), ``h_prev`` is (B, hidden)."""
    _check_width(h_prev, p.hidden, "gru state")
    _check_width(x_t, p.input, "gru input")
    if x_t.shape[:-1] != h_prev.shape[:-1]:
        raise ShapeError(f"gru_cell: batch shapes differ, x {x_t.shape} vs h {h_prev.shape}")
    if not fused:
        return gru_cell_composed(x_t, h_prev, p)
    return ad.gru_step(x_t, h_prev, *param_fields(p))


@dataclass
class Encoding:
    states: Tensor  # (B, T, 2H): forward and backward states per position
    finals: Tensor  # (B, 2H): last forward state, first backward state

    def steps(self) -> list[Tensor]:
        return [ad.select(self.states, t, axis=1) for t in range(self.states.shape[1])]


def run_gru(inputs: Sequence[Tensor], p: GruParams, reverse: bool = False) -> list[Tensor]:
    """Unroll a GRU over per-step (B, input) tensors from a zero state; outputs in input order."""
    h = Tensor(np.zeros((inputs[0].shape[0], p.hidden)))
    out: list[Tensor] = [None] * len(inputs)  # type: ignore[list-item]
    order = range(len(inputs) - 1, -1, -1) if reverse else range(len(inputs))
    for t in order:
        h = gru_cell(inputs[t], h, p)
        out[t] = h
    return out


def encode_steps(inputs: Sequence[Tensor], fwd: GruParams, bwd: GruParams) -> tuple[Encoding, list[Tensor]]:
    """Bidirectional pass over per-step inputs.

    Returns the encoding and the per-step ``[fwd_j, bwd_j]`` tensors, which
    feed the next layer of a deeper encoder.
    """
    if not inputs:
        raise ShapeError("encoder input is empty")
    f = run_gru(inputs, fwd)
    b = run_gru(inputs, bwd, reverse=True)
    states = ad.concat([ad.stack(f, axis=1), ad.stack(b, axis=1)], axis=-1)
    finals = ad.concat([f[-1], b[0]], axis=-1)
    return Encoding(states, finals), list(zip(f, b))


def embed_steps(ids: np.ndarray, e: EmbeddingParams) -> list[Tensor]:
    return [ad.embedding_lookup(e.E, ids[:, t]) for t in range(ids.shape[1])]


def as_batch(ids) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[None, :]
    if ids.ndim != 2 or ids.shape[1] == 0:
        raise ValueError(f"expected a non-empty token id sequence, got shape {ids.shape}")
    return ids


def encode_bidir(ids, fwd: GruParams, bwd: GruParams, e: EmbeddingParams) -> Encoding:
    ids = as_batch(ids)
    if ids.min() < 0 or ids.max() >= e.vocab_size:
        raise ValueError(f"token ids must lie in [0, {e.vocab_size})")
    return encode_steps(embed_steps(ids, e), fwd, bwd)[0]


def attention_keys(H: Tensor, a: AttentionParams) -> Tensor:
    """``W_a h_j`` for every position; independent of the decoder state, so cached per input."""
    if H.value.ndim != 3 or H.shape[1] == 0:
        raise ShapeError(f"attend: encoder states must be a non-empty (B, T, W) tensor, got {H.shape}")
    _check_width(H, a.W_a.shape[1], "attention encoder states")
    return ad.matmul(H, a.W_a, trans_b=True)


def attend(H: Tensor, s: Tensor, a: AttentionParams, keys: Tensor | None = None) -> tuple[Tensor, Tensor]:
    """Additive attention. Returns weights (B, T) and context (B, W)."""
    if keys is None:
        keys = attention_keys(H, a)
    _check_width(s, a.U_a.shape[1], "attention decoder state")
    batch, steps, width = H.shape
    query = ad.expand(ad.matmul(s, a.U_a, trans_b=True), steps, axis=1)
    scores = ad.matmul(ad.tanh(ad.add(keys, query)), a.v_a)
    alpha = ad.softmax(scores)
    context = ad.reshape(ad.matmul(ad.reshape(alpha, (batch, 1, steps)), H), (batch, width))
    return alpha, context


def output_logits(c: Tensor, s: Tensor, g: OutputNetParams, e: EmbeddingParams) -> Tensor:
    features = ad.concat([c, s], axis=-1)
    _check_width(features, g.W_hidden.shape[1], "output network input [c, s]")
    hidden = ad.tanh(ad.add(ad.matmul(features, g.W_hidden, trans_b=True), g.b_hidden))
    return ad.add(ad.matmul(hidden, e.E, trans_b=True), g.b_vocab)


def linear(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    return ad.add(ad.matmul(x, W, trans_b=True), b)


def init_uniform(shapes: dict[str, tuple[int, ...]], rng: np.random.Generator, scale: float = 0.08) -> dict[str, Tensor]:
    """Uniform(-scale, scale) values drawn in the order of ``shapes``."""
    return {
        name: Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True, name=name)
        for name, shape in shapes.items()
    }


def param_fields(obj) -> list[Tensor]:
    return [getattr(obj, f.name) for f in fields(obj)]
