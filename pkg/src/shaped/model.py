"""Shared-private encoder-decoder (SHAPED) with classifier-weighted mixture decoding.

One :class:`ShapedModel` covers three variants:

* ``shaped``  - a shared stack plus one private stack per style and a style
  classifier over the private encoders.  Style ``z`` decodes from the
  concatenations ``[h^z_j, h^s_j]`` and ``[s^z_t, s^s_t]``.
* ``shared``  - only the shared stack (the S baseline).
* ``private`` - a single private stack trained on one style (a P baseline).

Attention, embedding and output-network parameters exist once per model and
are referenced by every style path.

Tensors are batched: token ids are (B, T) arrays, decoder states (B, H).
All rows of one encoder call share a source length.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import BOS, EOS, PAD, StyledExample
from .nn import (
    AttentionParams,
    EmbeddingParams,
    GruParams,
    OutputNetParams,
    attend,
    attention_keys,
    as_batch,
    embed_steps,
    encode_steps,
    gru_cell,
    init_uniform,
    linear,
    output_logits,
)

VARIANTS = ("shaped", "shared", "private")


@dataclass(frozen=True)
class StyleSet:
    names: tuple[str, ...]

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if not names:
            raise ValueError("style set must not be empty")
        if len(set(names)) != len(names):
            raise ValueError(f"style names must be unique: {names}")

    def __len__(self) -> int:
        return len(self.names)

    def __iter__(self):
        return iter(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown style {name!r}; known styles: {list(self.names)}") from None


@dataclass
class ModelConfig:
    vocab_size: int
    embed_dim: int = 32
    hidden_dim: int = 32
    attn_dim: int = 32
    cls_hidden: int = 32
    num_layers: int = 1
    init_scale: float = 0.08
    cls_weight: float = 1.0
    cls_stop_grad: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class StackEncoding:
    states: Tensor  # (B, T, 2H) top-layer bidirectional states
    finals: list[Tensor]  # per layer (B, 2H)


@dataclass
class EncodedInput:
    """Encoder outputs for one batch of equal-length sources."""

    ids: np.ndarray
    stacks: dict[str, StackEncoding]
    concat: dict[int, Tensor] = field(default_factory=dict)  # style -> [H^z, H^s]
    keys: dict = field(default_factory=dict)  # path -> cached attention keys

    @property
    def batch(self) -> int:
        return self.ids.shape[0]

    @property
    def length(self) -> int:
        return self.ids.shape[1]


DecoderState = dict  # stack name -> list of per-layer (B, H) tensors


def check_posterior(posterior: np.ndarray, tol: float = 1e-9) -> None:
    if np.any(posterior < 0) or not np.all(np.abs(posterior.sum(axis=-1) - 1.0) <= tol):
        raise ValueError("posterior rows must be non-negative and sum to 1")


def mix_distributions(posterior: np.ndarray, per_style: np.ndarray) -> np.ndarray:
    """``sum_d posterior[b, d] * per_style[d, b, :]`` for (B, D) weights and (D, B, V) distributions."""
    return np.einsum("bd,dbv->bv", posterior, per_style)


class ShapedModel:
    def __init__(
        self,
        config: ModelConfig,
        styles: StyleSet | Sequence[str],
        variant: str = "shaped",
        params: dict[str, Tensor] | None = None,
        seed: int = 0,
    ):
        if variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
        self.config = config
        self.styles = styles if isinstance(styles, StyleSet) else StyleSet(tuple(styles))
        self.variant = variant
        if variant == "private" and len(self.styles) != 1:
            raise ValueError("a private (P) model is trained for exactly one style")
        if variant == "shaped":
            self.stacks = [self.private_stack(z) for z in range(len(self.styles))] + ["shared"]
        elif variant == "shared":
            self.stacks = ["shared"]
        else:
            self.stacks = [self.private_stack(0)]
        shapes = self.param_shapes()
        if params is None:
            params = init_uniform(shapes, np.random.default_rng(seed), config.init_scale)
        else:
            missing = set(shapes) - set(params)
            extra = set(params) - set(shapes)
            if missing or extra:
                raise ValueError(
                    f"parameter set does not match model: missing {sorted(missing)[:5]}, "
                    f"unexpected {sorted(extra)[:5]}"
                )
            for name, shape in shapes.items():
                if params[name].shape != shape:
                    raise ValueError(f"parameter {name} has shape {params[name].shape}, expected {shape}")
        self.params = params

    # ------------------------------------------------------------------ layout

    def private_stack(self, z: int) -> str:
        return f"private.{self.styles.names[z]}"

    @property
    def enc_width(self) -> int:
        return 2 * self.config.hidden_dim

    @property
    def path_enc_width(self) -> int:
        return 2 * self.enc_width if self.variant == "shaped" else self.enc_width

    @property
    def path_state_width(self) -> int:
        h = self.config.hidden_dim
        return 2 * h if self.variant == "shaped" else h

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        c = self.config
        E, H, L = c.embed_dim, c.hidden_dim, c.num_layers
        shapes: dict[str, tuple[int, ...]] = {"embed.E": (c.vocab_size, E)}
        for stack in self.stacks:
            for layer in range(L):
                enc_in = E if layer == 0 else 2 * H
                dec_in = E if layer == 0 else H
                for direction in ("fwd", "bwd"):
                    for f, shp in GruParams.shapes(enc_in, H).items():
                        shapes[f"{stack}.enc.l{layer}.{direction}.{f}"] = shp
                for f, shp in GruParams.shapes(dec_in, H).items():
                    shapes[f"{stack}.dec.l{layer}.{f}"] = shp
                shapes[f"{stack}.init.l{layer}.W"] = (H, 2 * H)
                shapes[f"{stack}.init.l{layer}.b"] = (H,)
        A = c.attn_dim
        shapes["attn.W_a"] = (A, self.path_enc_width)
        shapes["attn.U_a"] = (A, self.path_state_width)
        shapes["attn.v_a"] = (A,)
        shapes["out.W_hidden"] = (E, self.path_enc_width + self.path_state_width)
        shapes["out.b_hidden"] = (E,)
        shapes["out.b_vocab"] = (c.vocab_size,)
        if self.variant == "shaped":
            D = len(self.styles)
            shapes["cls.W_hidden"] = (c.cls_hidden, D * self.enc_width)
            shapes["cls.b_hidden"] = (c.cls_hidden,)
            shapes["cls.W_out"] = (D, c.cls_hidden)
            shapes["cls.b_out"] = (D,)
        return shapes

    def param_groups(self) -> dict[str, list[str]]:
        """Parameter names grouped by component (stack, attention, output, ...)."""
        groups: dict[str, list[str]] = {}
        for name in self.params:
            parts = name.split(".")
            if parts[0] == "private":
                key = ".".join(parts[:3])  # private.<style>.enc|dec|init
            elif parts[0] == "shared":
                key = ".".join(parts[:2])
            else:
                key = parts[0]
            groups.setdefault(key, []).append(name)
        return groups

    def attention(self) -> AttentionParams:
        return AttentionParams.from_store(self.params)

    def embedding(self) -> EmbeddingParams:
        return EmbeddingParams(self.params["embed.E"])

    def output_net(self) -> OutputNetParams:
        return OutputNetParams.from_store(self.params)

    def _gru(self, prefix: str) -> GruParams:
        return GruParams.from_store(self.params, prefix)

    # ---------------------------------------------------------------- encoding

    def _check_ids(self, ids: np.ndarray) -> None:
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            bad = ids[(ids < 0) | (ids >= self.config.vocab_size)][0]
            raise ValueError(f"token id {int(bad)} outside vocabulary of size {self.config.vocab_size}")

    def _encode_stack(self, inputs: list[Tensor], stack: str) -> StackEncoding:
        finals = []
        for layer in range(self.config.num_layers):
            enc, pairs = encode_steps(
                inputs,
                self._gru(f"{stack}.enc.l{layer}.fwd"),
                self._gru(f"{stack}.enc.l{layer}.bwd"),
            )
            finals.append(enc.finals)
            if layer + 1 < self.config.num_layers:
                inputs = [ad.concat([f, b], axis=-1) for f, b in pairs]
        return StackEncoding(enc.states, finals)

    def _style_id(self, z) -> int:
        if isinstance(z, str):
            return self.styles.index(z)
        z = int(z)
        if not 0 <= z < len(self.styles):
            raise KeyError(f"unknown style id {z}; model has {len(self.styles)} styles")
        return z

    def encode_all(self, ids, styles="all") -> EncodedInput:
        """Run the shared encoder and the requested private encoders.

        ``styles`` is ``"all"``, a single style (id or name) or a list of them.
        For the S and P variants the model's only stack is encoded.
        """
        ids = as_batch(ids)
        self._check_ids(ids)
        X = embed_steps(ids, self.embedding())
        if self.variant != "shaped":
            return EncodedInput(ids, {self.stacks[0]: self._encode_stack(X, self.stacks[0])})
        if isinstance(styles, str) and styles == "all":
            wanted = list(range(len(self.styles)))
        elif isinstance(styles, (list, tuple)):
            wanted = [self._style_id(z) for z in styles]
        else:
            wanted = [self._style_id(styles)]
        encoded = {"shared": self._encode_stack(X, "shared")}
        for z in wanted:
            encoded[self.private_stack(z)] = self._encode_stack(X, self.private_stack(z))
        enc = EncodedInput(ids, encoded)
        for z in wanted:
            enc.concat[z] = ad.concat(
                [encoded[self.private_stack(z)].states, encoded["shared"].states], axis=-1
            )
        return enc

    def _path_states(self, enc: EncodedInput, z: int | None) -> Tensor:
        if self.variant != "shaped":
            return enc.stacks[self.stacks[0]].states
        if z not in enc.concat:
            raise KeyError(f"input was not encoded for style {self.styles.names[z]!r}")
        return enc.concat[z]

    def _path_keys(self, enc: EncodedInput, z: int | None) -> Tensor:
        key = z if self.variant == "shaped" else None
        if key not in enc.keys:
            enc.keys[key] = attention_keys(self._path_states(enc, z), self.attention())
        return enc.keys[key]

    # ---------------------------------------------------------------- decoding

    def init_state(self, enc: EncodedInput, stacks: Iterable[str] | None = None) -> DecoderState:
        """Initial decoder states from each encoder's final states via a learned linear map."""
        stacks = list(enc.stacks) if stacks is None else list(stacks)
        state: DecoderState = {}
        for stack in stacks:
            finals = enc.stacks[stack].finals
            state[stack] = [
                linear(finals[layer], self.params[f"{stack}.init.l{layer}.W"], self.params[f"{stack}.init.l{layer}.b"])
                for layer in range(self.config.num_layers)
            ]
        return state

    def _advance(self, stack: str, layers: list[Tensor], x: Tensor) -> list[Tensor]:
        new, inp = [], x
        for layer, h in enumerate(layers):
            h = gru_cell(inp, h, self._gru(f"{stack}.dec.l{layer}"))
            new.append(h)
            inp = h
        return new

    def _logits(self, enc: EncodedInput, z: int | None, s_path: Tensor) -> Tensor:
        H = self._path_states(enc, z)
        _, context = attend(H, s_path, self.attention(), keys=self._path_keys(enc, z))
        return output_logits(context, s_path, self.output_net(), self.embedding())

    def _embed_prev(self, y_prev, batch: int) -> tuple[np.ndarray, Tensor]:
        y_prev = np.broadcast_to(np.asarray(y_prev, dtype=np.int64).reshape(-1), (batch,)).copy()
        self._check_ids(y_prev)
        return y_prev, ad.embedding_lookup(self.params["embed.E"], y_prev)

    def shaped_step(self, z, enc: EncodedInput, state: DecoderState, y_prev) -> tuple[np.ndarray, DecoderState]:
        """Advance style ``z``'s private decoder and the shared decoder by one token.

        Returns the (B, |V|) output distribution and the updated state.
        """
        if self.variant != "shaped":
            raise ValueError(f"shaped_step needs a shaped model, this one is {self.variant!r}")
        z = self._style_id(z)
        priv = self.private_stack(z)
        if priv not in enc.stacks or z not in enc.concat:
            raise KeyError(f"input was not encoded for style {self.styles.names[z]!r}")
        _, x = self._embed_prev(y_prev, enc.batch)
        new = dict(state)
        new["shared"] = self._advance("shared", state["shared"], x)
        new[priv] = self._advance(priv, state[priv], x)
        s_path = ad.concat([new[priv][-1], new["shared"][-1]], axis=-1)
        probs = ad.softmax(self._logits(enc, z, s_path))
        return probs.value, new

    def plain_step(self, enc: EncodedInput, state: DecoderState, y_prev) -> tuple[np.ndarray, DecoderState]:
        """One step of the S or P baseline, attending over its own encoder states."""
        if self.variant == "shaped":
            raise ValueError("plain_step is for the shared/private baselines")
        stack = self.stacks[0]
        _, x = self._embed_prev(y_prev, enc.batch)
        new = {stack: self._advance(stack, state[stack], x)}
        probs = ad.softmax(self._logits(enc, None, new[stack][-1]))
        return probs.value, new

    def mixture_step(
        self, enc: EncodedInput, state: DecoderState, y_prev, posterior
    ) -> tuple[np.ndarray, DecoderState, np.ndarray]:
        """Posterior-weighted mixture of every style's SHAPED distribution.

        The shared decoder advances once and its state is reused by every
        style path.  Returns the mixture, the new state and the per-style
        distributions stacked as (|D|, B, |V|).
        """
        if self.variant != "shaped":
            raise ValueError("mixture decoding needs a shaped model")
        D = len(self.styles)
        posterior = np.asarray(posterior, dtype=np.float64)
        if posterior.ndim == 1:
            posterior = np.broadcast_to(posterior, (enc.batch, posterior.shape[0]))
        if posterior.shape != (enc.batch, D):
            raise ValueError(f"posterior must have length |D|={D}, got shape {posterior.shape}")
        check_posterior(posterior)
        missing = [self.styles.names[z] for z in range(D) if z not in enc.concat]
        if missing:
            raise KeyError(f"mixture decoding needs every private encoding; missing {missing}")
        _, x = self._embed_prev(y_prev, enc.batch)
        new = dict(state)
        new["shared"] = self._advance("shared", state["shared"], x)
        per_style = []
        for z in range(D):
            priv = self.private_stack(z)
            new[priv] = self._advance(priv, state[priv], x)
            s_path = ad.concat([new[priv][-1], new["shared"][-1]], axis=-1)
            per_style.append(ad.softmax(self._logits(enc, z, s_path)).value)
        per_style = np.stack(per_style)
        return mix_distributions(posterior, per_style), new, per_style

    # -------------------------------------------------------------- classifier

    def classifier_logits(self, enc: EncodedInput) -> Tensor:
        if self.variant != "shaped":
            raise ValueError("only shaped models carry a style classifier")
        D = len(self.styles)
        pooled = []
        for z in range(D):
            stack = self.private_stack(z)
            if stack not in enc.stacks:
                raise KeyError(f"classifier needs every private encoding; missing {self.styles.names[z]!r}")
            states = enc.stacks[stack].states
            if self.config.cls_stop_grad:
                states = ad.detach(states)
            pooled.append(ad.scale(ad.tensor_sum(states, axis=1), 1.0 / enc.length))
        hidden = ad.tanh(linear(ad.concat(pooled, axis=-1), self.params["cls.W_hidden"], self.params["cls.b_hidden"]))
        return linear(hidden, self.params["cls.W_out"], self.params["cls.b_out"])

    def classify_style(self, enc: EncodedInput) -> np.ndarray:
        """Style posterior p(z|x) per row, shape (B, |D|)."""
        return ad.softmax(self.classifier_logits(enc)).value

    # ------------------------------------------------------------------ losses

    def _teacher_arrays(self, targets: Sequence[Sequence[int]]):
        ty = max(len(y) for y in targets)
        B = len(targets)
        y_out = np.full((B, ty), PAD, dtype=np.int64)
        y_in = np.full((B, ty), PAD, dtype=np.int64)
        mask = np.zeros((B, ty))
        for i, y in enumerate(targets):
            y = np.asarray(y, dtype=np.int64)
            if len(y) == 0 or y[-1] != EOS:
                raise ValueError("target sequences must be non-empty and end with EOS")
            self._check_ids(y)
            y_out[i, : len(y)] = y
            y_in[i, 0] = BOS
            y_in[i, 1 : len(y)] = y[:-1]
            mask[i, : len(y)] = 1.0
        onehot = np.zeros((B, ty, self.config.vocab_size))
        rows, cols = np.nonzero(mask)
        onehot[rows, cols, y_out[rows, cols]] = 1.0
        return y_in, onehot

    def batch_losses(self, src: np.ndarray, targets, styles: np.ndarray | None, with_classifier: bool):
        """Summed sequence NLL (and classifier NLL) for one equal-length source batch.

        Rows must be sorted by style for the shaped variant.  Returns
        ``(classifier_loss or None, sequence_loss)`` as scalar tensors.
        """
        src = as_batch(src)
        self._check_ids(src)
        B = src.shape[0]
        y_in, onehot = self._teacher_arrays(targets)
        X = embed_steps(src, self.embedding())

        if self.variant != "shaped":
            stack = self.stacks[0]
            enc = EncodedInput(src, {stack: self._encode_stack(X, stack)})
            steps = self._teacher_decode(enc, y_in, [(None, 0, B)])
            return None, self._sequence_loss(steps, onehot)

        styles = np.asarray(styles, dtype=np.int64)
        if styles.shape != (B,):
            raise ValueError("every example needs a style id")
        if np.any(np.diff(styles) < 0):
            raise ValueError("rows must be sorted by style")
        groups = []
        for z in np.unique(styles):
            rows = np.nonzero(styles == z)[0]
            groups.append((self._style_id(z), int(rows[0]), int(rows[-1]) + 1))

        encoded_styles = range(len(self.styles)) if with_classifier else [g[0] for g in groups]
        stacks = {"shared": self._encode_stack(X, "shared")}
        for z in encoded_styles:
            stacks[self.private_stack(z)] = self._encode_stack(X, self.private_stack(z))
        enc = EncodedInput(src, stacks)

        cls_loss = None
        if with_classifier:
            logp = ad.log_softmax(self.classifier_logits(enc))
            mask = np.zeros((B, len(self.styles)))
            mask[np.arange(B), styles] = 1.0
            cls_loss = ad.negate(ad.tensor_sum(ad.mul(logp, Tensor(mask))))

        steps = self._teacher_decode(enc, y_in, groups)
        return cls_loss, self._sequence_loss(steps, onehot)

    def _rows(self, t: Tensor, start: int, stop: int, batch: int) -> Tensor:
        if start == 0 and stop == batch:
            return t
        return ad.slice_axis(t, start, stop, axis=0)

    def _teacher_decode(self, enc: EncodedInput, y_in: np.ndarray, groups) -> list[Tensor]:
        """Teacher-forced decoder logits per step; ``groups`` are (style, start, stop) row ranges."""
        B, ty = y_in.shape
        shaped = self.variant == "shaped"
        E = self.params["embed.E"]

        def rows(t, g):
            return self._rows(t, g[1], g[2], B)

        def cat_rows(parts):
            return parts[0] if len(parts) == 1 else ad.concat(parts, axis=0)

        if shaped:
            shared = enc.stacks["shared"]
            H = cat_rows(
                [
                    ad.concat([rows(enc.stacks[self.private_stack(g[0])].states, g), rows(shared.states, g)], axis=-1)
                    for g in groups
                ]
            )
        else:
            H = enc.stacks[self.stacks[0]].states
        keys = attention_keys(H, self.attention())

        # one private (or plain) stack per row group, plus the shared stack over all rows
        group_stacks = [self.private_stack(g[0]) if shaped else self.stacks[0] for g in groups]
        group_states = []
        for g, stack in zip(groups, group_stacks):
            finals = enc.stacks[stack].finals
            group_states.append(
                [
                    linear(rows(finals[l], g), self.params[f"{stack}.init.l{l}.W"], self.params[f"{stack}.init.l{l}.b"])
                    for l in range(self.config.num_layers)
                ]
            )
        if shaped:
            shared_states = self.init_state(enc, ["shared"])["shared"]

        attn, out_net, emb = self.attention(), self.output_net(), self.embedding()
        logits = []
        for t in range(ty):
            for i, (g, stack) in enumerate(zip(groups, group_stacks)):
                x = ad.embedding_lookup(E, y_in[g[1]:g[2], t])
                group_states[i] = self._advance(stack, group_states[i], x)
            s_path = cat_rows([st[-1] for st in group_states])
            if shaped:
                shared_states = self._advance("shared", shared_states, ad.embedding_lookup(E, y_in[:, t]))
                s_path = ad.concat([s_path, shared_states[-1]], axis=-1)
            _, context = attend(H, s_path, attn, keys=keys)
            logits.append(output_logits(context, s_path, out_net, emb))
        return logits

    @staticmethod
    def _sequence_loss(logits: list[Tensor], onehot: np.ndarray) -> Tensor:
        logp = ad.log_softmax(ad.stack(logits, axis=1))
        return ad.negate(ad.tensor_sum(ad.mul(logp, Tensor(onehot))))

    def sequence_nll(self, ids_x, ids_y, z=None) -> Tensor:
        """-log p(y | x, z) under teacher forcing, as a scalar tensor."""
        src = as_batch(ids_x)
        if src.shape[0] != 1:
            raise ValueError("sequence_nll takes a single example; use joint_loss for batches")
        styles = None
        if self.variant == "shaped":
            if z is None:
                raise ValueError("a shaped model needs the style id to score a sequence")
            styles = np.array([self._style_id(z)])
        _, seq = self.batch_losses(src, [list(ids_y)], styles, with_classifier=False)
        return seq

    def loss_parts(self, batch: Sequence[StyledExample]) -> tuple[Tensor | None, Tensor]:
        """Summed classifier and sequence losses over a batch of any source lengths."""
        if not batch:
            raise ValueError("empty batch")
        shaped = self.variant == "shaped"
        if shaped and any(ex.style is None for ex in batch):
            raise ValueError("joint loss needs a style label on every example")
        by_len: dict[int, list[StyledExample]] = {}
        for ex in batch:
            by_len.setdefault(len(ex.source), []).append(ex)
        cls_total, seq_total = None, None
        for length in sorted(by_len):
            group = by_len[length]
            if shaped:
                group = sorted(group, key=lambda ex: ex.style)
            src = np.array([ex.source for ex in group], dtype=np.int64)
            styles = np.array([ex.style for ex in group]) if shaped else None
            c, s = self.batch_losses(src, [ex.target for ex in group], styles,
                                     with_classifier=shaped and self.config.cls_weight != 0)
            seq_total = s if seq_total is None else ad.add(seq_total, s)
            if c is not None:
                cls_total = c if cls_total is None else ad.add(cls_total, c)
        return cls_total, seq_total

    def joint_loss(self, batch: Sequence[StyledExample]) -> Tensor:
        """Sum over the batch of -log p(z|x) (weighted) and -log p(y|x, z)."""
        cls, seq = self.loss_parts(batch)
        if cls is None:
            return seq
        return ad.add(ad.scale(cls, self.config.cls_weight), seq)

    # -------------------------------------------------------------- generation

    def parse_mode(self, mode) -> tuple[str, int | None]:
        """Accepts ``shaped:<style>``, ``mixture``, ``uniform``, ``shared``, ``private:<style>``
        or an already-parsed ``(kind, style)`` pair."""
        if isinstance(mode, tuple):
            kind, z = mode
        else:
            kind, _, name = str(mode).partition(":")
            z = name or None
        if kind in ("shaped", "mixture", "uniform") and self.variant != "shaped":
            raise ValueError(f"mode {kind!r} needs a shaped checkpoint, this one is {self.variant!r}")
        if kind == "shared" and self.variant != "shared":
            raise ValueError(f"mode 'shared' needs a shared (S) checkpoint, this one is {self.variant!r}")
        if kind == "private":
            if self.variant != "private":
                raise ValueError(f"mode 'private' needs a private (P) checkpoint, this one is {self.variant!r}")
            if z is not None and self._style_id(z) != 0:
                raise KeyError(f"this private model is for style {self.styles.names[0]!r}")
            return kind, 0
        if kind == "shaped":
            if z is None:
                raise ValueError("shaped mode needs a style, e.g. shaped:<style>")
            return kind, self._style_id(z)
        if kind in ("mixture", "uniform", "shared"):
            return kind, None
        raise ValueError(f"unknown decoding mode {mode!r}")

    def generate(self, ids_x, mode="mixture", max_len: int = 20, decode: str = "greedy", seed: int = 0,
                 posterior=None) -> list[int]:
        """Decode one source; stops after EOS (included) or ``max_len`` tokens."""
        return self.generate_batch([list(np.asarray(ids_x).reshape(-1))], mode, max_len, decode, seed,
                                   None if posterior is None else [posterior])[0]

    def generate_batch(self, sources: Sequence[Sequence[int]], mode="mixture", max_len: int = 20,
                       decode: str = "greedy", seed: int = 0, posteriors=None) -> list[list[int]]:
        """Decode many sources, batching those of equal length.

        In mixture mode the classifier is evaluated once per source and the
        chosen token feeds every decoder path.  ``posteriors`` overrides the
        classifier (one row per source).
        """
        if max_len < 1:
            raise ValueError("max_len must be >= 1")
        if decode not in ("greedy", "sample"):
            raise ValueError(f"decode must be 'greedy' or 'sample', got {decode!r}")
        kind, z = self.parse_mode(mode)
        rng = np.random.default_rng(seed)
        results: list[list[int] | None] = [None] * len(sources)
        by_len: dict[int, list[int]] = {}
        for i, src in enumerate(sources):
            if len(src) == 0:
                raise ValueError(f"source {i} is empty")
            by_len.setdefault(len(src), []).append(i)
        for length in sorted(by_len):
            idx = by_len[length]
            src = np.array([sources[i] for i in idx], dtype=np.int64)
            post = None if posteriors is None else np.array([posteriors[i] for i in idx], dtype=np.float64)
            outs = self._decode_group(src, kind, z, max_len, decode, rng, post)
            for i, out in zip(idx, outs):
                results[i] = out
        return results  # type: ignore[return-value]

    def _decode_group(self, src, kind, z, max_len, decode, rng, posterior) -> list[list[int]]:
        B = src.shape[0]
        if kind == "shaped":
            enc = self.encode_all(src, styles=z)
            state = self.init_state(enc, ["shared", self.private_stack(z)])
            step = lambda y, st: self.shaped_step(z, enc, st, y)  # noqa: E731
        elif kind in ("mixture", "uniform"):
            enc = self.encode_all(src, styles="all")
            D = len(self.styles)
            if posterior is None:
                posterior = self.classify_style(enc) if kind == "mixture" else np.full((B, D), 1.0 / D)
            state = self.init_state(enc)

            def step(y, st):
                mix, new, _ = self.mixture_step(enc, st, y, posterior)
                return mix, new
        else:
            enc = self.encode_all(src)
            state = self.init_state(enc)
            step = lambda y, st: self.plain_step(enc, st, y)  # noqa: E731

        y = np.full(B, BOS, dtype=np.int64)
        out = np.zeros((B, max_len), dtype=np.int64)
        done = np.zeros(B, dtype=bool)
        for t in range(max_len):
            probs, state = step(y, state)
            if decode == "greedy":
                y = probs.argmax(axis=-1)
            else:
                cum = np.cumsum(probs, axis=-1)
                u = rng.random(B) * cum[:, -1]
                y = np.minimum((cum < u[:, None]).sum(axis=-1), probs.shape[1] - 1)
            out[:, t] = y
            done |= y == EOS
            if done.all():
                out = out[:, : t + 1]
                break
        seqs = []
        for row in out:
            row = list(int(v) for v in row)
            if EOS in row:
                row = row[: row.index(EOS) + 1]
            seqs.append(row)
        return seqs

    # ----------------------------------------------------------------- helpers

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.value.copy() for k, v in self.params.items()}
