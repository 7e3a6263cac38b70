"""Adagrad training for the SHAPED model and the S / P baselines."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .checkpoint import Checkpoint
from .data import MAX_SRC, MAX_TGT, StyledExample, TextExample, Vocabulary, build_vocab, encode_corpus, iter_tokens
from .model import ModelConfig, ShapedModel, StyleSet

VARIANT_ALIASES = {
    "shaped": "shaped", "sp": "shaped", "m-sp": "shaped",
    "shared": "shared", "s": "shared",
    "private": "private", "p": "private",
}


def normalize_variant(name: str) -> str:
    try:
        return VARIANT_ALIASES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown variant {name!r}; use SHAPED, S or P") from None


@dataclass
class TrainConfig:
    lr: float = 0.01
    eps: float = 1e-8
    batch_size: int = 16
    steps: int = 1000
    seed: int = 0
    variant: str = "shaped"
    private_style: str | None = None  # style of a P model
    embed_dim: int = 32
    hidden_dim: int = 32
    attn_dim: int = 32
    cls_hidden: int = 32
    num_layers: int = 1
    init_scale: float = 0.08
    cls_weight: float = 1.0
    cls_stop_grad: bool = False
    vocab_cap: int = 500
    max_src: int = MAX_SRC
    max_tgt: int = MAX_TGT
    log_every: int = 50

    def __post_init__(self):
        self.variant = normalize_variant(self.variant)
        self.validate()

    def validate(self) -> None:
        if not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.eps < 0:
            raise ValueError(f"eps must be >= 0, got {self.eps}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.log_every < 1:
            raise ValueError(f"log_every must be >= 1, got {self.log_every}")

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size, embed_dim=self.embed_dim, hidden_dim=self.hidden_dim,
            attn_dim=self.attn_dim, cls_hidden=self.cls_hidden, num_layers=self.num_layers,
            init_scale=self.init_scale, cls_weight=self.cls_weight, cls_stop_grad=self.cls_stop_grad,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


# ------------------------------------------------------------------ Adagrad


class NonFiniteGradient(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient for parameter {name!r}; step rejected")
        self.param = name


@dataclass
class AdagradState:
    accumulators: dict[str, np.ndarray]

    @classmethod
    def zeros_like(cls, params: dict) -> "AdagradState":
        return cls({k: np.zeros_like(_value(v)) for k, v in params.items()})


def _value(p) -> np.ndarray:
    return p.value if isinstance(p, ad.Tensor) else p


def adagrad_step(params: dict, grads: dict[str, np.ndarray], state: AdagradState, lr: float, eps: float) -> None:
    """In-place ``acc += g**2; p -= lr * g / (sqrt(acc) + eps)``.

    All gradients are checked before anything is touched, so a rejected step
    leaves parameters and accumulators unchanged.
    """
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != _value(params[name]).shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {_value(params[name]).shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(name)
    for name, g in grads.items():
        acc = state.accumulators[name]
        acc += g * g
        _value(params[name])[...] -= lr * g / (np.sqrt(acc) + eps)


# ----------------------------------------------------------------- training


@dataclass
class LogRecord:
    step: int
    loss: float
    cls_loss: float | None
    seq_loss: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))


@dataclass
class TrainResult:
    final: Checkpoint
    best: Checkpoint
    log: list[LogRecord]
    skipped_steps: int


def prepare_styles(corpus: Sequence[TextExample], config: TrainConfig,
                   styles: Sequence[str] | None = None) -> tuple[list[TextExample], StyleSet]:
    """Filter the corpus for the variant and fix the style set."""
    if config.variant == "shared":
        names = styles or sorted({ex.style for ex in corpus if ex.style is not None}) or ["all"]
        return list(corpus), StyleSet(tuple(names))
    unlabeled = [i for i, ex in enumerate(corpus) if ex.style is None]
    if unlabeled:
        raise ValueError(
            f"variant {config.variant!r} needs a style label on every example; "
            f"{len(unlabeled)} unlabeled (first at record {unlabeled[0]})"
        )
    if config.variant == "private":
        present = sorted({ex.style for ex in corpus})
        name = config.private_style
        if name is None:
            if len(present) != 1:
                raise ValueError(f"P model: set private_style, corpus has styles {present}")
            name = present[0]
        kept = [ex for ex in corpus if ex.style == name]
        if not kept:
            raise ValueError(f"P model: no examples of style {name!r}")
        return kept, StyleSet((name,))
    names = tuple(styles) if styles else tuple(sorted({ex.style for ex in corpus}))
    style_set = StyleSet(names)
    for ex in corpus:
        style_set.index(ex.style)
    return list(corpus), style_set


def batch_order(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def train(
    corpus: Sequence[TextExample],
    config: TrainConfig,
    resume: Checkpoint | None = None,
    styles: Sequence[str] | None = None,
    vocab: Vocabulary | None = None,
    log: Callable[[LogRecord], None] | None = None,
) -> TrainResult:
    """Train for ``config.steps`` total steps (counting any steps already in ``resume``).

    Batch ``k`` of the run is drawn from epoch ``k // batches_per_epoch`` of a
    permutation seeded by ``(seed, epoch)``, so resuming reproduces the
    uninterrupted run exactly.
    """
    config.validate()
    corpus, style_set = prepare_styles(corpus, config, styles)
    if resume is not None:
        model, vocab = resume.model, resume.vocab
        if model.variant != config.variant:
            raise ValueError(f"resume checkpoint is {model.variant!r}, config asks for {config.variant!r}")
        if model.styles != style_set and config.variant != "shared":
            raise ValueError(f"resume checkpoint styles {model.styles.names} != corpus styles {style_set.names}")
        state = AdagradState({k: v.copy() for k, v in resume.accumulators.items()})
        for k, p in model.params.items():
            state.accumulators.setdefault(k, np.zeros_like(p.value))
        start = resume.step
        best_loss = resume.meta.get("best_loss", math.inf)
        skipped = resume.meta.get("skipped_steps", 0)
    else:
        if vocab is None:
            vocab = build_vocab(iter_tokens(corpus), cap=config.vocab_cap)
        model = ShapedModel(config.model_config(len(vocab)), style_set, config.variant, seed=config.seed)
        state = AdagradState.zeros_like(model.params)
        start, best_loss, skipped = 0, math.inf, 0

    data = encode_corpus(corpus, vocab, model.styles if config.variant != "shared" else None,
                         config.max_src, config.max_tgt)
    if config.variant == "private":
        data = [StyledExample(ex.source, ex.target, 0) for ex in data]
    batches_per_epoch = math.ceil(len(data) / config.batch_size)
    records: list[LogRecord] = []
    best_params = {k: v.value.copy() for k, v in model.params.items()}
    best_acc = {k: v.copy() for k, v in state.accumulators.items()}
    best_step = start
    window: list[float] = []
    epoch_cache: tuple[int, list[np.ndarray]] | None = None

    for step in range(start, config.steps):
        epoch, k = divmod(step, batches_per_epoch)
        if epoch_cache is None or epoch_cache[0] != epoch:
            epoch_cache = (epoch, batch_order(len(data), config.batch_size, config.seed, epoch))
        batch = [data[i] for i in epoch_cache[1][k]]
        with ad.Graph() as graph:
            cls, seq = model.loss_parts(batch)
            total = seq if cls is None else ad.add(ad.scale(cls, config.cls_weight), seq)
            loss = ad.scale(total, 1.0 / len(batch))
        grads = ad.backward(graph, loss, model.params)
        try:
            adagrad_step(model.params, grads, state, config.lr, config.eps)
        except NonFiniteGradient:
            skipped += 1
            continue
        value = loss.item()
        window.append(value)
        done = step + 1
        if done % config.log_every == 0 or done == config.steps:
            rec = LogRecord(
                done, float(np.mean(window)),
                None if cls is None else cls.item() / len(batch), seq.item() / len(batch),
            )
            records.append(rec)
            if log is not None:
                log(rec)
            if rec.loss < best_loss:
                best_loss = rec.loss
                best_params = {k: v.value.copy() for k, v in model.params.items()}
                best_acc = {k: v.copy() for k, v in state.accumulators.items()}
                best_step = done
            window = []

    meta = {"train_config": config.to_dict(), "best_loss": best_loss, "skipped_steps": skipped}
    final = Checkpoint(model, vocab, state.accumulators, max(start, config.steps), dict(meta))
    best_model = ShapedModel(
        model.config, model.styles, model.variant,
        params={k: ad.Tensor(v, requires_grad=True, name=k) for k, v in best_params.items()},
    )
    best = Checkpoint(best_model, vocab, best_acc, best_step, dict(meta))
    return TrainResult(final, best, records, skipped)
