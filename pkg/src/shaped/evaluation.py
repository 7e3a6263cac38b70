"""ROUGE metrics, classifier reports and the P / S / SP / M-SP comparison runner."""

from __future__ import annotations

import json
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import MAX_SRC, MAX_TGT, TextExample, encode_example, tokenize
from .train import TrainConfig, train

METRICS = ("R1", "R2", "RL")
VARIANTS = ("P", "S", "SP", "M-SP", "uniform")
OOD_VARIANTS = ("S", "M-SP")


# ------------------------------------------------------------------ ROUGE


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float


def _prf(overlap: float, n_cand: int, n_ref: int) -> PRF:
    p = overlap / n_cand if n_cand else 0.0
    r = overlap / n_ref if n_ref else 0.0
    f = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return PRF(p, r, f)


def _ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _tokens(x) -> list:
    return tokenize(x) if isinstance(x, str) else list(x)


def rouge_n(candidate, reference, n: int) -> PRF:
    """Clipped n-gram overlap; strings are lowercased and split on whitespace."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    cand, ref = _ngrams(_tokens(candidate), n), _ngrams(_tokens(reference), n)
    overlap = sum((cand & ref).values())
    return _prf(overlap, sum(cand.values()), sum(ref.values()))


def lcs_length(a: Sequence, b: Sequence) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate, reference) -> PRF:
    cand, ref = _tokens(candidate), _tokens(reference)
    return _prf(lcs_length(cand, ref), len(cand), len(ref))


def sentence_scores(candidate, reference) -> dict[str, PRF]:
    return {"R1": rouge_n(candidate, reference, 1), "R2": rouge_n(candidate, reference, 2),
            "RL": rouge_l(candidate, reference)}


@dataclass
class MetricScore:
    precision: float
    recall: float
    f1: float
    precision_hw: float = 0.0  # bootstrap 95% half-widths
    recall_hw: float = 0.0
    f1_hw: float = 0.0


@dataclass
class RougeScore:
    scores: dict[str, MetricScore]
    n: int

    def f1(self, metric: str = "RL") -> float:
        return self.scores[metric].f1

    def to_dict(self) -> dict:
        return {"n": self.n, **{m: asdict(s) for m, s in self.scores.items()}}


def bootstrap_half_width(values: np.ndarray, resamples: int = 1000, seed: int = 0) -> float:
    if len(values) < 2:
        return 0.0
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(values), size=(resamples, len(values)))
    means = values[idx].mean(axis=1)
    lo, hi = np.percentile(means, [2.5, 97.5])
    return float(hi - lo) / 2


def corpus_rouge(candidates: Sequence, references: Sequence, resamples: int = 1000, seed: int = 0) -> RougeScore:
    """Mean sentence-level ROUGE with bootstrap intervals over examples."""
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates vs {len(references)} references")
    per = [sentence_scores(c, r) for c, r in zip(candidates, references)]
    out = {}
    for m in METRICS:
        cols = {k: np.array([getattr(s[m], k) for s in per]) for k in ("precision", "recall", "f1")}
        if not per:
            out[m] = MetricScore(0.0, 0.0, 0.0)
            continue
        out[m] = MetricScore(
            *(float(cols[k].mean()) for k in ("precision", "recall", "f1")),
            *(bootstrap_half_width(cols[k], resamples, seed) for k in ("precision", "recall", "f1")),
        )
    return RougeScore(out, len(per))


# ---------------------------------------------------------- model helpers


def encode_sources(ckpt: Checkpoint, examples: Sequence[TextExample], max_src: int = MAX_SRC) -> list[list[int]]:
    return [encode_example(ex.source, "", ckpt.vocab, max_src, MAX_TGT).source for ex in examples]


def decode_examples(ckpt: Checkpoint, examples: Sequence[TextExample], mode, max_len: int = MAX_TGT,
                    max_src: int = MAX_SRC) -> list[list[str]]:
    """Greedy outputs as token lists (EOS stripped)."""
    if not examples:
        return []
    outs = ckpt.model.generate_batch(encode_sources(ckpt, examples, max_src), mode, max_len=max_len)
    return [ckpt.vocab.decode(o) for o in outs]


def posteriors(ckpt: Checkpoint, examples: Sequence[TextExample], max_src: int = MAX_SRC) -> np.ndarray:
    """Classifier posterior per example, shape (N, |D|), in input order."""
    model = ckpt.model
    srcs = encode_sources(ckpt, examples, max_src)
    out = np.zeros((len(srcs), len(model.styles)))
    by_len: dict[int, list[int]] = {}
    for i, s in enumerate(srcs):
        by_len.setdefault(len(s), []).append(i)
    for idx in by_len.values():
        enc = model.encode_all(np.array([srcs[i] for i in idx]), styles="all")
        out[idx] = model.classify_style(enc)
    return out


def posterior_report(ckpt: Checkpoint, split: dict[str, Sequence[TextExample]]) -> dict[str, list[float]]:
    """Mean posterior over the in-domain styles, per style group of ``split``."""
    return {name: posteriors(ckpt, exs).mean(axis=0).tolist() for name, exs in split.items() if exs}


def confusion_matrix(ckpt: Checkpoint, split: dict[str, Sequence[TextExample]]) -> np.ndarray:
    styles = ckpt.model.styles
    cm = np.zeros((len(styles), len(styles)), dtype=np.int64)
    for name, exs in split.items():
        if not exs:
            continue
        pred = posteriors(ckpt, exs).argmax(axis=1)
        np.add.at(cm, (styles.index(name), pred), 1)
    return cm


# -------------------------------------------------------------- experiment


@dataclass
class ExperimentConfig:
    train: TrainConfig
    seeds: tuple[int, ...] = (0, 1, 2)
    shaped_steps: int | None = None  # defaults to train.steps
    shared_steps: int | None = None
    private_steps: int | None = None  # per P model; defaults to the same number of epochs as S
    resamples: int = 1000
    max_len: int = MAX_TGT
    variants: tuple[str, ...] = VARIANTS


class MissingCheckpointError(FileNotFoundError):
    pass


@dataclass
class ExperimentReport:
    # results[seed][variant][split] -> RougeScore
    results: dict[int, dict[str, dict[str, RougeScore]]]
    in_domain: list[str]
    out_of_domain: list[str]
    confusion: dict[int, list[list[int]]] = field(default_factory=dict)
    posteriors: dict[int, dict[str, list[float]]] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)

    def splits(self) -> list[str]:
        out: list[str] = []
        for by_variant in self.results.values():
            for by_split in by_variant.values():
                out += [s for s in by_split if s not in out]
        return out

    def median(self, variant: str, split: str, metric: str = "RL") -> float:
        vals = [r[variant][split].f1(metric) for r in self.results.values() if split in r.get(variant, {})]
        return float(np.median(vals)) if vals else float("nan")

    def accuracy(self, seed: int) -> float:
        cm = np.array(self.confusion[seed])
        return float(np.trace(cm) / cm.sum())

    def median_posterior(self, split: str) -> np.ndarray:
        return np.median(np.array([p[split] for p in self.posteriors.values()]), axis=0)

    def records(self):
        for seed, by_variant in self.results.items():
            for variant, by_split in by_variant.items():
                for split, score in by_split.items():
                    yield {"kind": "rouge", "seed": seed, "variant": variant, "split": split, **score.to_dict()}
        for seed, cm in self.confusion.items():
            yield {"kind": "confusion", "seed": seed, "styles": self.in_domain, "matrix": cm}
        for seed, post in self.posteriors.items():
            for split, p in post.items():
                yield {"kind": "posterior", "seed": seed, "split": split, "styles": self.in_domain, "mean": p}

    def write_jsonl(self, path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for rec in self.records():
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def table(self) -> str:
        lines = [f"ROUGE F1 x100, median over seeds {sorted(self.results)}"]
        splits = self.splits()
        header = f"{'variant':<9}" + "".join(f"{s:>26}" for s in splits)
        lines += [header, " " * 9 + "".join(f"{'R1 / R2 / RL':>26}" for _ in splits)]
        for v in VARIANTS:
            row = f"{v:<9}"
            for s in splits:
                if np.isnan(self.median(v, s)):
                    row += f"{'-':>26}"
                else:
                    row += f"{' / '.join(f'{100 * self.median(v, s, m):6.2f}' for m in METRICS):>26}"
            lines.append(row)
        if self.confusion:
            accs = [self.accuracy(s) for s in sorted(self.confusion)]
            lines.append(f"classifier accuracy per seed: {', '.join(f'{a:.3f}' for a in accs)}")
        for split in (self.posteriors and next(iter(self.posteriors.values())) or {}):
            p = self.median_posterior(split)
            lines.append(f"mean posterior [{split}]: " + " ".join(f"{n}={x:.3f}" for n, x in zip(self.in_domain, p)))
        return "\n".join(lines)


def _ckpt_path(directory, name: str, seed: int) -> Path:
    return Path(directory) / f"{name}-seed{seed}.ckpt"


def _obtain(name: str, seed: int, corpus, cfg: TrainConfig, checkpoint_dir, do_train: bool,
            styles=None, log: Callable[[str], None] | None = None) -> Checkpoint:
    if not do_train:
        if checkpoint_dir is None:
            raise MissingCheckpointError(f"no checkpoint directory given for {name} (seed {seed})")
        path = _ckpt_path(checkpoint_dir, name, seed)
        if not path.exists():
            raise MissingCheckpointError(f"missing checkpoint for {name} (seed {seed}): {path}")
        return load_checkpoint(path)
    t0 = time.time()
    ckpt = train(corpus, cfg, styles=styles).final
    if log:
        log(f"trained {name} seed={seed} steps={cfg.steps} in {time.time() - t0:.1f}s")
    if checkpoint_dir is not None:
        save_checkpoint(_ckpt_path(checkpoint_dir, name, seed), ckpt)
    return ckpt


def run_experiment(
    splits: dict[str, dict[str, list[TextExample]]],
    config: ExperimentConfig,
    in_domain: Sequence[str],
    checkpoint_dir=None,
    do_train: bool = True,
    log: Callable[[str], None] | None = None,
) -> ExperimentReport:
    """Train (or load) P, S and SHAPED models per seed and score them on the test split.

    ``splits`` is ``{"train"|"test": {style: examples}}``; styles not in
    ``in_domain`` are treated as out-of-domain and only reach S and M-SP.
    SP decodes with the true style, M-SP with the classifier mixture and
    ``uniform`` with equal weights.  The combined in-domain test set is
    reported as split ``in-domain``.
    """
    in_domain = list(in_domain)
    train_sets, test_sets = splits["train"], splits["test"]
    ood = [s for s in test_sets if s not in in_domain]
    train_in = [ex for s in in_domain for ex in train_sets[s]]
    test_in = [ex for s in in_domain for ex in test_sets[s]]
    refs_in = [ex.target for ex in test_in]
    base = config.train
    shaped_steps = config.shaped_steps or base.steps
    shared_steps = config.shared_steps or base.steps
    epochs = shared_steps * base.batch_size / max(len(train_in), 1)
    report = ExperimentReport({}, in_domain, ood)
    t_start = time.time()

    def score(outs, refs):
        return corpus_rouge(outs, refs, config.resamples, seed=0)

    wanted = [v for v in VARIANTS if v in config.variants]
    unknown = set(config.variants) - set(VARIANTS)
    if unknown:
        raise ValueError(f"unknown variant(s) {sorted(unknown)}; choose from {VARIANTS}")
    need_shaped = any(v in wanted for v in ("SP", "M-SP", "uniform"))
    modes = {"SP": None, "M-SP": "mixture", "uniform": "uniform"}

    for seed in config.seeds:
        res: dict[str, dict[str, RougeScore]] = {v: {} for v in wanted}

        def cfg(variant, steps, **kw):
            return TrainConfig.from_dict({**base.to_dict(), "variant": variant, "steps": steps, "seed": seed, **kw})

        def decode(ckpt, exs, mode):
            return decode_examples(ckpt, exs, mode, config.max_len, base.max_src)

        shaped = shared = None
        if need_shaped:
            shaped = _obtain("shaped", seed, train_in, cfg("shaped", shaped_steps), checkpoint_dir, do_train,
                             styles=in_domain, log=log)
        if "S" in wanted:
            shared = _obtain("shared", seed, train_in, cfg("shared", shared_steps), checkpoint_dir, do_train,
                             styles=in_domain, log=log)

        outs: dict[str, dict[str, list]] = {v: {} for v in wanted}
        for s in in_domain:
            exs = test_sets[s]
            if "P" in wanted:
                p_steps = config.private_steps or max(1, round(epochs * len(train_sets[s]) / base.batch_size))
                private = _obtain(f"private-{s}", seed, train_sets[s], cfg("private", p_steps, private_style=s),
                                  checkpoint_dir, do_train, log=log)
                outs["P"][s] = decode(private, exs, "private")
            if shared is not None:
                outs["S"][s] = decode(shared, exs, "shared")
            for v, mode in modes.items():
                if v in wanted:
                    outs[v][s] = decode(shaped, exs, mode or f"shaped:{s}")
        for v in wanted:
            for s in in_domain:
                res[v][s] = score(outs[v][s], [ex.target for ex in test_sets[s]])
            res[v]["in-domain"] = score([o for s in in_domain for o in outs[v][s]], refs_in)
        for s in ood:
            exs, refs = test_sets[s], [ex.target for ex in test_sets[s]]
            if shared is not None:
                res["S"][s] = score(decode(shared, exs, "shared"), refs)
            if "M-SP" in wanted:
                res["M-SP"][s] = score(decode(shaped, exs, "mixture"), refs)
        report.results[seed] = res
        if shaped is not None:
            report.confusion[seed] = confusion_matrix(shaped, {s: test_sets[s] for s in in_domain}).tolist()
            report.posteriors[seed] = posterior_report(shaped, {s: test_sets[s] for s in in_domain + ood})
        if log:
            summary = " ".join(f"{v} {100 * res[v]['in-domain'].f1():.2f}" for v in wanted)
            log(f"seed {seed}: in-domain RL {summary} [{time.time() - t_start:.0f}s]")
    report.timings["total_seconds"] = time.time() - t_start
    return report
