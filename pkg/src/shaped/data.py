"""Vocabulary, corpus files and the synthetic multi-style headline corpus.

Each synthetic example starts from one content record (who did what, where,
when).  The record is rendered as a one-sentence article and as a headline;
styles differ in an optional article tag, the article's clause order, the
headline template and a token substitution table applied to both texts.
"""

from __future__ import annotations

import configparser
import json
import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")

MAX_SRC = 40
MAX_TGT = 20


class CorpusFormatError(ValueError):
    pass


class SpecError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    return text.lower().split()


class Vocabulary:
    """Bijective token <-> id map; ids 0..3 are PAD, BOS, EOS, UNK."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:4]) != RESERVED:
            tokens = list(RESERVED) + [t for t in tokens if t not in RESERVED]
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be unique")
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def id(self, token: str) -> int:
        return self.index.get(token, UNK)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.index.get(t, UNK) for t in tokens]

    def decode(self, ids: Iterable[int], strip_eos: bool = True) -> list[str]:
        out = []
        for i in ids:
            i = int(i)
            if strip_eos and i == EOS:
                break
            out.append(self.tokens[i])
        return out


def build_vocab(corpus: Iterable[str | Sequence[str]], cap: int = 500) -> Vocabulary:
    """Keep the ``cap - 4`` most frequent tokens (ties broken lexicographically)."""
    if cap < 5:
        raise ValueError(f"vocabulary cap must be >= 5, got {cap}")
    counts: Counter[str] = Counter()
    for item in corpus:
        counts.update(tokenize(item) if isinstance(item, str) else item)
    for t in RESERVED:
        counts.pop(t, None)
    if not counts:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary(list(RESERVED) + [t for t, _ in ranked[: cap - len(RESERVED)]])


@dataclass
class TextExample:
    """One corpus record as text; ``style`` is None when unknown."""

    source: str
    target: str
    style: str | None = None


@dataclass
class StyledExample:
    source: list[int]
    target: list[int]  # ends with EOS
    style: int | None = None


def encode_example(source: str, target: str, vocab: Vocabulary, max_src: int = MAX_SRC,
                   max_tgt: int = MAX_TGT, style: int | None = None) -> StyledExample:
    """Lowercase, split on whitespace, map OOV to UNK, truncate, append EOS.

    The target keeps at most ``max_tgt - 1`` tokens so that with EOS it fits
    in ``max_tgt``.
    """
    src = tokenize(source)[:max_src]
    if not src:
        raise ValueError("source is empty after tokenization")
    tgt = tokenize(target)[: max_tgt - 1]
    return StyledExample(vocab.encode(src), vocab.encode(tgt) + [EOS], style)


def encode_corpus(examples: Iterable[TextExample], vocab: Vocabulary, styles=None,
                  max_src: int = MAX_SRC, max_tgt: int = MAX_TGT) -> list[StyledExample]:
    """Encode text records; style names are mapped through ``styles`` (a StyleSet) when given."""
    out = []
    for ex in examples:
        z = None
        if ex.style is not None and styles is not None:
            z = styles.index(ex.style)
        out.append(encode_example(ex.source, ex.target, vocab, max_src, max_tgt, z))
    return out


# ---------------------------------------------------------------------------
# corpus files: one JSON object per line


def write_corpus(examples: Iterable[TextExample], path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps({"source": ex.source, "target": ex.target, "style": ex.style},
                                ensure_ascii=False) + "\n")


def read_corpus(path) -> list[TextExample]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as err:
                raise CorpusFormatError(f"{path}:{lineno}: malformed record ({err.msg})") from None
            if not isinstance(rec, dict):
                raise CorpusFormatError(f"{path}:{lineno}: record must be an object")
            for key in ("source", "target"):
                if not isinstance(rec.get(key), str):
                    raise CorpusFormatError(f"{path}:{lineno}: missing or non-string field {key!r}")
            style = rec.get("style")
            if style is not None and not isinstance(style, str):
                raise CorpusFormatError(f"{path}:{lineno}: style must be a string or null")
            out.append(TextExample(rec["source"], rec["target"], style))
    return out


# ---------------------------------------------------------------------------
# synthetic styles

COUNTRIES = (
    "china", "france", "japan", "brazil", "kenya", "egypt", "india", "russia", "germany", "canada",
    "mexico", "nigeria", "peru", "chile", "spain", "italy", "poland", "turkey", "vietnam", "ghana",
)
ORGS = ("cabinet", "parliament", "police", "army", "court", "ministry", "senate", "council")
VERBS = {
    # lemma: (past, present)
    "approve": ("approved", "approves"),
    "reject": ("rejected", "rejects"),
    "sign": ("signed", "signs"),
    "launch": ("launched", "launches"),
    "delay": ("delayed", "delays"),
    "review": ("reviewed", "reviews"),
    "expand": ("expanded", "expands"),
    "cut": ("cut", "cuts"),
    "boost": ("boosted", "boosts"),
    "ban": ("banned", "bans"),
    "unveil": ("unveiled", "unveils"),
    "back": ("backed", "backs"),
}
OBJECTS = (
    "budget", "treaty", "plan", "reform", "tax", "deal", "law", "project", "tariff", "pact",
    "bill", "program", "subsidy", "loan", "strategy", "policy", "accord", "census", "pension", "quota",
)
ADJECTIVES = ("new", "draft", "revised", "joint", "major")
PLACES = (
    "paris", "tokyo", "nairobi", "lima", "cairo", "delhi", "oslo", "rome",
    "seoul", "accra", "quito", "hanoi", "dakar", "riga", "sofia", "manila",
)
DAYS = ("monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday")

SLOTS = ("country", "org", "verb", "verb_past", "verb_base", "adj", "obj", "loc", "day")

# article clauses, reordered per style; the attribution clause always closes the sentence
CLAUSES = (
    "{country} 's {org} {verb_past} a {adj} {obj}",
    "in {loc}",
    "on {day}",
)
ATTRIBUTION = ", officials said ."


@dataclass
class SynthStyleSpec:
    name: str
    template: str
    lexicon: dict[str, str] = field(default_factory=dict)
    tag: str | None = None
    order: tuple[int, ...] = (0, 1, 2)
    in_domain: bool = True

    def __post_init__(self):
        self.order = tuple(int(i) for i in self.order)
        self.validate()

    def validate(self) -> None:
        used = template_slots(self.template)
        bad = [s for s in used if s not in SLOTS]
        if bad:
            raise SpecError(f"style {self.name!r}: template references unknown slot(s) {bad}")
        if sorted(self.order) != list(range(len(CLAUSES))):
            raise SpecError(f"style {self.name!r}: clause order {self.order} is not a permutation of 0..{len(CLAUSES) - 1}")
        for k, v in self.lexicon.items():
            if not k or not v or " " in k:
                raise SpecError(f"style {self.name!r}: bad lexicon entry {k!r} -> {v!r}")


def template_slots(template: str) -> list[str]:
    return [name for _, name, _, _ in string.Formatter().parse(template) if name is not None]


def sample_content(rng: np.random.Generator) -> dict[str, str]:
    lemma = list(VERBS)[rng.integers(len(VERBS))]
    past, pres = VERBS[lemma]
    return {
        "country": COUNTRIES[rng.integers(len(COUNTRIES))],
        "org": ORGS[rng.integers(len(ORGS))],
        "verb": pres,
        "verb_past": past,
        "verb_base": lemma,
        "adj": ADJECTIVES[rng.integers(len(ADJECTIVES))] if rng.random() < 0.5 else "",
        "obj": OBJECTS[rng.integers(len(OBJECTS))],
        "loc": PLACES[rng.integers(len(PLACES))],
        "day": DAYS[rng.integers(len(DAYS))],
    }


def _render(template: str, content: dict[str, str], lexicon: dict[str, str]) -> str:
    tokens = template.format(**content).split()
    return " ".join(lexicon.get(t, t) for t in tokens)


def render_source(spec: SynthStyleSpec, content: dict[str, str]) -> str:
    body = " ".join(CLAUSES[i] for i in spec.order) + " " + ATTRIBUTION
    text = _render(body, content, spec.lexicon)
    return f"{spec.tag} {text}" if spec.tag else text


def render_target(spec: SynthStyleSpec, content: dict[str, str]) -> str:
    return _render(spec.template, content, spec.lexicon)


def synth_corpus(specs: Sequence[SynthStyleSpec], n_per_style: int, seed: int) -> list[TextExample]:
    """Render ``n_per_style`` content records through every style.

    Record ``i`` is shared by all styles, so examples come out grouped by
    record index: ``out[i * len(specs) + k]`` is record ``i`` in style ``k``.
    Out-of-domain styles are labelled None.
    """
    if n_per_style < 1:
        raise ValueError("n_per_style must be >= 1")
    if not specs:
        raise ValueError("no style specs given")
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise SpecError(f"duplicate style names in {names}")
    for spec in specs:
        spec.validate()
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_per_style):
        content = sample_content(rng)
        for spec in specs:
            out.append(TextExample(render_source(spec, content), render_target(spec, content),
                                   spec.name if spec.in_domain else None))
    return out


def split_indices(n: int) -> dict[str, range]:
    """80/10/10 split of record indices (dev and test get ``n // 10`` each)."""
    n_eval = n // 10
    n_train = n - 2 * n_eval
    return {"train": range(0, n_train), "dev": range(n_train, n_train + n_eval),
            "test": range(n_train + n_eval, n)}


def synth_splits(specs: Sequence[SynthStyleSpec], n_per_style: int, seed: int) -> dict[str, dict[str, list[TextExample]]]:
    """Corpus split by record index, returned as ``{split: {style: examples}}``."""
    corpus = synth_corpus(specs, n_per_style, seed)
    k = len(specs)
    out: dict[str, dict[str, list[TextExample]]] = {}
    for split, idx in split_indices(n_per_style).items():
        out[split] = {spec.name: [corpus[i * k + j] for i in idx] for j, spec in enumerate(specs)}
    return out


# ---------------------------------------------------------------------------
# default styles: four in-domain, one blend close to "agency", one mixed blend

_WIRE_LEX = {
    "officials": "sources", "approves": "okays", "rejects": "nixes", "signs": "inks",
    "launches": "kicks-off", "delays": "stalls", "reviews": "probes", "expands": "widens",
    "cuts": "trims", "boosts": "lifts", "bans": "bars", "unveils": "shows", "backs": "endorses",
    "budget": "spending", "treaty": "accord", "reform": "overhaul", "tax": "levy", "law": "statute",
}
_DAILY_LEX = {
    "said": "reported", "approve": "pass", "reject": "block", "sign": "seal", "launch": "start",
    "delay": "postpone", "review": "study", "expand": "enlarge", "cut": "reduce", "boost": "raise",
    "ban": "outlaw", "unveil": "reveal", "back": "support",
    "plan": "scheme", "deal": "bargain", "project": "venture", "bill": "measure", "loan": "credit",
}
_TIMES_LEX = {
    "officials": "aides", "approves": "clears", "rejects": "spurns", "signs": "adopts",
    "launches": "opens", "delays": "defers", "reviews": "weighs", "expands": "extends",
    "cuts": "slashes", "boosts": "bolsters", "bans": "halts", "unveils": "presents", "backs": "favors",
    "program": "initiative", "subsidy": "handout", "strategy": "blueprint", "policy": "doctrine",
    "pension": "annuity",
}
_AGENCY_LEX = {"said": "announced"}
_BULLETIN_LEX = {k: _WIRE_LEX[k] for k in ("officials", "approves", "rejects", "signs", "launches", "delays")}


def default_specs() -> list[SynthStyleSpec]:
    return [
        SynthStyleSpec("wire", "{country} {verb} {obj}", dict(_WIRE_LEX), tag="wire-report", order=(0, 1, 2)),
        SynthStyleSpec("daily", "{country} {org} to {verb_base} {adj} {obj}", dict(_DAILY_LEX), order=(1, 0, 2)),
        SynthStyleSpec("times", "{org} of {country} {verb} {obj} on {day}", dict(_TIMES_LEX), order=(2, 0, 1)),
        SynthStyleSpec("agency", "{country} {verb} {adj} {obj} in {loc}", dict(_AGENCY_LEX), tag="agency-dispatch",
                       order=(0, 2, 1)),
        # agency conventions with part of the wire vocabulary mixed in
        SynthStyleSpec("bulletin", "{country} {verb} {adj} {obj} in {loc}", {**_AGENCY_LEX, **_BULLETIN_LEX},
                       tag="agency-dispatch", order=(0, 2, 1), in_domain=False),
        SynthStyleSpec("weekly", "{org} of {country} {verb} {obj} on {day}", dict(_WIRE_LEX), order=(1, 0, 2),
                       in_domain=False),
    ]


NEAREST_STYLE = {"bulletin": "agency"}


# ---------------------------------------------------------------------------
# spec files (INI): one section per style


def _parse_lexicon(text: str, where: str) -> dict[str, str]:
    lex = {}
    for item in text.split():
        src, sep, dst = item.partition("=")
        if not sep or not src or not dst:
            raise SpecError(f"{where}: lexicon entries must look like word=replacement, got {item!r}")
        lex[src] = dst
    return lex


def read_specs(path) -> list[SynthStyleSpec]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"style spec file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(path.read_text(encoding="utf-8"), source=str(path))
    except configparser.Error as err:
        raise SpecError(f"{path}: {err}") from None
    specs = []
    allowed = {"template", "lexicon", "tag", "order", "in_domain"}
    for name in parser.sections():
        sec = parser[name]
        where = f"{path} [{name}]"
        unknown = set(sec) - allowed
        if unknown:
            raise SpecError(f"{where}: unknown key(s) {sorted(unknown)}")
        if "template" not in sec:
            raise SpecError(f"{where}: missing 'template'")
        try:
            order = tuple(int(x) for x in sec.get("order", "0 1 2").split())
            in_domain = sec.getboolean("in_domain", fallback=True)
        except ValueError as err:
            raise SpecError(f"{where}: {err}") from None
        specs.append(SynthStyleSpec(
            name=name,
            template=sec["template"],
            lexicon=_parse_lexicon(sec.get("lexicon", ""), where),
            tag=sec.get("tag") or None,
            order=order,
            in_domain=in_domain,
        ))
    if not specs:
        raise SpecError(f"{path}: no styles defined")
    return specs


def write_specs(specs: Sequence[SynthStyleSpec], path) -> None:
    parser = configparser.ConfigParser(interpolation=None)
    for s in specs:
        parser[s.name] = {
            "template": s.template,
            "lexicon": " ".join(f"{k}={v}" for k, v in s.lexicon.items()),
            "tag": s.tag or "",
            "order": " ".join(str(i) for i in s.order),
            "in_domain": "yes" if s.in_domain else "no",
        }
    with Path(path).open("w", encoding="utf-8") as fh:
        parser.write(fh)


def iter_tokens(examples: Iterable[TextExample]) -> Iterator[list[str]]:
    for ex in examples:
        yield tokenize(ex.source)
        yield tokenize(ex.target)
