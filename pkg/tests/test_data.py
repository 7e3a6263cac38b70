import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shaped.data import (
    BOS, EOS, PAD, UNK, CorpusFormatError, SpecError, SynthStyleSpec, TextExample, Vocabulary,
    build_vocab, default_specs, encode_corpus, encode_example, read_corpus, read_specs,
    split_indices, synth_corpus, synth_splits, tokenize, write_corpus, write_specs,
)
from shaped.model import StyleSet


def test_reserved_ids():
    v = build_vocab(["x"])
    assert (PAD, BOS, EOS, UNK) == (0, 1, 2, 3)
    assert v.tokens[:4] == ["<pad>", "<bos>", "<eos>", "<unk>"]


def test_vocab_frequency_order_and_cap():
    v = build_vocab(["a a b"], cap=6)
    assert v.id("a") == 4 and v.id("b") == 5
    assert build_vocab(["a a b"], cap=5).id("b") == UNK


def test_vocab_ties_break_lexicographically():
    v = build_vocab(["c b a"], cap=10)
    assert v.tokens[4:] == ["a", "b", "c"]


def test_vocab_errors():
    with pytest.raises(ValueError, match="cap"):
        build_vocab(["a"], cap=4)
    with pytest.raises(ValueError, match="empty"):
        build_vocab([""])
    with pytest.raises(ValueError, match="unique"):
        Vocabulary(["x", "x"])


@given(st.lists(st.text(alphabet="abcde ", min_size=1, max_size=20), min_size=1, max_size=5))
def test_vocab_is_bijective(texts):
    if not any(tokenize(t) for t in texts):
        return
    v = build_vocab(texts, cap=50)
    assert len(set(v.tokens)) == len(v)
    for i, tok in enumerate(v.tokens):
        assert v.id(tok) == i


def test_encode_example_appends_eos_and_maps_oov():
    v = build_vocab(["a b c"])
    ex = encode_example("A b zzz", "c", v)
    assert ex.source == [v.id("a"), v.id("b"), UNK]
    assert ex.target == [v.id("c"), EOS]


def test_empty_target_is_just_eos():
    assert encode_example("a", "", build_vocab(["a"])).target == [EOS]


def test_empty_source_rejected():
    with pytest.raises(ValueError, match="source is empty"):
        encode_example("   ", "a", build_vocab(["a"]))


def test_truncation():
    v = build_vocab(["t"])
    ex = encode_example(" ".join(["t"] * 45), " ".join(["t"] * 45), v)
    assert len(ex.source) == 40
    assert len(ex.target) == 20 and ex.target[-1] == EOS


def test_encode_corpus_maps_style_names():
    v = build_vocab(["a"])
    out = encode_corpus([TextExample("a", "a", "y"), TextExample("a", "a", None)], v, StyleSet(("x", "y")))
    assert [ex.style for ex in out] == [1, None]
    with pytest.raises(KeyError):
        encode_corpus([TextExample("a", "a", "z")], v, StyleSet(("x",)))


def test_corpus_round_trip(tmp_path):
    records = [TextExample("src é", "tgt", "wire"), TextExample("s", "", None)]
    write_corpus(records, tmp_path / "c.jsonl")
    assert read_corpus(tmp_path / "c.jsonl") == records


@pytest.mark.parametrize(
    "line,match",
    [
        ('{"source": "a"}', "target"),
        ('{"source": "a", "target": 3}', "target"),
        ('[1, 2]', "object"),
        ('{"source": "a", "target": "b", "style": 4}', "style"),
        ("{oops", "malformed"),
    ],
)
def test_bad_corpus_lines(tmp_path, line, match):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"source": "a", "target": "b"}\n' + line + "\n")
    with pytest.raises(CorpusFormatError, match=f"bad.jsonl:2.*{match}"):
        read_corpus(path)


# ------------------------------------------------------------- synthetic data


def test_synth_is_deterministic():
    specs = default_specs()
    assert synth_corpus(specs, 30, seed=5) == synth_corpus(specs, 30, seed=5)
    assert synth_corpus(specs, 30, seed=5) != synth_corpus(specs, 30, seed=6)


def test_identical_specs_render_identically():
    a = SynthStyleSpec("a", "{country} {verb} {obj}", {"cuts": "trims"})
    b = SynthStyleSpec("b", "{country} {verb} {obj}", {"cuts": "trims"})
    corpus = synth_corpus([a, b], 20, seed=0)
    for i in range(20):
        x, y = corpus[2 * i], corpus[2 * i + 1]
        assert (x.source, x.target) == (y.source, y.target)


def test_out_of_domain_styles_are_unlabeled():
    corpus = synth_corpus(default_specs(), 3, seed=0)
    assert {ex.style for ex in corpus} == {"wire", "daily", "times", "agency", None}


def test_one_example_per_style():
    assert len(synth_corpus(default_specs(), 1, seed=0)) == len(default_specs())


def test_synth_argument_errors():
    with pytest.raises(ValueError):
        synth_corpus(default_specs(), 0, seed=0)
    with pytest.raises(SpecError, match="duplicate"):
        synth_corpus([SynthStyleSpec("a", "{obj}"), SynthStyleSpec("a", "{obj}")], 2, seed=0)


def test_spec_validation():
    with pytest.raises(SpecError, match="unknown slot"):
        SynthStyleSpec("a", "{colour}")
    with pytest.raises(SpecError, match="permutation"):
        SynthStyleSpec("a", "{obj}", order=(0, 0, 1))
    with pytest.raises(SpecError, match="lexicon"):
        SynthStyleSpec("a", "{obj}", {"two words": "x"})


@pytest.mark.parametrize("n,sizes", [(100, (80, 10, 10)), (2000, (1600, 200, 200)), (7, (7, 0, 0))])
def test_split_sizes(n, sizes):
    idx = split_indices(n)
    assert (len(idx["train"]), len(idx["dev"]), len(idx["test"])) == sizes
    assert sorted(i for r in idx.values() for i in r) == list(range(n))


def test_splits_share_content_across_styles():
    splits = synth_splits(default_specs(), 20, seed=1)
    assert set(splits) == {"train", "dev", "test"}
    daily, times = splits["test"]["daily"], splits["test"]["times"]
    assert len(daily) == 2
    # the same record keeps its country in every style
    for a, b in zip(daily, times):
        assert a.target.split()[0] in b.target.split()


def _unigram_accuracy(field: str) -> float:
    """Held-out accuracy of a multinomial naive Bayes unigram classifier."""
    splits = synth_splits(default_specs(), 300, seed=0)
    names = [n for n, exs in splits["train"].items() if exs[0].style is not None]
    vocab = build_vocab((getattr(ex, field) for n in names for ex in splits["train"][n]), cap=1000)
    counts = np.ones((len(names), len(vocab)))
    for k, n in enumerate(names):
        for ex in splits["train"][n]:
            np.add.at(counts[k], vocab.encode(tokenize(getattr(ex, field))), 1)
    logp = np.log(counts / counts.sum(axis=1, keepdims=True))
    hits = total = 0
    for k, n in enumerate(names):
        for ex in splits["test"][n]:
            hits += int(np.argmax(logp[:, vocab.encode(tokenize(getattr(ex, field)))].sum(axis=1)) == k)
            total += 1
    return hits / total


@pytest.mark.parametrize("field", ["source", "target"])
def test_in_domain_styles_are_unigram_separable(field):
    assert _unigram_accuracy(field) >= 0.99


@given(st.lists(st.sampled_from(["a", "B", "c", "zz", "Q"]), min_size=1, max_size=50))
def test_encode_decode_round_trip(words):
    vocab = build_vocab(["a b c"])
    ex = encode_example(" ".join(words), " ".join(words), vocab)
    expected = [w.lower() if w.lower() in vocab else "<unk>" for w in words]
    assert vocab.decode(ex.source) == expected[:40]
    assert vocab.decode(ex.target) == expected[:19]


def test_nearest_blend_shares_agency_source_layout():
    corpus = synth_corpus(default_specs(), 5, seed=2)
    by_style = {}
    for k, spec in enumerate(default_specs()):
        by_style[spec.name] = corpus[k]
    assert by_style["bulletin"].source.split()[0] == by_style["agency"].source.split()[0]


def test_spec_file_round_trip(tmp_path):
    specs = default_specs()
    write_specs(specs, tmp_path / "s.ini")
    assert read_specs(tmp_path / "s.ini") == specs


@pytest.mark.parametrize(
    "text,match",
    [
        ("[a]\nlexicon = x=y\n", "template"),
        ("[a]\ntemplate = {obj}\ncolour = red\n", "unknown key"),
        ("[a]\ntemplate = {obj}\nlexicon = nope\n", "word=replacement"),
        ("[a]\ntemplate = {obj}\norder = 0 one 2\n", "invalid literal"),
        ("", "no styles"),
        ("not ini", "\\.ini"),
    ],
)
def test_bad_spec_files(tmp_path, text, match):
    path = tmp_path / "bad.ini"
    path.write_text(text)
    with pytest.raises(SpecError, match=match):
        read_specs(path)


def test_missing_spec_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_specs(tmp_path / "none.ini")


def test_rendered_text_is_whitespace_clean():
    for ex in synth_corpus(default_specs(), 50, seed=3):
        for text in (ex.source, ex.target):
            assert "  " not in text and text == text.strip()
