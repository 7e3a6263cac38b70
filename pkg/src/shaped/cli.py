"""Command-line entry point: synth, train, generate, evaluate, classify, gradcheck.

Exit codes: 0 success, 1 verification failure, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from contextlib import contextmanager
from pathlib import Path

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, coerce_config, load_config, parse_overrides, pick
from .data import (
    UNK, CorpusFormatError, SpecError, TextExample, default_specs, read_corpus, read_specs, synth_splits,
    write_corpus, write_specs,
)
from .evaluation import VARIANTS, ExperimentConfig, MissingCheckpointError, posteriors, run_experiment
from .train import TrainConfig, normalize_variant, train
from .verify import TinySetup, check_joint_gradients, group_errors, tiny_problem

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _settings(args, *classes) -> dict:
    raw = load_config(args.config) if args.config else {}
    raw.update(parse_overrides(args.set))
    values = coerce_config(raw, *classes)
    if args.seed is not None:
        values["seed"] = args.seed
    return values


def _split_names(text: str | None) -> list[str] | None:
    if not text:
        return None
    return [s.strip() for s in text.split(",") if s.strip()]


def read_split_dir(root, split: str) -> dict[str, list[TextExample]]:
    """``root/<split>/<style>.jsonl`` files keyed by file stem."""
    folder = Path(root) / split
    if not folder.is_dir():
        raise FileNotFoundError(f"corpus split not found: {folder}")
    return {p.stem: read_corpus(p) for p in sorted(folder.glob("*.jsonl"))}


def read_training_corpus(path, split: str = "train") -> list[TextExample]:
    path = Path(path)
    if path.is_dir():
        return [ex for exs in read_split_dir(path, split).values() for ex in exs]
    if not path.exists():
        raise FileNotFoundError(f"corpus not found: {path}")
    return read_corpus(path)


@contextmanager
def _open_out(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            yield fh


def _read_lines(path) -> list[str]:
    if path in (None, "-"):
        return sys.stdin.read().splitlines()
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"input file not found: {p}")
    return p.read_text(encoding="utf-8").splitlines()


# ----------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    specs = read_specs(args.spec) if args.spec else default_specs()
    seed = 0 if args.seed is None else args.seed
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    if not args.out:
        raise UsageError("synth needs --out DIR")
    splits = synth_splits(specs, args.n, seed)
    out = Path(args.out)
    in_domain = {s.name for s in specs if s.in_domain}
    for split, by_style in splits.items():
        (out / split).mkdir(parents=True, exist_ok=True)
        for name, exs in by_style.items():
            # held-out styles are test material only
            if split == "train" and name not in in_domain:
                continue
            write_corpus(exs, out / split / f"{name}.jsonl")
    write_specs(specs, out / "styles.ini")
    counts = {k: sum(len(v) for v in d.values()) for k, d in splits.items()}
    print(f"wrote {out}: " + ", ".join(f"{k}={v}" for k, v in counts.items()), file=sys.stderr)
    return EXIT_OK


def cmd_train(args) -> int:
    values = _settings(args, TrainConfig)
    if args.variant:
        values["variant"] = normalize_variant(args.variant)
    config = TrainConfig.from_dict(values)
    if not args.out:
        raise UsageError("train needs --out CHECKPOINT")
    corpus = read_training_corpus(args.corpus)
    styles = _split_names(args.styles)
    if styles and config.variant != "shared":
        corpus = [ex for ex in corpus if ex.style in styles]
    resume = load_checkpoint(args.resume) if args.resume else None
    out = Path(args.out)
    log_path = Path(args.log) if args.log else out.with_suffix(".log.jsonl")
    log_path.parent.mkdir(parents=True, exist_ok=True)
    with log_path.open("w", encoding="utf-8") as fh:
        def log(rec):
            fh.write(rec.to_json() + "\n")
            print(f"step {rec.step} loss {rec.loss:.4f}", file=sys.stderr)

        result = train(corpus, config, resume=resume, styles=styles, log=log)
    save_checkpoint(out, result.final)
    save_checkpoint(out.with_name(out.stem + ".best" + out.suffix), result.best)
    if result.skipped_steps:
        print(f"skipped {result.skipped_steps} step(s) with non-finite gradients", file=sys.stderr)
    return EXIT_OK


def _default_mode(variant: str) -> str:
    return {"shaped": "mixture", "shared": "shared", "private": "private"}[variant]


def cmd_generate(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    mode = args.mode or _default_mode(ckpt.model.variant)
    ckpt.model.parse_mode(mode)  # reject bad modes before reading input
    lines = _read_lines(args.input)
    seed = 0 if args.seed is None else args.seed
    with _open_out(args.out) as fh:
        if not lines:
            return EXIT_OK
        examples = [TextExample(line, "") for line in lines]
        srcs = [ckpt.vocab.encode(ex.source.lower().split()[: args.max_src]) or [UNK] for ex in examples]
        outs = ckpt.model.generate_batch(srcs, mode, max_len=args.max_len, decode=args.decode, seed=seed)
        for o in outs:
            fh.write(" ".join(ckpt.vocab.decode(o)) + "\n")
    return EXIT_OK


def cmd_classify(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.model.variant != "shaped":
        raise UsageError("classify needs a SHAPED checkpoint")
    lines = _read_lines(args.input)
    with _open_out(args.out) as fh:
        if not lines:
            return EXIT_OK
        post = posteriors(ckpt, [TextExample(line or "<unk>", "") for line in lines])
        names = ckpt.model.styles.names
        for row in post:
            fh.write(json.dumps({"style": names[int(row.argmax())],
                                 "posterior": {n: float(p) for n, p in zip(names, row)}}) + "\n")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    values = _settings(args, TrainConfig, ExperimentConfig)
    if args.variant:
        values["variants"] = tuple(v.strip() for v in args.variant.split(","))
    if not args.corpus:
        raise UsageError("evaluate needs --corpus DIR")
    tc = TrainConfig.from_dict(pick(values, TrainConfig))
    ec = ExperimentConfig(tc, **{k: v for k, v in pick(values, ExperimentConfig).items() if k != "train"})
    if args.seed is not None:
        ec.seeds = (args.seed,)
    splits = {"train": read_split_dir(args.corpus, "train"), "test": read_split_dir(args.corpus, args.split)}
    in_domain = _split_names(args.styles) or sorted(
        s for s, exs in splits["train"].items() if exs and all(ex.style is not None for ex in exs)
    )
    if not args.train and not args.checkpoints:
        raise UsageError("evaluate needs --checkpoints DIR (or --train)")
    report = run_experiment(splits, ec, in_domain, checkpoint_dir=args.checkpoints, do_train=args.train,
                            log=lambda m: print(m, file=sys.stderr))
    table = report.table()
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.with_suffix(".txt").write_text(table + "\n", encoding="utf-8")
        report.write_jsonl(out.with_suffix(".jsonl"))
    print(table)
    return EXIT_OK


def _corrupt(analytic: dict) -> None:
    name = sorted(analytic)[0]
    analytic[name] = analytic[name] + 1.0


def cmd_gradcheck(args) -> int:
    values = _settings(args, TinySetup)
    seed = values.pop("seed", 0)
    setup = TinySetup(**values)
    result = check_joint_gradients(setup, seed=seed, corrupt=_corrupt if args.corrupt_gradient else None)
    model, _ = tiny_problem(setup, seed)
    for group, err in sorted(group_errors(model, result).items()):
        print(f"  {group:<24} {err:.3e}")
    ok = result.passed(args.tol)
    print(f"{'PASS' if ok else 'FAIL'} max relative error {result.max_error:.3e} "
          f"(tolerance {args.tol:g}) at {result.worst_param}{list(result.worst_index or ())}, "
          f"{result.checked} coordinates checked")
    return EXIT_OK if ok else EXIT_FAIL


# ------------------------------------------------------------------ parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--seed", type=int, help="random seed (overrides the config)")
    common.add_argument("--out", help="output path ('-' for stdout where supported)")
    common.add_argument("set", nargs="*", metavar="key=value", help="configuration overrides")

    parser = _Parser(prog="shaped", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic multi-style corpus")
    p.add_argument("--spec", help="style spec file (INI); default built-in styles")
    p.add_argument("--n", type=int, default=2000, help="records per style")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train a SHAPED, S or P model")
    p.add_argument("--corpus", required=True, help="corpus directory (uses train/) or JSON-lines file")
    p.add_argument("--variant", help="SHAPED, S or P")
    p.add_argument("--styles", help="comma-separated style set (order fixes style ids)")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--log", help="training log path (JSON lines)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", parents=[common], help="decode one output line per input line")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", default="-", help="source text, one per line ('-' for stdin)")
    p.add_argument("--mode", help="shaped:<style>, mixture, uniform, shared or private[:<style>]")
    p.add_argument("--decode", choices=("greedy", "sample"), default="greedy")
    p.add_argument("--max-len", type=int, default=20)
    p.add_argument("--max-src", type=int, default=40)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("classify", parents=[common], help="style posterior per input line")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", default="-")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("evaluate", parents=[common], help="run the P / S / SP / M-SP comparison")
    p.add_argument("--corpus", required=True, help="directory written by 'synth'")
    p.add_argument("--checkpoints", help="directory of <variant>-seed<k>.ckpt files")
    p.add_argument("--train", action="store_true", help="train the models (saved to --checkpoints if given)")
    p.add_argument("--variant", help=f"comma-separated subset of {','.join(VARIANTS)}")
    p.add_argument("--styles", help="comma-separated in-domain styles")
    p.add_argument("--split", default="test")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check on a tiny SHAPED model")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    # key=value overrides may appear anywhere, including after options
    args, extra = parser.parse_known_args(argv)
    stray = [x for x in extra if x.startswith("-") or "=" not in x]
    if stray:
        parser.error(f"unrecognized arguments: {' '.join(stray)}")
    args.set = list(args.set) + extra
    try:
        return args.func(args)
    except (UsageError, ConfigError, SpecError, CorpusFormatError, CheckpointError, MissingCheckpointError,
            FileNotFoundError, KeyError, ValueError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"shaped {args.command}: error: {msg}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
