"""Binary checkpoints: model parameters, Adagrad accumulators, vocabulary and config.

Layout (all integers little-endian)::

    magic  b"SHAPEDCK"
    u32    format version
    u64    header length, then a UTF-8 JSON header
    u32    entry count
    per entry: u16 name length, name, u8 ndim, u64 dims..., float64 '<f8' values

Entries named ``param/<name>`` hold parameters and ``adagrad/<name>`` the
optimizer accumulators.  Values are written raw, so a round trip is bit-exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .data import Vocabulary
from .model import ModelConfig, ShapedModel, StyleSet

MAGIC = b"SHAPEDCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: ShapedModel
    vocab: Vocabulary
    accumulators: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    meta: dict = field(default_factory=dict)


def _entry_bytes(name: str, value: np.ndarray) -> bytes:
    raw = name.encode("utf-8")
    arr = np.ascontiguousarray(value, dtype="<f8")
    head = struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.tobytes()


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    model = ckpt.model
    header = {
        "config": model.config.to_dict(),
        "styles": list(model.styles.names),
        "variant": model.variant,
        "vocab": list(ckpt.vocab.tokens),
        "step": int(ckpt.step),
        "meta": ckpt.meta,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    entries = [("param/" + k, v.value) for k, v in model.params.items()]
    entries += [("adagrad/" + k, v) for k, v in ckpt.accumulators.items()]
    parts = [MAGIC, struct.pack("<IQ", VERSION, len(hbytes)), hbytes, struct.pack("<I", len(entries))]
    parts += [_entry_bytes(name, value) for name, value in entries]
    return b"".join(parts)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_checkpoint(ckpt))
    tmp.replace(path)


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data, self.pos, self.source = data, 0, source

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(
                f"{self.source}: truncated at byte offset {self.pos} while reading {what} "
                f"(need {n} bytes, {len(self.data) - self.pos} left)"
            )
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_checkpoint(data: bytes, source: str = "<bytes>", expect_styles=None) -> Checkpoint:
    r = _Reader(data, source)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint file (bad magic at offset 0)")
    version, hlen = r.unpack("<IQ", "version")
    if version != VERSION:
        raise CheckpointError(f"{source}: checkpoint format version {version}, this build reads {VERSION}")
    at = r.pos
    try:
        header = json.loads(r.take(hlen, "header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{source}: corrupt header at byte offset {at}: {exc}") from None
    styles = StyleSet(tuple(header["styles"]))
    if expect_styles is not None:
        want = expect_styles if isinstance(expect_styles, int) else len(expect_styles)
        if len(styles) != want:
            raise CheckpointError(
                f"{source}: checkpoint has {len(styles)} styles {list(styles.names)}, expected {want}"
            )
    (count,) = r.unpack("<I", "entry count")
    params: dict[str, Tensor] = {}
    accum: dict[str, np.ndarray] = {}
    for i in range(count):
        (nlen,) = r.unpack("<H", f"entry {i} name length")
        name = r.take(nlen, f"entry {i} name").decode("utf-8")
        (ndim,) = r.unpack("<B", f"{name} rank")
        shape = r.unpack(f"<{ndim}Q", f"{name} shape") if ndim else ()
        size = int(np.prod(shape)) if shape else 1
        value = np.frombuffer(r.take(8 * size, f"{name} values"), dtype="<f8").reshape(shape).astype(np.float64)
        kind, _, key = name.partition("/")
        if kind == "param":
            params[key] = Tensor(value, requires_grad=True, name=key)
        elif kind == "adagrad":
            accum[key] = value
        else:
            raise CheckpointError(f"{source}: unknown entry {name!r}")
    if r.pos != len(data):
        raise CheckpointError(f"{source}: {len(data) - r.pos} trailing bytes at offset {r.pos}")
    config = ModelConfig(**header["config"])
    try:
        model = ShapedModel(config, styles, header["variant"], params=params)
    except ValueError as exc:
        raise CheckpointError(f"{source}: {exc}") from None
    stray = set(accum) - set(params)
    if stray:
        raise CheckpointError(f"{source}: accumulators without parameters: {sorted(stray)[:5]}")
    return Checkpoint(model, Vocabulary(header["vocab"]), accum, header["step"], header["meta"])


def load_checkpoint(path, expect_styles=None) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes(), str(path), expect_styles)
