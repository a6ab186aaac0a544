"""Binary container formats.

Checkpoint ("ABSM"):
    magic "ABSM" | u32 version | u64 header_len | UTF-8 JSON header |
    raw little-endian float32 tensor data in manifest order.
The JSON header carries {"kind": "seq2seq"|"policy", "config": {...},
"vocab": {...}, "manifest": [{"name", "shape", "offset"}, ...]}; offsets
are byte positions relative to the start of the data section.

Attention dump ("ATTN"):
    magic | u32 version | u32 pair_count |
    per pair: u32 target_len, u32 source_len, row-major float32 weights.

Policy label dump ("PLBL"):
    magic | u32 version | u32 pair_count |
    per pair: u32 target_len, u32 source_len, row-major bytes (0/1).

All integers are little-endian.  Truncated files raise CorruptionError;
wrong magic/version/kind raise FormatError.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .corpus import Vocab, RESERVED
from .errors import CorruptionError, FormatError
from .model import ModelConfig, Seq2SeqModel, param_names

MAGIC_CHECKPOINT = b"ABSM"
MAGIC_ATTENTION = b"ATTN"
MAGIC_LABELS = b"PLBL"
VERSION = 1


def _read_exact(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise CorruptionError(f"unexpected end of file while reading {what} "
                              f"(wanted {n} bytes, got {len(data)})")
    return data


def _check_magic(fh, expected):
    magic = fh.read(4)
    if magic != expected:
        raise FormatError(f"bad magic {magic!r}, expected {expected!r}")


def _check_version(fh):
    (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
    if version != VERSION:
        raise FormatError(f"unsupported version {version}, expected {VERSION}")


def _write_container(path, kind: str, config: dict, vocab: dict,
                     tensors: list[tuple[str, np.ndarray]]):
    manifest = []
    offset = 0
    for name, t in tensors:
        manifest.append({"name": name, "shape": list(t.shape), "offset": offset})
        offset += t.size * 4
    header = json.dumps({"kind": kind, "config": config, "vocab": vocab,
                         "manifest": manifest}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC_CHECKPOINT)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for _, t in tensors:
            fh.write(np.ascontiguousarray(t, dtype="<f4").tobytes())


def _read_container(path, expected_kind: str):
    with open(path, "rb") as fh:
        _check_magic(fh, MAGIC_CHECKPOINT)
        _check_version(fh)
        (header_len,) = struct.unpack("<Q", _read_exact(fh, 8, "header length"))
        try:
            header = json.loads(_read_exact(fh, header_len, "header"))
        except json.JSONDecodeError as exc:
            raise CorruptionError(f"header is not valid JSON: {exc}") from exc
        kind = header.get("kind")
        if kind != expected_kind:
            raise FormatError(f"checkpoint kind {kind!r}, expected {expected_kind!r}")
        data = fh.read()
    tensors = {}
    for entry in header["manifest"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        start, end = entry["offset"], entry["offset"] + size * 4
        if end > len(data):
            raise CorruptionError(f"tensor {entry['name']} extends past end of file")
        t = np.frombuffer(data[start:end], dtype="<f4").reshape(shape)
        tensors[entry["name"]] = t.copy()
    return header, tensors


def save_model(model: Seq2SeqModel, path, source_vocab: Vocab | None = None,
               target_vocab: Vocab | None = None):
    vocab = {}
    if source_vocab is not None:
        vocab["source"] = source_vocab.tokens
    if target_vocab is not None:
        vocab["target"] = target_vocab.tokens
    tensors = [(n, model.params[n]) for n in param_names(model.config)]
    _write_container(path, "seq2seq", model.config.to_dict(), vocab, tensors)


def load_model(path) -> tuple[Seq2SeqModel, Vocab | None, Vocab | None]:
    header, tensors = _read_container(path, "seq2seq")
    config = ModelConfig(**header["config"])
    config.validate()
    expected = param_names(config)
    if sorted(tensors) != sorted(expected):
        raise CorruptionError("tensor manifest does not match the model config")
    model = Seq2SeqModel(config, {n: tensors[n] for n in expected})
    vocab = header.get("vocab", {})
    src = _vocab_from_tokens(vocab.get("source"))
    tgt = _vocab_from_tokens(vocab.get("target"))
    return model, src, tgt


def _vocab_from_tokens(tokens):
    if tokens is None:
        return None
    if tokens[: len(RESERVED)] != list(RESERVED):
        raise CorruptionError("vocab in checkpoint lacks the reserved tokens")
    return Vocab(tokens[len(RESERVED):])


def save_policy(policy, path):
    """Store PolicyParams in the same container with kind "policy"."""
    config = {"d_model": policy.U.shape[0], "d_p": policy.d_p}
    tensors = [("U", policy.U), ("V", policy.V),
               ("b", np.array([policy.b], dtype=np.float32))]
    _write_container(path, "policy", config, {}, tensors)


def load_policy(path):
    from .policy_net import PolicyParams

    header, tensors = _read_container(path, "policy")
    if sorted(tensors) != ["U", "V", "b"]:
        raise CorruptionError("policy manifest must contain U, V, b")
    return PolicyParams(U=tensors["U"], V=tensors["V"],
                        b=float(tensors["b"][0]), d_p=int(header["config"]["d_p"]))


# ----------------------------------------------------------------------
# Attention and label dumps
# ----------------------------------------------------------------------

def save_attention(matrices, path):
    """matrices: iterable of AttentionMatrix, written in corpus order."""
    matrices = list(matrices)
    with open(path, "wb") as fh:
        fh.write(MAGIC_ATTENTION)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(matrices)))
        for m in matrices:
            fh.write(struct.pack("<II", m.target_len, m.source_len))
            fh.write(np.ascontiguousarray(m.weights, dtype="<f4").tobytes())


def load_attention(path):
    from .model import AttentionMatrix

    out = []
    with open(path, "rb") as fh:
        _check_magic(fh, MAGIC_ATTENTION)
        _check_version(fh)
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "pair count"))
        for k in range(count):
            ty, tx = struct.unpack("<II", _read_exact(fh, 8, f"pair {k} lengths"))
            raw = _read_exact(fh, ty * tx * 4, f"pair {k} weights")
            w = np.frombuffer(raw, dtype="<f4").reshape(ty, tx).copy()
            out.append(AttentionMatrix(w, source_len=tx, target_len=ty))
    return out


def save_labels(matrices, path):
    """matrices: iterable of PolicyLabelMatrix, written in corpus order."""
    matrices = list(matrices)
    with open(path, "wb") as fh:
        fh.write(MAGIC_LABELS)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(matrices)))
        for m in matrices:
            fh.write(struct.pack("<II", m.target_len, m.source_len))
            fh.write(np.ascontiguousarray(m.labels, dtype=np.uint8).tobytes())


def load_labels(path):
    from .policy_labels import PolicyLabelMatrix

    out = []
    with open(path, "rb") as fh:
        _check_magic(fh, MAGIC_LABELS)
        _check_version(fh)
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "pair count"))
        for k in range(count):
            ty, tx = struct.unpack("<II", _read_exact(fh, 8, f"pair {k} lengths"))
            raw = _read_exact(fh, ty * tx, f"pair {k} labels")
            lab = np.frombuffer(raw, dtype=np.uint8).reshape(ty, tx).copy()
            if lab.max(initial=0) > 1:
                raise CorruptionError(f"pair {k}: labels must be 0/1 bytes")
            out.append(PolicyLabelMatrix(lab, gamma=float("nan"),
                                         source_len=tx, target_len=ty))
    return out
