"""Single-file binary checkpoints.

Layout (little-endian)::

    b"CNLI" | u32 version | u32 n + config text (UTF-8, key=value lines)
    repeated: u32 n + name (UTF-8) | u32 rank | u64 dims[rank] | f64 values
    u64 checksum: first 8 bytes of BLAKE2b over everything before it

Tensors are named ``param/...``, ``bn/...``, ``adam/m/...``, ``adam/v/...``,
``embed/<token>`` (frozen rows) and ``oov/<token>`` (sampled rows).
"""
from __future__ import annotations

import hashlib
import io
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .config import ModelConfig, parse_key_values
from .embeddings import EmbeddingTable
from .model import NLIModel
from .training import Adam

MAGIC = b"CNLI"
VERSION = 1


class CheckpointError(Exception):
    pass


class CheckpointIntegrityError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


def _checksum(payload: bytes) -> bytes:
    return hashlib.blake2b(payload, digest_size=8).digest()


def _write_tensor(buf: io.BytesIO, name: str, arr: np.ndarray) -> None:
    raw = name.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<I", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def encode(config_text: str, tensors: list[tuple[str, np.ndarray]]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    text = config_text.encode("utf-8")
    buf.write(struct.pack("<II", VERSION, len(text)))
    buf.write(text)
    for name, arr in tensors:
        _write_tensor(buf, name, np.asarray(arr))
    payload = buf.getvalue()
    return payload + _checksum(payload)


def decode(blob: bytes) -> tuple[str, dict[str, np.ndarray]]:
    if len(blob) < 20 or blob[:4] != MAGIC:
        raise CheckpointIntegrityError("not a checkpoint file (bad magic or too short)")
    payload, stored = blob[:-8], blob[-8:]
    if _checksum(payload) != stored:
        raise CheckpointIntegrityError("checksum mismatch: file is corrupted or truncated")
    version, text_len = struct.unpack_from("<II", payload, 4)
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint format version {version}, this build reads {VERSION}")
    pos = 12
    text = payload[pos:pos + text_len].decode("utf-8")
    pos += text_len
    tensors: dict[str, np.ndarray] = {}
    try:
        while pos < len(payload):
            (n,) = struct.unpack_from("<I", payload, pos)
            name = payload[pos + 4:pos + 4 + n].decode("utf-8")
            pos += 4 + n
            (rank,) = struct.unpack_from("<I", payload, pos)
            dims = struct.unpack_from(f"<{rank}Q", payload, pos + 4)
            pos += 4 + 8 * rank
            count = int(np.prod(dims, dtype=np.int64))
            if pos + 8 * count > len(payload):
                raise CheckpointIntegrityError(f"tensor {name!r} runs past end of file")
            tensors[name] = np.frombuffer(payload, dtype="<f8", count=count, offset=pos).reshape(dims).copy()
            pos += 8 * count
    except (struct.error, UnicodeDecodeError) as exc:
        raise CheckpointIntegrityError(f"malformed tensor record: {exc}") from None
    return text, tensors


def _state_lines(model: NLIModel, optimizer: Optional[Adam]) -> str:
    t = model.table
    lines = [f"state.embed_rows={t.n_frozen - 1}", f"state.oov_rows={len(t.oov_tokens)}"]
    if optimizer is not None:
        lines.append(f"state.adam_step={optimizer.t}")
    return "".join(line + "\n" for line in lines)


def to_bytes(model: NLIModel, optimizer: Optional[Adam] = None) -> bytes:
    tensors: list[tuple[str, np.ndarray]] = []
    params = model.named_parameters()
    for name, p in params.items():
        tensors.append((f"param/{name}", p.data))
    for bn in model.norm_states():
        tensors.append((f"bn/{bn.name}/running_mean", bn.running_mean))
        tensors.append((f"bn/{bn.name}/running_var", bn.running_var))
    if optimizer is not None:
        for name in params:
            tensors.append((f"adam/m/{name}", optimizer.m[name]))
            tensors.append((f"adam/v/{name}", optimizer.v[name]))
    t = model.table
    matrix = t.matrix
    for i in range(1, t.n_frozen):
        tensors.append((f"embed/{t.tokens[i]}", matrix[i]))
    for i in range(t.n_frozen, len(t.tokens)):
        tensors.append((f"oov/{t.tokens[i]}", matrix[i]))
    return encode(model.config.to_text() + _state_lines(model, optimizer), tensors)


def save_checkpoint(model: NLIModel, path: str | Path, optimizer: Optional[Adam] = None) -> None:
    blob = to_bytes(model, optimizer)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)


def from_bytes(blob: bytes) -> tuple[NLIModel, Optional[Adam]]:
    text, tensors = decode(blob)
    try:
        return _rebuild(text, tensors)
    except KeyError as exc:
        raise CheckpointIntegrityError(f"missing tensor {exc}") from None


def _rebuild(text: str, tensors: dict[str, np.ndarray]) -> tuple[NLIModel, Optional[Adam]]:
    raw = parse_key_values(text)
    state = {k: v for k, v in raw.items() if k.startswith("state.")}
    config = ModelConfig.from_text("\n".join(line for line in text.splitlines() if not line.startswith("state.")))
    dt = config.np_dtype

    table = EmbeddingTable(config.embed_dim, oov_seed=config.oov_seed, oov_sigma=config.oov_sigma)
    for name, arr in tensors.items():
        if name.startswith("embed/"):
            table.add_frozen(name[len("embed/"):], arr)
    for name, arr in tensors.items():
        if name.startswith("oov/"):
            table.restore_oov(name[len("oov/"):], arr)

    model = NLIModel(config, table)
    params = model.named_parameters()
    for name, p in params.items():
        key = f"param/{name}"
        if key not in tensors or tensors[key].shape != p.shape:
            raise CheckpointIntegrityError(f"missing or misshapen tensor {key}")
        p.data[...] = tensors[key].astype(dt)
    for bn in model.norm_states():
        bn.running_mean = tensors[f"bn/{bn.name}/running_mean"].astype(dt)
        bn.running_var = tensors[f"bn/{bn.name}/running_var"].astype(dt)

    optimizer = None
    if "state.adam_step" in state:
        optimizer = Adam.for_model(model)
        optimizer.t = int(state["state.adam_step"])
        for name in params:
            optimizer.m[name] = tensors[f"adam/m/{name}"].astype(dt)
            optimizer.v[name] = tensors[f"adam/v/{name}"].astype(dt)
    return model, optimizer


def load_checkpoint(path: str | Path) -> tuple[NLIModel, Optional[Adam]]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    return from_bytes(blob)
