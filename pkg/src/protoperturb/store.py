"""Little-endian binary container for matrices, labels and key=value metadata.

Layout::

    b"BCLG"  u32 version=1  u32 section_count
    section_count x (8-byte NUL-padded name, u64 offset, u64 length)
    payloads

Payload type follows the section name: ``MATRIX`` or ``M:*`` hold
``u32 rows, u32 cols`` then row-major float64; ``LABELS`` or ``L:*`` hold
``u64 count`` then one u32 per entry; ``META`` holds UTF-8 ``key=value``
lines.  Any other name is kept as raw bytes.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .errors import BadMagic, BadVersion, Overlap, StoreError, Truncated

MAGIC = b"BCLG"
VERSION = 1
_HEADER = struct.Struct("<4sII")
_ENTRY = struct.Struct("<8sQQ")


def section_kind(name: str) -> str:
    if name == "MATRIX" or name.startswith("M:"):
        return "matrix"
    if name == "LABELS" or name.startswith("L:"):
        return "labels"
    if name == "META":
        return "meta"
    return "raw"


def _encode_name(name: str) -> bytes:
    raw = name.encode("ascii", errors="replace")
    if not name.isascii() or not raw or len(raw) > 8 or b"\0" in raw:
        raise StoreError(f"section name {name!r} must be 1-8 ASCII characters")
    return raw.ljust(8, b"\0")


def encode_matrix(m) -> bytes:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2:
        raise StoreError("matrix sections must be 2-D")
    return struct.pack("<II", *m.shape) + np.ascontiguousarray(m, dtype="<f8").tobytes()


def decode_matrix(buf: bytes) -> np.ndarray:
    if len(buf) < 8:
        raise Truncated("matrix header truncated")
    rows, cols = struct.unpack_from("<II", buf)
    if len(buf) != 8 + 8 * rows * cols:
        raise Truncated(f"matrix payload is {len(buf) - 8} bytes, expected {8 * rows * cols}")
    return np.frombuffer(buf, dtype="<f8", offset=8).reshape(rows, cols).astype(np.float64)


def encode_labels(labels) -> bytes:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() > 0xFFFFFFFF):
        raise StoreError("labels must fit in u32")
    return struct.pack("<Q", labels.size) + labels.astype("<u4").tobytes()


def decode_labels(buf: bytes) -> np.ndarray:
    if len(buf) < 8:
        raise Truncated("labels header truncated")
    (n,) = struct.unpack_from("<Q", buf)
    if len(buf) != 8 + 4 * n:
        raise Truncated(f"labels payload is {len(buf) - 8} bytes, expected {4 * n}")
    return np.frombuffer(buf, dtype="<u4", offset=8).astype(np.int64)


def encode_meta(meta: dict) -> bytes:
    lines = []
    for k in sorted(meta):
        v = str(meta[k])
        if "=" in k or "\n" in k or "\n" in v:
            raise StoreError(f"meta entry {k!r} cannot be encoded")
        lines.append(f"{k}={v}\n")
    return "".join(lines).encode("utf-8")


def decode_meta(buf: bytes) -> dict:
    out = {}
    for line in buf.decode("utf-8").splitlines():
        if line:
            k, _, v = line.partition("=")
            out[k] = v
    return out


def _encode(name: str, value) -> bytes:
    kind = section_kind(name)
    if kind == "matrix":
        return encode_matrix(value)
    if kind == "labels":
        return encode_labels(value)
    if kind == "meta":
        return encode_meta(value)
    return bytes(value)


def _decode(name: str, buf: bytes):
    kind = section_kind(name)
    if kind == "matrix":
        return decode_matrix(buf)
    if kind == "labels":
        return decode_labels(buf)
    if kind == "meta":
        return decode_meta(buf)
    return buf


def dumps(sections) -> bytes:
    """Serialize ``(name, value)`` pairs (or a dict) to container bytes."""
    items = list(sections.items()) if isinstance(sections, dict) else list(sections)
    names = [_encode_name(n) for n, _ in items]
    if len(set(names)) != len(names):
        raise StoreError("duplicate section names")
    payloads = [_encode(n, v) for n, v in items]
    offset = _HEADER.size + _ENTRY.size * len(items)
    table = []
    for raw, p in zip(names, payloads):
        table.append(_ENTRY.pack(raw, offset, len(p)))
        offset += len(p)
    return _HEADER.pack(MAGIC, VERSION, len(items)) + b"".join(table) + b"".join(payloads)


def loads(buf: bytes) -> list:
    """Validated parse into ``(name, value)`` pairs in table order."""
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagic("not a BCLG container")
    if len(buf) < _HEADER.size:
        raise Truncated("header truncated")
    _, version, count = _HEADER.unpack_from(buf)
    if version != VERSION:
        raise BadVersion(f"unsupported format version {version}")
    table_end = _HEADER.size + _ENTRY.size * count
    if table_end > len(buf):
        raise Truncated("section table extends beyond end of file")
    entries = []
    for i in range(count):
        raw, off, length = _ENTRY.unpack_from(buf, _HEADER.size + i * _ENTRY.size)
        name = raw.rstrip(b"\0").decode("ascii", errors="replace")
        if off + length > len(buf):
            raise Truncated(f"section {name!r} extends beyond end of file")
        if off < table_end:
            raise Overlap(f"section {name!r} overlaps the header")
        entries.append((name, off, length))
    spans = sorted((off, off + length, name) for name, off, length in entries if length)
    for (_, end_a, a), (start_b, _, b) in zip(spans, spans[1:]):
        if start_b < end_a:
            raise Overlap(f"sections {a!r} and {b!r} overlap")
    return [(name, _decode(name, buf[off:off + length])) for name, off, length in entries]


def save(path, sections) -> None:
    data = dumps(sections)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def load(path) -> list:
    with open(path, "rb") as f:
        return loads(f.read())


def load_dict(path) -> dict:
    return dict(load(path))


# ---------------------------------------------------------------------------
# typed helpers

def save_embeddings(path, rows, labels, meta: dict | None = None) -> None:
    sections = [("MATRIX", rows), ("LABELS", labels)]
    if meta:
        sections.append(("META", meta))
    save(path, sections)


def load_embeddings(path):
    d = load_dict(path)
    return d["MATRIX"], d["LABELS"], d.get("META", {})


def model_sections(params, meta: dict | None = None) -> list:
    a = params.arch
    info = {"kind": "encoder", "input_dim": a.input_dim, "embed_dim": a.embed_dim,
            "hidden": ",".join(map(str, a.hidden)), "logit_mode": a.logit_mode,
            "logit_tau": repr(float(a.logit_tau)), "relu_output": int(a.relu_output),
            "layers": len(params.weights)}
    info.update(meta or {})
    sections = [("META", info), ("L:CLSID", params.class_ids)]
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        sections += [(f"M:W{i}", w), (f"M:B{i}", b[None, :])]
    sections.append(("M:CLS", params.classifier))
    return sections


def save_model(path, params, meta: dict | None = None) -> None:
    save(path, model_sections(params, meta))


def load_model(path):
    from .encoder import Architecture, EncoderParams

    d = load_dict(path)
    try:
        m = d["META"]
        hidden = tuple(int(h) for h in m["hidden"].split(",") if h)
        arch = Architecture(int(m["input_dim"]), hidden, int(m["embed_dim"]), m["logit_mode"],
                            float(m["logit_tau"]), bool(int(m["relu_output"])))
        n = int(m["layers"])
        weights = [d[f"M:W{i}"] for i in range(n)]
        biases = [d[f"M:B{i}"][0] for i in range(n)]
        return EncoderParams(arch, weights, biases, d["M:CLS"], d["L:CLSID"]), m
    except KeyError as e:
        raise StoreError(f"checkpoint missing {e}") from None


def save_prototypes(path, protos, meta: dict | None = None) -> None:
    save(path, [("META", {"kind": "prototypes", "tag": protos.tag.value, **(meta or {})}),
                ("MATRIX", protos.protos)])


def load_prototypes(path):
    from .prototypes import PrototypeSet

    d = load_dict(path)
    return PrototypeSet(d["MATRIX"], d["META"]["tag"])


def save_perturbation(path, old, pseudo, meta: dict | None = None) -> None:
    """Old prototypes, pseudo-old prototypes and their difference in one file."""
    save(path, [("META", {"kind": "perturbation", **(meta or {})}), ("M:OLD", old.protos),
                ("M:PSEUDO", pseudo.protos), ("M:DELTA", pseudo.protos - old.protos)])
