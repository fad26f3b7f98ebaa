"""On-disk activation bundles: a JSON manifest plus one binary matrix file per sequence.

Binary layout (all little-endian)::

    offset 0   6 bytes   magic b"LVAR1\\0"
    offset 6   u32       format version (1)
    offset 10  u32       n_layers
    offset 14  u32       T (rows / token positions)
    offset 18  u32       d (hidden dimension)
    offset 22  f32[n_layers * T * d]   layer-major, then row-major

The manifest (``manifest.json``, UTF-8) lists each sequence with its parallel-corpus
id, language, token strings, file name, declared shape and optional covariates
such as ``depth``.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .core import TokenMatrix

MAGIC = b"LVAR1\x00"
VERSION = 1
HEADER = struct.Struct("<4I")
HEADER_SIZE = len(MAGIC) + HEADER.size
MANIFEST_NAME = "manifest.json"


class BundleError(ValueError):
    pass


class BundleFormatError(BundleError):
    def __init__(self, path, offset: int, message: str):
        super().__init__(f"{path}: {message} at offset {offset}")
        self.offset = offset


class BundleDimensionError(BundleError):
    def __init__(self, seq_key: str, message: str):
        super().__init__(f"sequence {seq_key}: {message}")
        self.seq_key = seq_key


class BundleTruncatedError(BundleError):
    pass


class BundleValueError(BundleError):
    pass


@dataclass(frozen=True)
class SequenceEntry:
    id: str
    language: str
    tokens: tuple[str, ...]
    n_layers: int
    T: int
    d: int
    file: str = ""
    depth: float | None = None
    extra: dict[str, Any] = field(default_factory=dict, compare=False)

    @property
    def key(self) -> str:
        return f"{self.id}[{self.language}]"

    def to_json(self) -> dict[str, Any]:
        out = {
            "id": self.id,
            "language": self.language,
            "file": self.file or default_file_name(self.id, self.language),
            "n_layers": self.n_layers,
            "T": self.T,
            "d": self.d,
            "tokens": list(self.tokens),
        }
        if self.depth is not None:
            out["depth"] = self.depth
        out.update(self.extra)
        return out

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "SequenceEntry":
        known = {"id", "language", "file", "n_layers", "T", "d", "tokens", "depth"}
        missing = {"id", "language", "file", "n_layers", "T", "d", "tokens"} - obj.keys()
        if missing:
            raise BundleError(f"manifest entry {obj.get('id')!r} lacks fields {sorted(missing)}")
        depth = obj.get("depth")
        return cls(
            id=str(obj["id"]),
            language=str(obj["language"]),
            tokens=tuple(str(t) for t in obj["tokens"]),
            n_layers=int(obj["n_layers"]),
            T=int(obj["T"]),
            d=int(obj["d"]),
            file=str(obj["file"]),
            depth=None if depth is None else float(depth),
            extra={k: v for k, v in obj.items() if k not in known},
        )


def default_file_name(seq_id: str, language: str) -> str:
    safe = "".join(c if c.isalnum() or c in "-_." else "_" for c in seq_id)
    return f"{safe}.{language}.bin"


@dataclass
class ActivationBundle:
    """Sequences keyed by ``(id, language)`` with float32 arrays of shape ``(n_layers, T, d)``."""

    entries: list[SequenceEntry]
    arrays: dict[tuple[str, str], np.ndarray]
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            k = (e.id, e.language)
            if k in seen:
                raise BundleError(f"duplicate sequence {e.key}")
            seen.add(k)
            if k not in self.arrays:
                raise BundleError(f"no matrix for sequence {e.key}")
            _check_entry_shape(e, self.arrays[k].shape)
        self._index = {(e.id, e.language): e for e in self.entries}

    @property
    def languages(self) -> list[str]:
        return list(dict.fromkeys(e.language for e in self.entries))

    @property
    def ids(self) -> list[str]:
        return list(dict.fromkeys(e.id for e in self.entries))

    @property
    def n_layers(self) -> int:
        counts = {e.n_layers for e in self.entries}
        if len(counts) != 1:
            raise BundleError(f"sequences disagree on layer count: {sorted(counts)}")
        return counts.pop()

    def entry(self, seq_id: str, language: str) -> SequenceEntry:
        try:
            return self._index[(seq_id, language)]
        except KeyError:
            raise KeyError(f"no sequence {seq_id}[{language}]") from None

    def matrix(self, seq_id: str, language: str, layer: int) -> TokenMatrix:
        e = self.entry(seq_id, language)
        return TokenMatrix(self.arrays[(seq_id, language)][layer], e.tokens, layer)


def _check_entry_shape(e: SequenceEntry, shape: tuple[int, ...]) -> None:
    if tuple(shape) != (e.n_layers, e.T, e.d):
        raise BundleDimensionError(
            e.key, f"manifest declares (n_layers, T, d) = {(e.n_layers, e.T, e.d)}, matrix has {tuple(shape)}"
        )
    if len(e.tokens) != e.T:
        raise BundleDimensionError(e.key, f"{len(e.tokens)} tokens for T={e.T}")


def encode_matrix(array: np.ndarray) -> bytes:
    arr = np.asarray(array)
    if arr.ndim != 3:
        raise ValueError(f"expected (n_layers, T, d), got shape {arr.shape}")
    header = MAGIC + HEADER.pack(VERSION, *arr.shape)
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def read_matrix_file(path: Path, entry: SequenceEntry) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        if len(data) < len(MAGIC) and MAGIC.startswith(data):
            raise BundleTruncatedError(f"{path}: file ends inside the magic ({len(data)} bytes)")
        raise BundleFormatError(path, 0, f"bad magic {data[:len(MAGIC)]!r}")
    if len(data) < HEADER_SIZE:
        raise BundleTruncatedError(f"{path}: header truncated ({len(data)} of {HEADER_SIZE} bytes)")
    version, n_layers, t, d = HEADER.unpack_from(data, len(MAGIC))
    if version != VERSION:
        raise BundleFormatError(path, len(MAGIC), f"unsupported version {version}")
    if (n_layers, t, d) != (entry.n_layers, entry.T, entry.d):
        raise BundleDimensionError(
            entry.key,
            f"manifest declares (n_layers, T, d) = {(entry.n_layers, entry.T, entry.d)}, "
            f"file {Path(path).name} has {(n_layers, t, d)}",
        )
    expected = HEADER_SIZE + 4 * n_layers * t * d
    if len(data) < expected:
        raise BundleTruncatedError(f"{path}: payload truncated ({len(data)} of {expected} bytes)")
    if len(data) > expected:
        raise BundleFormatError(path, expected, f"{len(data) - expected} unexpected trailing bytes")
    arr = np.frombuffer(data, dtype="<f4", offset=HEADER_SIZE).reshape(n_layers, t, d)
    bad = ~np.isfinite(arr)
    if bad.any():
        layer, row, col = (int(v) for v in np.argwhere(bad)[0])
        raise BundleValueError(f"sequence {entry.key}: non-finite value at layer {layer}, row {row}, column {col}")
    return arr


def read_bundle(path: str | os.PathLike) -> ActivationBundle:
    root = Path(path)
    manifest_path = root / MANIFEST_NAME if root.is_dir() else root
    root = manifest_path.parent
    try:
        doc = json.loads(manifest_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise BundleError(f"no manifest at {manifest_path}") from None
    except json.JSONDecodeError as exc:
        raise BundleError(f"{manifest_path}: invalid JSON ({exc})") from None
    if doc.get("format") != "lvar" or doc.get("version") != VERSION:
        raise BundleError(f"{manifest_path}: not an lvar v{VERSION} manifest")
    entries = [SequenceEntry.from_json(obj) for obj in doc.get("sequences", [])]
    arrays = {}
    for e in entries:
        file_path = root / e.file
        if not file_path.is_file():
            raise BundleError(f"sequence {e.key}: missing matrix file {e.file}")
        if len(e.tokens) != e.T:
            raise BundleDimensionError(e.key, f"{len(e.tokens)} tokens for T={e.T}")
        arrays[(e.id, e.language)] = read_matrix_file(file_path, e)
    meta = {k: v for k, v in doc.items() if k not in ("format", "version", "sequences")}
    return ActivationBundle(entries, arrays, meta)


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_bundle(bundle: ActivationBundle, path: str | os.PathLike) -> Path:
    """Write matrices then the manifest into directory ``path``; returns the manifest path."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    docs = []
    for e in bundle.entries:
        arr = bundle.arrays[(e.id, e.language)]
        if not np.all(np.isfinite(arr)):
            raise BundleValueError(f"sequence {e.key}: refusing to write non-finite values")
        doc = e.to_json()
        _atomic_write(root / doc["file"], encode_matrix(arr))
        docs.append(doc)
    manifest = {"format": "lvar", "version": VERSION, **bundle.meta, "sequences": docs}
    out = root / MANIFEST_NAME
    _atomic_write(out, (json.dumps(manifest, indent=1, ensure_ascii=False) + "\n").encode("utf-8"))
    return out


def make_bundle(
    items: Iterable[tuple[str, str, np.ndarray, Iterable[str], float | None]],
    **meta: Any,
) -> ActivationBundle:
    """Build a bundle from ``(id, language, array, tokens, depth)`` tuples.

    Arrays are stored as float32 of shape ``(n_layers, T, d)``.
    """
    entries, arrays = [], {}
    for seq_id, language, array, tokens, depth in items:
        arr = np.asarray(array, dtype=np.float32)
        entries.append(SequenceEntry(seq_id, language, tuple(tokens), *arr.shape,
                                     file=default_file_name(seq_id, language), depth=depth))
        arrays[(seq_id, language)] = arr
    return ActivationBundle(entries, arrays, dict(meta))
