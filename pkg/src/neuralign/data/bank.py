"""NEB1 binary container for embedding banks and neural arrays.

Layout: 4-byte magic ``NEB1`` | uint32 version (=1) | uint32 header length |
UTF-8 JSON header | little-endian row-major float32 payload. The JSON
header keeps metadata extensible; the raw payload keeps loading trivial in
any language. Neural arrays reuse the same container with shape
(count, C*T) plus ``channels``/``time_points`` keys in the header, so one
reader serves both modalities.

Writes are deterministic (sorted header keys, fixed separators), so
rewriting a loaded bank reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"NEB1"
VERSION = 1

_CATEGORIES = ("animals", "food", "vehicles", "tools", "clothing", "others")


class BankFormatError(ValueError):
    """Base class for malformed NEB1 files."""


class BadMagicError(BankFormatError):
    pass


class VersionMismatchError(BankFormatError):
    pass


class TruncatedPayloadError(BankFormatError):
    pass


class PayloadSizeError(BankFormatError):
    """Header row count and payload byte count disagree."""


@dataclass
class EmbeddingBank:
    """Per-backbone, per-layer matrix of pooled visual embeddings.

    `relative_depth` is stored alongside the layer indices and re-derived
    on load; a file whose stored depth disagrees with (l-1)/(L-1) is
    rejected.
    """

    backbone_name: str
    layer_index: int
    num_layers: int
    pooling_tag: str
    item_ids: list[str]
    matrix: np.ndarray
    relative_depth: float = field(default=None)  # type: ignore[assignment]
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.relative_depth is None:
            self.relative_depth = compute_relative_depth(self.layer_index, self.num_layers)
        self.validate()

    def validate(self) -> None:
        if self.matrix.ndim != 2:
            raise ValueError(f"bank matrix must be 2-D, got shape {self.matrix.shape}")
        if len(self.item_ids) != self.matrix.shape[0]:
            raise ValueError(
                f"bank has {len(self.item_ids)} item ids but {self.matrix.shape[0]} rows"
            )
        if len(set(self.item_ids)) != len(self.item_ids):
            raise ValueError("bank item ids are not unique")
        expected = compute_relative_depth(self.layer_index, self.num_layers)
        if self.relative_depth != expected:
            raise ValueError(
                f"stored relative depth {self.relative_depth} != (l-1)/(L-1) = {expected}"
            )

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def count(self) -> int:
        return self.matrix.shape[0]

    def rows_for(self, ids: list[str]) -> np.ndarray:
        """Rows for the requested ids, in request order."""
        index = {iid: i for i, iid in enumerate(self.item_ids)}
        try:
            sel = [index[i] for i in ids]
        except KeyError as exc:
            raise KeyError(f"item id {exc.args[0]!r} not present in bank") from None
        return self.matrix[sel]


def compute_relative_depth(layer_index: int, num_layers: int) -> float:
    if num_layers < 2:
        raise ValueError(f"num_layers must be >= 2, got {num_layers}")
    if not 1 <= layer_index <= num_layers:
        raise ValueError(f"layer index {layer_index} outside [1, {num_layers}]")
    return (layer_index - 1) / (num_layers - 1)


def write_bank(bank: EmbeddingBank, path: str | Path) -> None:
    bank.validate()
    header = dict(bank.extra)
    header.update(
        backbone_name=bank.backbone_name,
        layer_index=bank.layer_index,
        num_layers=bank.num_layers,
        pooling_tag=bank.pooling_tag,
        relative_depth=bank.relative_depth,
        dim=int(bank.matrix.shape[1]),
        count=int(bank.matrix.shape[0]),
        dtype="f32",
        item_ids=list(bank.item_ids),
    )
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = np.ascontiguousarray(bank.matrix, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)


def read_bank(path: str | Path) -> EmbeddingBank:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}")
    version, header_len = struct.unpack("<II", raw[4:12])
    if version != VERSION:
        raise VersionMismatchError(f"{path}: unsupported version {version}")
    if len(raw) < 12 + header_len:
        raise TruncatedPayloadError(f"{path}: header extends past end of file")
    try:
        header = json.loads(raw[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BankFormatError(f"{path}: unreadable header: {exc}") from exc
    if header.get("dtype") != "f32":
        raise BankFormatError(f"{path}: unsupported dtype {header.get('dtype')!r}")
    count, dim = header["count"], header["dim"]
    payload = raw[12 + header_len :]
    expected = count * dim * 4
    if len(payload) < expected:
        raise TruncatedPayloadError(
            f"{path}: payload holds {len(payload)} bytes, header promises {expected}"
        )
    if len(payload) != expected:
        raise PayloadSizeError(
            f"{path}: payload holds {len(payload)} bytes, header promises {expected}"
        )
    matrix = np.frombuffer(payload, dtype="<f4").reshape(count, dim).copy()
    known = {
        "backbone_name", "layer_index", "num_layers", "pooling_tag",
        "relative_depth", "dim", "count", "dtype", "item_ids",
    }
    extra = {k: v for k, v in header.items() if k not in known}
    try:
        bank = EmbeddingBank(
            backbone_name=header["backbone_name"],
            layer_index=header["layer_index"],
            num_layers=header["num_layers"],
            pooling_tag=header["pooling_tag"],
            relative_depth=header["relative_depth"],
            item_ids=list(header["item_ids"]),
            matrix=matrix,
            extra=extra,
        )
    except (KeyError, ValueError) as exc:
        raise BankFormatError(f"{path}: invalid header: {exc}") from exc
    return bank
