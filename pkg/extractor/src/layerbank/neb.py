"""NEB1 bank writer.

Produces the alignment engine's embedding-bank container: ``NEB1`` magic,
little-endian uint32 version (=1) and header length, UTF-8 JSON header
(sorted keys, compact separators), then the matrix as little-endian
row-major float32. Kept dependency-free of the engine itself; the file
format is the interface between the two packages.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"NEB1"
VERSION = 1


def relative_depth(layer_index: int, num_layers: int) -> float:
    if num_layers < 2:
        raise ValueError(f"num_layers must be >= 2, got {num_layers}")
    if not 1 <= layer_index <= num_layers:
        raise ValueError(f"layer index {layer_index} outside [1, {num_layers}]")
    return (layer_index - 1) / (num_layers - 1)


def write_bank(
    path: str | Path,
    backbone_name: str,
    layer_index: int,
    num_layers: int,
    pooling_tag: str,
    item_ids: list[str],
    matrix: np.ndarray,
    extra: dict | None = None,
) -> None:
    if matrix.ndim != 2:
        raise ValueError(f"bank matrix must be 2-D, got shape {matrix.shape}")
    if len(item_ids) != matrix.shape[0]:
        raise ValueError(
            f"{len(item_ids)} item ids for {matrix.shape[0]} matrix rows"
        )
    if len(set(item_ids)) != len(item_ids):
        raise ValueError("item ids must be unique")
    header = dict(extra or {})
    header.update(
        backbone_name=backbone_name,
        layer_index=layer_index,
        num_layers=num_layers,
        pooling_tag=pooling_tag,
        relative_depth=relative_depth(layer_index, num_layers),
        dim=int(matrix.shape[1]),
        count=int(matrix.shape[0]),
        dtype="f32",
        item_ids=list(item_ids),
    )
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = np.ascontiguousarray(matrix, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)
