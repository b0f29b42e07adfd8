"""Paired mini-batch iteration over a neural dataset and an embedding bank."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .bank import EmbeddingBank
from .ingest import NeuralDataset


def batch_iter(
    dataset: NeuralDataset,
    bank: EmbeddingBank,
    ids: list[str],
    batch_size: int,
    rng=None,
    shuffle: bool = False,
) -> Iterator[tuple[np.ndarray, np.ndarray, list[str]]]:
    """Yield aligned (neural, embedding, ids) batches covering `ids` once.

    Pairing alignment is preserved within every batch; the final short
    batch is emitted rather than dropped. Shuffling consumes one
    permutation from `rng`, so batch order is a pure function of the
    generator state.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    bank_ids = set(bank.item_ids)
    missing = [i for i in ids if i not in bank_ids]
    if missing:
        raise KeyError(f"ids present in dataset but absent from bank: {missing[:5]}")
    neural = dataset.rows_for(ids)
    embed = bank.rows_for(ids)
    order = np.arange(len(ids))
    if shuffle:
        if rng is None:
            raise ValueError("shuffle requires an Rng")
        order = rng.permutation(len(ids))
    for start in range(0, len(ids), batch_size):
        sel = order[start : start + batch_size]
        yield neural[sel], embed[sel], [ids[i] for i in sel]
