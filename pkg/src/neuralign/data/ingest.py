"""Neural-array ingestion: trial averaging, channel selection, z-scoring.

The engine ingests preprocessed arrays (already filtered/epoched/
downsampled); these operations only raise SNR by repetition averaging,
restrict channels to a configured keep-list, and standardize per channel.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bank import EmbeddingBank, read_bank, write_bank

ZSCORE_EPS = 1e-8


@dataclass
class NeuralDataset:
    """One averaged trial per (subject, image), shape (n, C, T)."""

    subject_id: str
    channel_names: list[str]
    trials: np.ndarray
    image_ids: list[str]
    sampling_rate_hz: float = 0.0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.trials.ndim != 3:
            raise ValueError(f"trials must be (n, C, T), got shape {self.trials.shape}")
        if len(self.image_ids) != self.trials.shape[0]:
            raise ValueError("one image id per trial row required")
        if len(self.channel_names) != self.trials.shape[1]:
            raise ValueError("one name per channel required")

    @property
    def num_channels(self) -> int:
        return self.trials.shape[1]

    @property
    def num_timepoints(self) -> int:
        return self.trials.shape[2]

    def rows_for(self, ids: list[str]) -> np.ndarray:
        index = {iid: i for i, iid in enumerate(self.image_ids)}
        try:
            sel = [index[i] for i in ids]
        except KeyError as exc:
            raise KeyError(f"image id {exc.args[0]!r} not present in dataset") from None
        return self.trials[sel]


def average_repetitions(
    trials: np.ndarray,
    trial_image_ids: list[str],
    expected_ids: list[str] | None = None,
) -> tuple[np.ndarray, list[str]]:
    """Average repeated presentations of each image into one row.

    Output rows are ordered by sorted image id, so the result is invariant
    to the order trials arrive in. `expected_ids` lists images that must
    be present; an image with zero trials is an error.
    """
    if trials.shape[0] != len(trial_image_ids):
        raise ValueError("one image id per trial required")
    groups: dict[str, list[int]] = {}
    for i, iid in enumerate(trial_image_ids):
        groups.setdefault(iid, []).append(i)
    if expected_ids is not None:
        missing = [iid for iid in expected_ids if iid not in groups]
        if missing:
            raise ValueError(f"images with zero trials: {missing[:5]}")
    ids = sorted(groups)
    out = np.stack([trials[groups[iid]].mean(axis=0) for iid in ids])
    return out.astype(trials.dtype, copy=False), ids


def average_dataset(ds: NeuralDataset, expected_ids: list[str] | None = None) -> NeuralDataset:
    """Collapse a raw multi-repetition dataset to one trial per image."""
    trials, ids = average_repetitions(ds.trials, ds.image_ids, expected_ids)
    return NeuralDataset(
        subject_id=ds.subject_id,
        channel_names=list(ds.channel_names),
        trials=trials,
        image_ids=ids,
        sampling_rate_hz=ds.sampling_rate_hz,
        extra=dict(ds.extra),
    )


def zscore_channels(x: np.ndarray, eps: float = ZSCORE_EPS) -> np.ndarray:
    """Standardize each channel over all trials and time points.

    A constant (dead) channel maps to zeros via the eps guard instead of
    erroring.
    """
    if x.ndim != 3:
        raise ValueError(f"expected (n, C, T), got shape {x.shape}")
    n, c, t = x.shape
    if n * t < 2:
        raise ValueError("need at least two samples per channel to z-score")
    mean = x.mean(axis=(0, 2), keepdims=True)
    var = ((x - mean) ** 2).mean(axis=(0, 2), keepdims=True)
    return ((x - mean) / np.sqrt(var + eps)).astype(x.dtype, copy=False)


def select_channels(x: np.ndarray, names: list[str], keep_list: list[str]) -> np.ndarray:
    """Subset channels, preserving keep_list order."""
    index = {name: i for i, name in enumerate(names)}
    unknown = [name for name in keep_list if name not in index]
    if unknown:
        raise ValueError(f"unknown channel names: {unknown}")
    return x[:, [index[name] for name in keep_list], :]


def write_neural(ds: NeuralDataset, path: str | Path) -> None:
    """Store a neural dataset in the NEB1 container, rows flattened to C*T."""
    n, c, t = ds.trials.shape
    extra = dict(ds.extra)
    extra.update(
        kind="neural",
        subject_id=ds.subject_id,
        channels=c,
        time_points=t,
        channel_names=list(ds.channel_names),
        sampling_rate_hz=ds.sampling_rate_hz,
    )
    bank = EmbeddingBank(
        backbone_name=f"neural/{ds.subject_id}",
        layer_index=1,
        num_layers=2,
        pooling_tag="raw",
        item_ids=list(ds.image_ids),
        matrix=ds.trials.reshape(n, c * t),
        extra=extra,
    )
    write_bank(bank, path)


def read_neural(path: str | Path) -> NeuralDataset:
    bank = read_bank(path)
    extra = bank.extra
    if extra.get("kind") != "neural":
        raise ValueError(f"{path}: not a neural container (kind={extra.get('kind')!r})")
    c, t = extra["channels"], extra["time_points"]
    passthrough = {
        k: v
        for k, v in extra.items()
        if k not in ("kind", "subject_id", "channels", "time_points",
                     "channel_names", "sampling_rate_hz")
    }
    return NeuralDataset(
        subject_id=extra["subject_id"],
        channel_names=list(extra["channel_names"]),
        trials=bank.matrix.reshape(bank.count, c, t),
        image_ids=list(bank.item_ids),
        sampling_rate_hz=extra.get("sampling_rate_hz", 0.0),
        extra=passthrough,
    )
