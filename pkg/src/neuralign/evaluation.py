"""Zero-shot retrieval metrics, layer sweeps, and scaling regression.

Retrieval ranks candidates by cosine similarity with deterministic
tie-breaking (lowest candidate index wins). Concept accuracy counts top-5
retrievals whose concept category matches the query's, excluding the
ground-truth image itself from the matches, normalized by 5M. The layer
sweep trains one model per (layer, seed) and summarizes best-vs-final
accuracy; the scaling regression fits accuracy against ln(parameter
count) with an exact Student-t slope test.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import threadpoolctl
from scipy.special import betainc

from . import tensor as T
from .alignment import ModelCheckpoint, TrainConfig, encode_eval, fit
from .data.bank import EmbeddingBank
from .data.ingest import NeuralDataset
from .data.manifest import PairManifest


@dataclass
class RetrievalReport:
    subject_id: str
    backbone: str
    layer_index: int
    relative_depth: float
    top1: float
    top5: float
    concept_accuracy: float
    num_queries: int

    def __post_init__(self):
        if not 0 <= self.top1 <= self.top5 <= 1:
            raise ValueError(f"need 0 <= top1 <= top5 <= 1, got {self.top1}, {self.top5}")
        if not 0 <= self.concept_accuracy <= 1:
            raise ValueError(f"concept accuracy outside [0,1]: {self.concept_accuracy}")

    def to_dict(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "backbone": self.backbone,
            "layer_index": self.layer_index,
            "relative_depth": self.relative_depth,
            "top1": self.top1,
            "top5": self.top5,
            "concept_accuracy": self.concept_accuracy,
            "num_queries": self.num_queries,
        }


@dataclass
class SweepResult:
    reports: list[RetrievalReport]
    best_layer: int
    best_top1: float
    final_top1: float

    @property
    def delta(self) -> float:
        return self.best_top1 - self.final_top1

    def to_dict(self) -> dict:
        return {
            "reports": [r.to_dict() for r in self.reports],
            "best_layer": self.best_layer,
            "best_top1": self.best_top1,
            "final_top1": self.final_top1,
            "delta": self.delta,
        }


@dataclass
class RegressionResult:
    slope: float
    intercept: float
    r_squared: float
    p_value: float
    n_points: int

    def to_dict(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
            "p_value": self.p_value,
            "n_points": self.n_points,
        }


def retrieve_topk(queries: np.ndarray, candidates: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k most cosine-similar candidates per query, descending.

    Ties break toward the lowest candidate index (stable sort on negated
    similarities), so rankings are deterministic.
    """
    if k < 1 or k > candidates.shape[0]:
        raise ValueError(f"k must be in [1, {candidates.shape[0]}], got {k}")
    qn, _ = T.l2_normalize(queries)
    cn, _ = T.l2_normalize(candidates)
    sims = T.matmul(qn, cn.T)
    order = np.argsort(-sims, axis=1, kind="stable")
    return order[:, :k]


def topk_accuracy(rankings: np.ndarray, truth: np.ndarray, k: int) -> float:
    """Fraction of queries whose true index appears in the top k."""
    if rankings.shape[0] != len(truth):
        raise ValueError("one ground-truth index per query required")
    if k > rankings.shape[1]:
        raise ValueError(f"rankings only hold top-{rankings.shape[1]}, asked for k={k}")
    hits = (rankings[:, :k] == np.asarray(truth)[:, None]).any(axis=1)
    return float(hits.mean())


def concept_accuracy(
    rankings: np.ndarray,
    candidate_ids: list[str],
    truth_ids: list[str],
    image_to_concept: dict[str, str],
    concept_to_category: dict[str, str],
) -> float:
    """Category-match rate in the top 5, ground-truth image excluded.

    For each query, counts retrieved items among the top 5 whose concept
    category equals the query's category and whose image id differs from
    the ground-truth image id; the total is normalized by 5M.
    """
    if rankings.shape[1] < 5:
        raise ValueError("concept accuracy needs top-5 rankings")
    m = rankings.shape[0]
    if len(truth_ids) != m:
        raise ValueError("one ground-truth id per query required")

    def category_of(image_id: str) -> str:
        concept = image_to_concept.get(image_id)
        if concept is None:
            raise KeyError(f"image {image_id!r} has no concept mapping")
        cat = concept_to_category.get(concept)
        if cat is None:
            raise KeyError(f"concept {concept!r} has no category label")
        return cat

    matched = 0
    for q in range(m):
        truth_id = truth_ids[q]
        query_cat = category_of(truth_id)
        for j in rankings[q, :5]:
            retrieved_id = candidate_ids[j]
            if retrieved_id == truth_id:
                continue
            if category_of(retrieved_id) == query_cat:
                matched += 1
    return matched / (5 * m)


def relative_depth(layer_index: int, num_layers: int) -> float:
    """Normalized layer position (l-1)/(L-1)."""
    if num_layers < 2:
        raise ValueError(f"num_layers must be >= 2, got {num_layers}")
    if not 1 <= layer_index <= num_layers:
        raise ValueError(f"layer {layer_index} outside [1, {num_layers}]")
    return (layer_index - 1) / (num_layers - 1)


def evaluate_checkpoint(
    ckpt: ModelCheckpoint,
    dataset: NeuralDataset,
    bank: EmbeddingBank,
    manifest: PairManifest,
    split: str = "test",
) -> RetrievalReport:
    """Project the split's pairs and score 1-in-M retrieval."""
    ids = manifest.image_ids(split)
    if not ids:
        raise ValueError(f"manifest has no {split!r} images")
    neural = dataset.rows_for(ids)
    embed = bank.rows_for(ids)
    v, w = encode_eval(ckpt, neural, embed)
    k = min(5, len(ids))
    rankings = retrieve_topk(v, w, k)
    truth = np.arange(len(ids))
    return RetrievalReport(
        subject_id=dataset.subject_id,
        backbone=bank.backbone_name,
        layer_index=bank.layer_index,
        relative_depth=bank.relative_depth,
        top1=topk_accuracy(rankings, truth, 1),
        top5=topk_accuracy(rankings, truth, k),
        concept_accuracy=concept_accuracy(
            rankings, ids, ids,
            manifest.image_to_concept(), manifest.concept_to_category(),
        ) if k == 5 else 0.0,
        num_queries=len(ids),
    )


def _run_one_layer(args) -> tuple[int, int, dict]:
    # single-threaded BLAS per run: results are then bitwise identical
    # whether runs execute serially or fanned out across processes
    dataset, bank, manifest, config, encoder_dim, seed = args
    with threadpoolctl.threadpool_limits(1):
        cfg = TrainConfig(**{**_config_dict(config), "seed": seed})
        ckpt, _ = fit(dataset, bank, manifest, cfg, encoder_dim=encoder_dim)
        report = evaluate_checkpoint(ckpt, dataset, bank, manifest)
    return bank.layer_index, seed, report.to_dict()


def _config_dict(config: TrainConfig) -> dict:
    from dataclasses import asdict

    return asdict(config)


def layer_sweep(
    dataset: NeuralDataset,
    banks: list[EmbeddingBank],
    manifest: PairManifest,
    config: TrainConfig,
    encoder_dim: int = 1024,
    seeds: list[int] | None = None,
    workers: int = 1,
) -> SweepResult:
    """Train and evaluate one model per (layer, seed); summarize the sweep.

    Each run gets a fresh seed-derived init. Per-layer accuracies are
    averaged over seeds; the best layer is selected by mean top-1, and the
    final-output accuracy is the deepest probed layer's. Runs are
    independent, so `workers > 1` executes them in parallel without
    changing any result.
    """
    if not banks:
        raise ValueError("layer sweep needs at least one bank")
    banks = sorted(banks, key=lambda b: b.layer_index)
    if seeds is None:
        seeds = [config.seed]
    jobs = [
        (dataset, bank, manifest, config, encoder_dim, seed)
        for bank in banks
        for seed in seeds
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one_layer, jobs))
    else:
        results = [_run_one_layer(job) for job in jobs]

    by_layer: dict[int, list[dict]] = {}
    for layer, _, report in results:
        by_layer.setdefault(layer, []).append(report)

    reports = []
    for bank in banks:
        group = by_layer[bank.layer_index]
        reports.append(
            RetrievalReport(
                subject_id=group[0]["subject_id"],
                backbone=group[0]["backbone"],
                layer_index=bank.layer_index,
                relative_depth=bank.relative_depth,
                top1=float(np.mean([g["top1"] for g in group])),
                top5=float(np.mean([g["top5"] for g in group])),
                concept_accuracy=float(np.mean([g["concept_accuracy"] for g in group])),
                num_queries=group[0]["num_queries"],
            )
        )
    best = max(reports, key=lambda r: (r.top1, -r.layer_index))
    final = reports[-1]
    return SweepResult(
        reports=reports,
        best_layer=best.layer_index,
        best_top1=best.top1,
        final_top1=final.top1,
    )


def scaling_regression(points: list[tuple[float, float]]) -> RegressionResult:
    """OLS of accuracy on ln(parameter count) with a two-sided slope t-test.

    The p-value uses the exact Student-t CDF with n-2 degrees of freedom,
    evaluated through the regularized incomplete beta function.
    """
    if len(points) < 3:
        raise ValueError(f"need at least 3 points, got {len(points)}")
    params = np.array([p for p, _ in points], dtype=np.float64)
    acc = np.array([a for _, a in points], dtype=np.float64)
    if np.any(params <= 0):
        raise ValueError("parameter counts must be positive")
    x = np.log(params)
    n = len(x)
    sxx = float(((x - x.mean()) ** 2).sum())
    if sxx == 0:
        raise ValueError("degenerate regression: all parameter counts equal")
    sxy = float(((x - x.mean()) * (acc - acc.mean())).sum())
    slope = sxy / sxx
    intercept = float(acc.mean() - slope * x.mean())
    resid = acc - (intercept + slope * x)
    sse = float((resid**2).sum())
    sst = float(((acc - acc.mean()) ** 2).sum())
    r_squared = 1.0 if sst == 0 else 1.0 - sse / sst
    dof = n - 2
    if sse == 0:
        p_value = 1.0 if slope == 0 else np.finfo(float).tiny
    else:
        se = np.sqrt(sse / dof / sxx)
        t = slope / se
        p_value = float(betainc(dof / 2.0, 0.5, dof / (dof + t * t)))
        p_value = min(max(p_value, np.finfo(float).tiny), 1.0)
    return RegressionResult(
        slope=slope, intercept=intercept, r_squared=float(r_squared),
        p_value=float(p_value), n_points=n,
    )


def export_embeddings(
    ckpt: ModelCheckpoint,
    dataset: NeuralDataset,
    bank: EmbeddingBank,
    manifest: PairManifest,
    path: str | Path,
    split: str = "test",
) -> int:
    """Write projected (v, w) rows as CSV for external projection tools.

    Columns: modality (neural|visual), image_id, concept_id, then one
    column per shared-space dimension. Returns the row count.
    """
    ids = manifest.image_ids(split)
    if not ids:
        raise ValueError(f"manifest has no {split!r} images")
    image_to_concept = manifest.image_to_concept()
    v, w = encode_eval(ckpt, dataset.rows_for(ids), bank.rows_for(ids))
    dim = v.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["modality", "image_id", "concept_id"] + [f"e{i}" for i in range(dim)])
        for modality, matrix in (("neural", v), ("visual", w)):
            for row_id, row in zip(ids, matrix):
                writer.writerow(
                    [modality, row_id, image_to_concept[row_id]]
                    + [repr(float(val)) for val in row]
                )
    return 2 * len(ids)
