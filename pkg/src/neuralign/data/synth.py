"""Synthetic hierarchical-embedding generator.

Desk-scale surrogate for the feature evolution of a deep vision encoder:
each image embedding at layer l mixes a per-concept center, a per-image
instance detail, and layer noise,

    e(l, image i of concept c) = alpha_l * mu_c + beta_l * d_i + sigma_l * eps,

with beta forced to zero at the final layer (simulated collapse of
instances onto concept centers). The paired neural signal is a fixed
seeded random linear map of (mu_c, d_i) plus noise, so instance identity
is recoverable from the neural side only where beta_l > 0 on the visual
side. Mid layers therefore support instance-level retrieval while the
final layer caps out at concept-level matching.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..rng import Rng
from .bank import EmbeddingBank
from .ingest import NeuralDataset
from .manifest import CATEGORIES, ConceptInfo, ImageInfo, PairManifest

def default_schedule(num_layers: int) -> tuple:
    """(alpha, beta, sigma) per layer for a depth-f = (l-1)/(L-1) ramp.

    Semantics ramp up with depth, instance detail fades to exactly zero at
    the final layer, and noise dominates the earliest layers, so retrieval
    quality peaks at an interior depth.
    """
    if num_layers < 3:
        raise ValueError("schedule needs at least 3 layers")
    layers = []
    for l in range(1, num_layers + 1):
        f = (l - 1) / (num_layers - 1)
        alpha = min(1.0, 1.75 * f)
        beta = 0.0 if l == num_layers else min(1.0, 1.75 * (1.0 - f))
        sigma = 0.0 if l == num_layers else 2.0 * 4.0 ** (-5.0 * f)
        layers.append((alpha, beta, sigma))
    return tuple(layers)


DEFAULT_LAYER_SCHEDULE = default_schedule(6)


@dataclass
class SynthSpec:
    train_concepts: int = 800
    test_concepts: int = 200
    images_per_concept: int = 10
    layers: tuple = DEFAULT_LAYER_SCHEDULE
    embedding_dim: int = 64
    channels: int = 8
    time_points: int = 16
    neural_mix_concept: float = 1.0
    neural_mix_detail: float = 1.0
    neural_noise: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.train_concepts < 1 or self.test_concepts < 1:
            raise ValueError("need at least one train and one test concept")
        if self.images_per_concept < 1:
            raise ValueError("images_per_concept must be >= 1")
        if len(self.layers) < 2:
            raise ValueError("need at least two layers")
        for l, (a, b, s) in enumerate(self.layers, start=1):
            if a < 0 or b < 0 or s < 0:
                raise ValueError(f"layer {l}: schedule weights must be nonnegative")
        if self.layers[-1][1] != 0.0:
            raise ValueError("final layer must have beta == 0 (collapsed instances)")
        if not any(a > 0 and b > 0 for a, b, _ in self.layers[1:-1]):
            raise ValueError("at least one intermediate layer needs alpha > 0 and beta > 0")


@dataclass
class SynthResult:
    dataset: NeuralDataset
    banks: list[EmbeddingBank]
    manifest: PairManifest
    concept_centers: np.ndarray = field(repr=False, default=None)  # type: ignore[assignment]
    instance_details: np.ndarray = field(repr=False, default=None)  # type: ignore[assignment]


def synth_generate(spec: SynthSpec) -> SynthResult:
    """Generate (neural dataset, per-layer banks, manifest) from a seed."""
    spec.validate()
    root = Rng(spec.seed)
    k_total = spec.train_concepts + spec.test_concepts
    ipc = spec.images_per_concept
    n_images = k_total * ipc
    d = spec.embedding_dim

    mu = root.derive(1).normal((k_total, d), dtype=np.float64)
    detail = root.derive(2).normal((n_images, d), dtype=np.float64)
    concept_of_image = np.repeat(np.arange(k_total), ipc)

    concepts = [
        ConceptInfo(
            concept_id=f"c{c:05d}",
            name=f"concept-{c:05d}",
            category=CATEGORIES[c % len(CATEGORIES)],
        )
        for c in range(k_total)
    ]
    images = [
        ImageInfo(
            image_id=f"i{i:06d}",
            concept_id=concepts[concept_of_image[i]].concept_id,
            split="train" if concept_of_image[i] < spec.train_concepts else "test",
        )
        for i in range(n_images)
    ]
    image_ids = [im.image_id for im in images]

    num_layers = len(spec.layers)
    banks = []
    for l, (alpha, beta, sigma) in enumerate(spec.layers, start=1):
        emb = alpha * mu[concept_of_image] + beta * detail
        if sigma > 0:
            emb = emb + sigma * root.derive(3, l).normal((n_images, d), dtype=np.float64)
        banks.append(
            EmbeddingBank(
                backbone_name="synth",
                layer_index=l,
                num_layers=num_layers,
                pooling_tag="synthetic",
                item_ids=list(image_ids),
                matrix=emb.astype(np.float32),
            )
        )

    ct = spec.channels * spec.time_points
    mix = root.derive(4).normal((2 * d, ct), dtype=np.float64) / np.sqrt(2 * d)
    latent = np.concatenate(
        [
            spec.neural_mix_concept * mu[concept_of_image],
            spec.neural_mix_detail * detail,
        ],
        axis=1,
    )
    signal = latent @ mix
    if spec.neural_noise > 0:
        signal = signal + spec.neural_noise * root.derive(5).normal(
            (n_images, ct), dtype=np.float64
        )
    dataset = NeuralDataset(
        subject_id="synth01",
        channel_names=[f"ch{c:02d}" for c in range(spec.channels)],
        trials=signal.reshape(n_images, spec.channels, spec.time_points).astype(np.float32),
        image_ids=list(image_ids),
    )

    manifest = PairManifest(
        subjects=["synth01"],
        concepts=concepts,
        images=images,
        neural_sources={},
    )
    return SynthResult(
        dataset=dataset,
        banks=banks,
        manifest=manifest,
        concept_centers=mu,
        instance_details=detail,
    )
