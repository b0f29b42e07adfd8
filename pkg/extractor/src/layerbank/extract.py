"""Layer-wise embedding extraction into NEB1 banks."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .backbones import BackboneSpec, FeatureCapture, build_model, pooling_tags, preprocess_batch
from .neb import write_bank


def extract(
    spec: BackboneSpec,
    order: list[tuple[str, Path]],
    banks_out: str | Path,
    probes: list[int] | None = None,
    batch_size: int = 8,
    weights: str = "random",
    seed: int = 0,
) -> list[Path]:
    """One bank per probed intermediate layer plus the final-output bank.

    `order` is the manifest's (image_id, path) sequence; bank rows follow
    it exactly. Returns the written bank paths (ascending layer index,
    final last).
    """
    if probes is None:
        probes = spec.default_probes()
    bad = [l for l in probes if not 1 <= l < spec.num_layers]
    if bad:
        raise ValueError(
            f"probe layers must be intermediate (1 <= l < {spec.num_layers}), got {bad}"
        )
    probes = sorted(set(probes))
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")

    model = build_model(spec, weights=weights, seed=seed)
    capture = FeatureCapture(spec, model, probes)
    ids = [image_id for image_id, _ in order]
    chunks: dict[int, list[np.ndarray]] = {layer: [] for layer in probes}
    final_chunks: list[np.ndarray] = []
    try:
        for start in range(0, len(order), batch_size):
            batch_paths = [path for _, path in order[start : start + batch_size]]
            batch = preprocess_batch(batch_paths, spec.input_size)
            pooled, final = capture.pooled(batch)
            for layer in probes:
                chunks[layer].append(pooled[layer])
            final_chunks.append(final)
    finally:
        capture.close()

    mid_tag, final_tag = pooling_tags(spec)
    actual_params = sum(int(p.numel()) for p in model.parameters())
    out_dir = Path(banks_out)
    out_dir.mkdir(parents=True, exist_ok=True)
    extra = {
        "params_count": spec.params_count,
        "actual_params": actual_params,
        "weights": weights,
        "weights_seed": seed,
        "preprocess": f"resize{spec.input_size}_centercrop_imagenet_norm",
    }
    written = []
    for layer in probes:
        matrix = np.concatenate(chunks[layer], axis=0)
        path = out_dir / f"bank_layer{layer:02d}.neb"
        write_bank(path, spec.name, layer, spec.num_layers, mid_tag, ids, matrix,
                   extra=extra)
        written.append(path)
    final_matrix = np.concatenate(final_chunks, axis=0)
    final_path = out_dir / f"bank_layer{spec.num_layers:02d}.neb"
    write_bank(final_path, spec.name, spec.num_layers, spec.num_layers, final_tag,
               ids, final_matrix, extra=extra)
    written.append(final_path)
    return written
