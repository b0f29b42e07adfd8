"""Pair-manifest construction from a concept-per-directory image layout.

Expected layout: ``images_dir/<concept>/<image files>``. Concepts sort
alphabetically; the last `test_concepts` of them form the zero-shot test
split with a single image per concept (the alphabetically first), and
every image of the remaining concepts goes to the train split.
"""

from __future__ import annotations

import json
from pathlib import Path

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".webp"}
CATEGORIES = ("animals", "food", "vehicles", "tools", "clothing", "others")


def scan_layout(images_dir: str | Path) -> dict[str, list[Path]]:
    root = Path(images_dir)
    if not root.is_dir():
        raise ValueError(f"images directory not found: {root}")
    layout: dict[str, list[Path]] = {}
    for concept_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        files = sorted(
            f for f in concept_dir.iterdir()
            if f.is_file() and f.suffix.lower() in IMAGE_SUFFIXES
        )
        if not files:
            raise ValueError(f"concept directory holds no images: {concept_dir}")
        layout[concept_dir.name] = files
    if not layout:
        raise ValueError(f"no concept directories under {root}")
    return layout


def build_manifest(
    layout: dict[str, list[Path]],
    test_concepts: int,
    categories: dict[str, str] | None = None,
) -> tuple[dict, list[tuple[str, Path]]]:
    """Manifest dict plus the (image_id, path) extraction order.

    Returns the manifest in the alignment engine's JSON schema; image ids
    are ``<concept>/<file stem>`` and their order defines bank row order.
    """
    names = sorted(layout)
    if not 1 <= test_concepts < len(names):
        raise ValueError(
            f"test_concepts must be in [1, {len(names) - 1}], got {test_concepts}"
        )
    test_set = set(names[-test_concepts:])
    concepts = []
    images = []
    order: list[tuple[str, Path]] = []
    for name in names:
        category = (categories or {}).get(name, "others")
        if category not in CATEGORIES:
            raise ValueError(f"concept {name}: unknown category {category!r}")
        concepts.append({"concept_id": name, "name": name, "category": category})
        files = layout[name] if name not in test_set else layout[name][:1]
        split = "test" if name in test_set else "train"
        for path in files:
            image_id = f"{name}/{path.stem}"
            images.append({"image_id": image_id, "concept_id": name, "split": split})
            order.append((image_id, path))
    manifest = {
        "subjects": [],
        "concepts": concepts,
        "images": images,
        "neural_sources": {},
    }
    return manifest, order


def write_manifest(manifest: dict, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
