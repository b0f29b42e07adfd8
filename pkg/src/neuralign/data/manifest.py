"""Dataset manifest: concepts, images, splits, and neural source files.

The manifest is a single JSON document (human-inspectable, diff-friendly)
binding neural recordings to image ids, concept ids, categories, and the
train/test split. Loading validates the zero-shot contract: the train and
test concept sets are disjoint.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

CATEGORIES = ("animals", "food", "vehicles", "tools", "clothing", "others")


@dataclass
class ConceptInfo:
    concept_id: str
    name: str
    category: str


@dataclass
class ImageInfo:
    image_id: str
    concept_id: str
    split: str


@dataclass
class PairManifest:
    subjects: list[str]
    concepts: list[ConceptInfo]
    images: list[ImageInfo]
    neural_sources: dict[str, dict] = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        concept_ids = {c.concept_id for c in self.concepts}
        if len(concept_ids) != len(self.concepts):
            raise ValueError("duplicate concept ids in manifest")
        for c in self.concepts:
            if c.category not in CATEGORIES:
                raise ValueError(f"concept {c.concept_id}: unknown category {c.category!r}")
        seen = set()
        for im in self.images:
            if im.concept_id not in concept_ids:
                raise ValueError(f"image {im.image_id} references missing concept {im.concept_id}")
            if im.split not in ("train", "test"):
                raise ValueError(f"image {im.image_id}: bad split {im.split!r}")
            if im.image_id in seen:
                raise ValueError(f"duplicate image id {im.image_id}")
            seen.add(im.image_id)
        train_concepts = {im.concept_id for im in self.images if im.split == "train"}
        test_concepts = {im.concept_id for im in self.images if im.split == "test"}
        overlap = train_concepts & test_concepts
        if overlap:
            raise ValueError(
                f"zero-shot contract violated: {len(overlap)} concepts appear in both splits"
            )

    def image_ids(self, split: str | None = None) -> list[str]:
        return [im.image_id for im in self.images if split is None or im.split == split]

    def image_to_concept(self) -> dict[str, str]:
        return {im.image_id: im.concept_id for im in self.images}

    def concept_to_category(self) -> dict[str, str]:
        return {c.concept_id: c.category for c in self.concepts}

    def to_dict(self) -> dict:
        return {
            "subjects": list(self.subjects),
            "concepts": [
                {"concept_id": c.concept_id, "name": c.name, "category": c.category}
                for c in self.concepts
            ],
            "images": [
                {"image_id": im.image_id, "concept_id": im.concept_id, "split": im.split}
                for im in self.images
            ],
            "neural_sources": self.neural_sources,
        }

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_dict(cls, d: dict) -> "PairManifest":
        return cls(
            subjects=list(d["subjects"]),
            concepts=[ConceptInfo(**c) for c in d["concepts"]],
            images=[ImageInfo(**im) for im in d["images"]],
            neural_sources=d.get("neural_sources", {}),
        )

    @classmethod
    def load(cls, path: str | Path) -> "PairManifest":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))
