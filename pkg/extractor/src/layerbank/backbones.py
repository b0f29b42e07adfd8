"""Vision backbone registry and feature capture.

Each entry declares the published layer count and parameter count (used
downstream by the scaling regression) plus, where the architecture is
constructible offline, a torchvision builder. Weights come from a local
state-dict file or from a seeded random initialization; downloading
pretrained weights is out of scope, so the large foundation models are
metadata-only entries here.

Feature capture uses forward hooks on the residual stages (ResNet) or
encoder blocks (ViT). Pooling rules: intermediate transformer layers are
mean-pooled over patch tokens with the class token excluded; intermediate
ResNet stages are globally average-pooled over spatial positions; the
final bank uses the backbone's native head (pooled trunk output for
ResNet, final-LayerNorm class token for ViT).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass
class BackboneSpec:
    name: str
    family: str  # "resnet" | "vit"
    num_layers: int
    params_count: int
    input_size: int = 224
    buildable: bool = True
    probe_layers: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.params_count <= 0:
            raise ValueError("parameter count must be positive")
        bad = [l for l in self.probe_layers if not 1 <= l <= self.num_layers]
        if bad:
            raise ValueError(f"probe layers outside [1, {self.num_layers}]: {bad}")

    def default_probes(self) -> list[int]:
        """All intermediate layers for shallow nets, ~10 evenly spaced for deep."""
        if self.probe_layers:
            return list(self.probe_layers)
        upper = self.num_layers - 1
        if upper <= 11:
            return list(range(1, upper + 1))
        picks = np.linspace(1, upper, 10)
        return sorted({int(round(p)) for p in picks})


REGISTRY: dict[str, BackboneSpec] = {
    spec.name: spec
    for spec in [
        BackboneSpec("rn50", "resnet", 4, 38_000_000),
        BackboneSpec("rn101", "resnet", 4, 56_000_000),
        BackboneSpec("vit-b-16", "vit", 12, 86_000_000),
        BackboneSpec("vit-h-14", "vit", 32, 632_000_000, buildable=False),
        BackboneSpec("dinov2", "vit", 40, 1_140_000_000, buildable=False),
        BackboneSpec("vit-bigg-14", "vit", 48, 1_840_000_000, buildable=False),
        BackboneSpec("eva-02", "vit", 64, 4_350_000_000, buildable=False),
        BackboneSpec("internvit", "vit", 46, 5_540_000_000, buildable=False),
    ]
}


def get_spec(name: str) -> BackboneSpec:
    try:
        return REGISTRY[name]
    except KeyError:
        raise ValueError(
            f"unknown backbone {name!r}; known: {sorted(REGISTRY)}"
        ) from None


def build_model(spec: BackboneSpec, weights: str = "random", seed: int = 0) -> torch.nn.Module:
    """Construct the torchvision module with local or seeded-random weights.

    `weights` is either the literal "random" (deterministic init from
    `seed`) or a path to a state-dict file.
    """
    if not spec.buildable:
        raise ValueError(
            f"{spec.name} is registry metadata only; extraction needs one of "
            f"{sorted(n for n, s in REGISTRY.items() if s.buildable)} "
            "or a custom loader"
        )
    import torchvision.models as tvm

    torch.manual_seed(seed)
    builders = {
        "rn50": tvm.resnet50,
        "rn101": tvm.resnet101,
        "vit-b-16": tvm.vit_b_16,
    }
    model = builders[spec.name](weights=None)
    if weights != "random":
        path = Path(weights)
        if not path.exists():
            raise FileNotFoundError(f"weights file not found: {weights}")
        model.load_state_dict(torch.load(path, map_location="cpu"))
    model.eval()
    return model


class FeatureCapture:
    """Forward hooks over the probed layers plus the native final output."""

    def __init__(self, spec: BackboneSpec, model: torch.nn.Module, probes: list[int]):
        self.spec = spec
        self.model = model
        self.probes = probes
        self.captured: dict[int, torch.Tensor] = {}
        self._final: torch.Tensor | None = None
        self._handles = []
        if spec.family == "resnet":
            stages = [model.layer1, model.layer2, model.layer3, model.layer4]
            for layer in probes:
                self._handles.append(
                    stages[layer - 1].register_forward_hook(self._stage_hook(layer))
                )
            self._handles.append(model.avgpool.register_forward_hook(self._final_hook()))
        elif spec.family == "vit":
            blocks = model.encoder.layers
            for layer in probes:
                self._handles.append(
                    blocks[layer - 1].register_forward_hook(self._stage_hook(layer))
                )
            self._handles.append(model.encoder.ln.register_forward_hook(self._final_hook()))
        else:
            raise ValueError(f"unknown family {spec.family!r}")

    def _stage_hook(self, layer: int):
        def hook(_module, _inputs, output):
            self.captured[layer] = output.detach()

        return hook

    def _final_hook(self):
        def hook(_module, _inputs, output):
            self._final = output.detach()

        return hook

    def close(self):
        for handle in self._handles:
            handle.remove()
        self._handles = []

    def pooled(self, batch: torch.Tensor) -> tuple[dict[int, np.ndarray], np.ndarray]:
        """Run one batch; return per-layer pooled features and the final output."""
        self.captured.clear()
        self._final = None
        with torch.no_grad():
            self.model(batch)
        out: dict[int, np.ndarray] = {}
        for layer in self.probes:
            feat = self.captured[layer]
            if self.spec.family == "resnet":
                pooled = feat.mean(dim=(2, 3))  # global average over H, W
            else:
                pooled = feat[:, 1:, :].mean(dim=1)  # patch tokens, CLS excluded
            out[layer] = pooled.to(torch.float32).numpy()
        if self.spec.family == "resnet":
            final = self._final.flatten(1)  # native trunk pooling
        else:
            final = self._final[:, 0, :]  # class token after final LayerNorm
        return out, final.to(torch.float32).numpy()


def pooling_tags(spec: BackboneSpec) -> tuple[str, str]:
    """(intermediate pooling tag, final-output pooling tag)."""
    if spec.family == "resnet":
        return "gap_spatial", "native_avgpool"
    return "mean_patch", "cls_final"


def preprocess_batch(paths: list[Path], input_size: int) -> torch.Tensor:
    """Standard resize/center-crop/normalize preprocessing in batch."""
    from PIL import Image
    from torchvision import transforms

    tf = transforms.Compose([
        transforms.Resize(input_size),
        transforms.CenterCrop(input_size),
        transforms.ToTensor(),
        transforms.Normalize(IMAGENET_MEAN, IMAGENET_STD),
    ])
    tensors = []
    for path in paths:
        with Image.open(path) as img:
            tensors.append(tf(img.convert("RGB")))
    return torch.stack(tensors)
