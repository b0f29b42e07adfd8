"""Layer-wise visual embedding extraction into NEB1 banks."""

__version__ = "0.1.0"

from .backbones import REGISTRY, BackboneSpec, get_spec
from .extract import extract
from .manifest import build_manifest, scan_layout, write_manifest
from .neb import write_bank
