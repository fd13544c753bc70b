"""Dataset toolchain for multi-target, object- and part-level reasoning
segmentation: annotation ingest, LLM-assisted QA generation, target binding
with [SEG] markers, inspector-based filtering, split assembly, statistics,
and a gIoU/cIoU evaluation harness.
"""

__version__ = "0.1.0"

from . import annotations, curation, dataset, evaluation, gateway, masks, metrics, prompts, synthesis
from .annotations import AnnotationIndex, instance_label, load_annotations, validate_index
from .masks import decode_rle, encode_rle, iou, rasterize_polygon
from .metrics import ScoredPair, c_iou, g_iou, m_iou

__all__ = [
    "annotations",
    "curation",
    "dataset",
    "evaluation",
    "gateway",
    "masks",
    "metrics",
    "prompts",
    "synthesis",
    "AnnotationIndex",
    "instance_label",
    "load_annotations",
    "validate_index",
    "decode_rle",
    "encode_rle",
    "iou",
    "rasterize_polygon",
    "ScoredPair",
    "c_iou",
    "g_iou",
    "m_iou",
    "__version__",
]
