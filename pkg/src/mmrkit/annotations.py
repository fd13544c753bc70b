"""Ingest COCO-style object/part annotation files into a validated index.

The expected input follows the conventions of part-annotated LVIS-style
files: top-level ``images``, ``annotations`` and ``categories`` arrays,
segmentations as polygon point lists or RLE objects, and part annotations
linked to their parent object annotation through an ``obj_ann_id``-style
field (key name configurable). Part categories are recognized either by an
explicit parent-category field or by a ``object:part`` composite name.

The resulting index is immutable and safe to share across threads.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Any, Mapping

import numpy as np

from . import masks
from .errors import ParseError, ValidationError

logger = logging.getLogger(__name__)

PARENT_CATEGORY_KEYS = (
    "parent_object_category_id",
    "parent_category_id",
    "object_category_id",
)


@dataclass(frozen=True)
class CategoryTable:
    object_categories: tuple[tuple[int, str], ...]
    part_categories: tuple[tuple[int, str, int], ...]

    def __post_init__(self):
        obj_ids = [c[0] for c in self.object_categories]
        part_ids = [c[0] for c in self.part_categories]
        if len(set(obj_ids)) != len(obj_ids):
            raise ValidationError("duplicate object category id")
        if len(set(part_ids)) != len(part_ids):
            raise ValidationError("duplicate part category id")
        known = set(obj_ids)
        for cid, name, parent in self.part_categories:
            if parent not in known:
                raise ValidationError(
                    f"part category {cid} ({name!r}) references unknown object category {parent}"
                )

    def object_name(self, category_id: int) -> str:
        for cid, name in self.object_categories:
            if cid == category_id:
                return name
        raise KeyError(category_id)

    def part_name(self, category_id: int) -> str:
        for cid, name, _ in self.part_categories:
            if cid == category_id:
                return name
        raise KeyError(category_id)

    def part_parent(self, category_id: int) -> int:
        for cid, _, parent in self.part_categories:
            if cid == category_id:
                return parent
        raise KeyError(category_id)

    @property
    def object_ids(self) -> set[int]:
        return {c[0] for c in self.object_categories}

    @property
    def part_ids(self) -> set[int]:
        return {c[0] for c in self.part_categories}


@dataclass(frozen=True)
class ImageRecord:
    image_id: int
    file_name: str
    width: int
    height: int


@dataclass(frozen=True)
class ObjectInstance:
    ann_id: int
    image_id: int
    category_id: int
    bbox: tuple[float, float, float, float]
    segmentation: Any
    instance_ordinal: int


@dataclass(frozen=True)
class PartInstance:
    ann_id: int
    image_id: int
    parent_ann_id: int
    part_category_id: int
    bbox: tuple[float, float, float, float]
    segmentation: Any


@dataclass(frozen=True)
class ValidationIssue:
    severity: str  # "error" | "warning"
    rule: str
    subject: int | None
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple[ValidationIssue, ...]

    @property
    def errors(self) -> tuple[ValidationIssue, ...]:
        return tuple(i for i in self.issues if i.severity == "error")

    @property
    def warnings(self) -> tuple[ValidationIssue, ...]:
        return tuple(i for i in self.issues if i.severity == "warning")

    def is_clean(self) -> bool:
        return not self.issues

    def to_dict(self) -> dict:
        return {
            "issues": [
                {
                    "severity": i.severity,
                    "rule": i.rule,
                    "subject": i.subject,
                    "detail": i.detail,
                }
                for i in self.issues
            ]
        }


@dataclass(frozen=True)
class AnnotationIndex:
    categories: CategoryTable
    images: Mapping[int, ImageRecord]
    objects: Mapping[int, ObjectInstance]
    parts: Mapping[int, PartInstance]
    image_objects: Mapping[int, tuple[int, ...]]
    image_parts: Mapping[int, tuple[int, ...]]
    source_issues: tuple[ValidationIssue, ...] = ()

    def instance(self, ann_id: int) -> ObjectInstance | PartInstance:
        if ann_id in self.objects:
            return self.objects[ann_id]
        if ann_id in self.parts:
            return self.parts[ann_id]
        raise KeyError(f"unknown ann_id {ann_id}")

    def is_part(self, ann_id: int) -> bool:
        return ann_id in self.parts

    def image_instances(self, image_id: int) -> tuple[int, ...]:
        return self.image_objects.get(image_id, ()) + self.image_parts.get(image_id, ())

    def instance_mask(self, ann_id: int) -> np.ndarray:
        inst = self.instance(ann_id)
        img = self.images[inst.image_id]
        return masks.decode_payload(inst.segmentation, img.height, img.width)

    def counts(self) -> dict:
        return {
            "images": len(self.images),
            "objects": len(self.objects),
            "parts": len(self.parts),
            "object_categories": len(self.categories.object_categories),
            "part_categories": len(self.categories.part_categories),
        }

    def to_dict(self) -> dict:
        """Deterministic, JSON-ready view of the whole index."""
        return {
            "categories": {
                "objects": [list(c) for c in self.categories.object_categories],
                "parts": [list(c) for c in self.categories.part_categories],
            },
            "images": [
                {
                    "image_id": img.image_id,
                    "file_name": img.file_name,
                    "width": img.width,
                    "height": img.height,
                }
                for _, img in sorted(self.images.items())
            ],
            "objects": [
                {
                    "ann_id": o.ann_id,
                    "image_id": o.image_id,
                    "category_id": o.category_id,
                    "bbox": list(o.bbox),
                    "segmentation": _payload_to_json(o.segmentation),
                    "instance_ordinal": o.instance_ordinal,
                }
                for _, o in sorted(self.objects.items())
            ],
            "parts": [
                {
                    "ann_id": p.ann_id,
                    "image_id": p.image_id,
                    "parent_ann_id": p.parent_ann_id,
                    "part_category_id": p.part_category_id,
                    "bbox": list(p.bbox),
                    "segmentation": _payload_to_json(p.segmentation),
                }
                for _, p in sorted(self.parts.items())
            ],
        }


def _payload_to_json(segmentation):
    if isinstance(segmentation, dict):
        return masks.rle_to_dict(segmentation)
    return [[float(v) for v in ring] for ring in segmentation]


def display_name(raw: str) -> str:
    """Category name as used in labels and prose: underscores become spaces."""
    return raw.replace("_", " ")


def instance_label(index: AnnotationIndex, ann_id: int) -> str:
    """Canonical text label: ``category_k`` or ``category_k's part``."""
    inst = index.instance(ann_id)
    if isinstance(inst, ObjectInstance):
        name = display_name(index.categories.object_name(inst.category_id))
        return f"{name}_{inst.instance_ordinal}"
    parent = instance_label(index, inst.parent_ann_id)
    part = display_name(index.categories.part_name(inst.part_category_id))
    return f"{parent}'s {part}"


def _category_table_from_raw(raw_categories: list[dict]) -> tuple[CategoryTable, list[ValidationIssue]]:
    issues: list[ValidationIssue] = []
    objects: list[tuple[int, str]] = []
    parts_raw: list[tuple[int, str, int | None]] = []
    names_to_id: dict[str, int] = {}
    for cat in raw_categories:
        cid = int(cat["id"])
        name = str(cat["name"])
        parent = None
        for key in PARENT_CATEGORY_KEYS:
            if cat.get(key) is not None:
                parent = int(cat[key])
                break
        if parent is None and str(cat.get("supercategory", "")).upper() == "PART":
            parent = -1  # resolve by name below
        if parent is None and ":" in name:
            parent = -1
        if parent is None:
            objects.append((cid, name))
            names_to_id[name] = cid
        else:
            parts_raw.append((cid, name, parent if parent != -1 else None))
    parts: list[tuple[int, str, int]] = []
    for cid, name, parent in parts_raw:
        part_name = name
        if parent is None:
            if ":" not in name:
                issues.append(
                    ValidationIssue(
                        "error",
                        "part_category_parent",
                        cid,
                        f"part category {name!r} has no parent id and no 'object:part' name",
                    )
                )
                continue
            obj_name, part_name = name.split(":", 1)
            parent = names_to_id.get(obj_name)
            if parent is None:
                issues.append(
                    ValidationIssue(
                        "error",
                        "part_category_parent",
                        cid,
                        f"part category {name!r} names unknown object category {obj_name!r}",
                    )
                )
                continue
        elif ":" in name:
            part_name = name.split(":", 1)[1]
        parts.append((cid, part_name, parent))
    table = CategoryTable(tuple(objects), tuple(parts))
    return table, issues


def _bbox_tuple(raw) -> tuple[float, float, float, float]:
    if len(raw) != 4:
        raise ValidationError(f"bbox must have 4 values, got {len(raw)}")
    return tuple(float(v) for v in raw)


def _bbox_in_bounds(bbox, img: ImageRecord) -> bool:
    x, y, w, h = bbox
    return x >= 0 and y >= 0 and w >= 0 and h >= 0 and x + w <= img.width and y + h <= img.height


def index_from_dict(
    doc: dict,
    *,
    lenient: bool = False,
    part_link_key: str = "obj_ann_id",
) -> AnnotationIndex:
    """Build a validated index from a parsed COCO-style document.

    In strict mode any validation error aborts the load. In lenient mode the
    offending records are skipped, logged, and kept in ``source_issues`` so
    ``validate_index`` can still report them.
    """
    issues: list[ValidationIssue] = []

    def problem(rule: str, subject: int | None, detail: str) -> None:
        issues.append(ValidationIssue("error", rule, subject, detail))
        logger.warning("skipping record (%s): %s", rule, detail)

    table, cat_issues = _category_table_from_raw(doc.get("categories", []))
    issues.extend(cat_issues)

    images: dict[int, ImageRecord] = {}
    for raw in doc.get("images", []):
        image_id = int(raw["id"])
        file_name = raw.get("file_name") or raw.get("coco_url", "")
        if isinstance(file_name, str) and file_name.startswith("http"):
            file_name = file_name.rsplit("/", 1)[-1]
        width, height = int(raw["width"]), int(raw["height"])
        if image_id in images:
            problem("duplicate_image_id", image_id, f"image id {image_id} appears twice")
            continue
        if width <= 0 or height <= 0:
            problem("image_dimensions", image_id, f"image {image_id} has size {width}x{height}")
            continue
        images[image_id] = ImageRecord(image_id, str(file_name), width, height)

    object_raw: list[dict] = []
    part_raw: list[dict] = []
    seen_ann_ids: set[int] = set()
    for raw in doc.get("annotations", []):
        ann_id = int(raw["id"])
        if ann_id in seen_ann_ids:
            problem("duplicate_ann_id", ann_id, f"annotation id {ann_id} appears twice")
            continue
        seen_ann_ids.add(ann_id)
        category_id = int(raw["category_id"])
        if category_id in table.part_ids or raw.get(part_link_key) is not None:
            part_raw.append(raw)
        elif category_id in table.object_ids:
            object_raw.append(raw)
        else:
            problem("unknown_category", ann_id, f"annotation {ann_id} has unknown category {category_id}")

    objects: dict[int, ObjectInstance] = {}
    per_image_category: dict[tuple[int, int], list[int]] = {}
    for raw in object_raw:
        ann_id = int(raw["id"])
        image_id = int(raw["image_id"])
        if image_id not in images:
            problem("dangling_image", ann_id, f"annotation {ann_id} references missing image {image_id}")
            continue
        bbox = _bbox_tuple(raw["bbox"])
        if not _bbox_in_bounds(bbox, images[image_id]):
            problem("bbox_bounds", ann_id, f"object {ann_id} bbox {bbox} outside image {image_id}")
            continue
        objects[ann_id] = ObjectInstance(
            ann_id=ann_id,
            image_id=image_id,
            category_id=int(raw["category_id"]),
            bbox=bbox,
            segmentation=raw.get("segmentation"),
            instance_ordinal=0,  # assigned below
        )
        per_image_category.setdefault((image_id, int(raw["category_id"])), []).append(ann_id)

    # Ordinals: same-category instances in one image are numbered from 1 in
    # ascending ann_id order, which keeps labels reproducible across loads.
    for ann_ids in per_image_category.values():
        for ordinal, ann_id in enumerate(sorted(ann_ids), start=1):
            obj = objects[ann_id]
            objects[ann_id] = ObjectInstance(
                obj.ann_id, obj.image_id, obj.category_id, obj.bbox, obj.segmentation, ordinal
            )

    parts: dict[int, PartInstance] = {}
    for raw in part_raw:
        ann_id = int(raw["id"])
        image_id = int(raw["image_id"])
        if image_id not in images:
            problem("dangling_image", ann_id, f"annotation {ann_id} references missing image {image_id}")
            continue
        parent_ann = raw.get(part_link_key)
        if parent_ann is None:
            problem("missing_parent_link", ann_id, f"part {ann_id} lacks {part_link_key!r}")
            continue
        parent_ann = int(parent_ann)
        if parent_ann not in objects:
            problem("dangling_parent", ann_id, f"part {ann_id} references missing object {parent_ann}")
            continue
        part_category = int(raw["category_id"])
        if part_category not in table.part_ids:
            problem("unknown_category", ann_id, f"part {ann_id} has unknown part category {part_category}")
            continue
        parent_obj = objects[parent_ann]
        if parent_obj.image_id != image_id:
            problem(
                "cross_image_parent",
                ann_id,
                f"part {ann_id} in image {image_id} references object in image {parent_obj.image_id}",
            )
            continue
        if table.part_parent(part_category) != parent_obj.category_id:
            problem(
                "category_hierarchy",
                ann_id,
                f"part {ann_id} category {part_category} does not belong to object category "
                f"{parent_obj.category_id}",
            )
            continue
        bbox = _bbox_tuple(raw["bbox"])
        if not _bbox_in_bounds(bbox, images[image_id]):
            problem("bbox_bounds", ann_id, f"part {ann_id} bbox {bbox} outside image {image_id}")
            continue
        parts[ann_id] = PartInstance(
            ann_id=ann_id,
            image_id=image_id,
            parent_ann_id=parent_ann,
            part_category_id=part_category,
            bbox=bbox,
            segmentation=raw.get("segmentation"),
        )

    if issues and not lenient:
        summary = "; ".join(f"{i.rule}: {i.detail}" for i in issues[:10])
        raise ValidationError(
            f"{len(issues)} validation error(s) in annotation document: {summary}"
        )

    image_objects: dict[int, list[int]] = {}
    for ann_id in sorted(objects):
        image_objects.setdefault(objects[ann_id].image_id, []).append(ann_id)
    image_parts: dict[int, list[int]] = {}
    for ann_id in sorted(parts):
        image_parts.setdefault(parts[ann_id].image_id, []).append(ann_id)

    return AnnotationIndex(
        categories=table,
        images=MappingProxyType(images),
        objects=MappingProxyType(objects),
        parts=MappingProxyType(parts),
        image_objects=MappingProxyType({k: tuple(v) for k, v in image_objects.items()}),
        image_parts=MappingProxyType({k: tuple(v) for k, v in image_parts.items()}),
        source_issues=tuple(issues),
    )


def load_annotations(
    path: str | Path,
    *,
    lenient: bool = False,
    part_link_key: str = "obj_ann_id",
) -> AnnotationIndex:
    """Load and validate a COCO-style annotation file."""
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot parse annotation file {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"annotation file {path} is not a JSON object")
    index = index_from_dict(doc, lenient=lenient, part_link_key=part_link_key)
    logger.info(
        "loaded %s: %d images, %d objects, %d parts",
        path.name,
        len(index.images),
        len(index.objects),
        len(index.parts),
    )
    return index


def validate_index(index: AnnotationIndex) -> ValidationReport:
    """Report every invariant violation; load-time skips are included."""
    issues: list[ValidationIssue] = list(index.source_issues)

    for ann_id, part in index.parts.items():
        parent = index.objects.get(part.parent_ann_id)
        if parent is None:
            issues.append(
                ValidationIssue("error", "dangling_parent", ann_id, f"part {ann_id} parent missing")
            )
            continue
        px, py, pw, ph = part.bbox
        ox, oy, ow, oh = parent.bbox
        disjoint = px + pw <= ox or ox + ow <= px or py + ph <= oy or oy + oh <= py
        if disjoint:
            # Loose source annotations happen; keep it visible but non-fatal.
            issues.append(
                ValidationIssue(
                    "warning",
                    "part_outside_parent",
                    ann_id,
                    f"part {ann_id} bbox is disjoint from parent object {parent.ann_id} bbox",
                )
            )

    for image_id in index.images:
        labels: dict[str, int] = {}
        for ann_id in index.image_instances(image_id):
            label = instance_label(index, ann_id)
            if label in labels:
                issues.append(
                    ValidationIssue(
                        "warning",
                        "label_collision",
                        ann_id,
                        f"label {label!r} already used by ann {labels[label]} in image {image_id}",
                    )
                )
            else:
                labels[label] = ann_id

    return ValidationReport(tuple(issues))
