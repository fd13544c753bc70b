"""Assemble retained QA pairs into the on-disk dataset, splits and stats.

On disk the dataset is one JSON document per split. Each document holds a
list of samples; a sample is one image with its QA pairs, and every QA pair
embeds its targets fully (label, category, bbox, RLE segmentation) so a
split file is self-contained. The reader tolerates alternative field names
through a small alias table so files written by other tools can be ingested
verbatim.

Split assignment happens at image level (all QA pairs of an image share a
split) by seeded shuffle, so no image leaks across splits. Test samples are
additionally routed into object-only / part-only / mixed subset views by the
granularity of each QA pair.
"""

from __future__ import annotations

import json
import random
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path

from . import masks
from .annotations import AnnotationIndex, instance_label, display_name
from .errors import ParseError, ValidationError
from .synthesis import GenerationRecord, QAPair, SEG

SPLITS = ("train", "val", "test")
TEST_SUBSETS = ("object_only", "part_only", "mixed")
DEFAULT_RATIOS = (0.79, 0.04, 0.17)
FORMAT_VERSION = "1.0"

_SUBSET_OF_GRANULARITY = {"object": "object_only", "part": "part_only", "mixed": "mixed"}

# Alternative field spellings accepted by the reader.
FIELD_ALIASES = {
    "image_id": ("image_id", "id", "img_id"),
    "file_name": ("file_name", "image", "img_path", "image_path"),
    "width": ("width",),
    "height": ("height",),
    "qa_pairs": ("qa_pairs", "qas", "qa", "questions"),
    "question": ("question", "q"),
    "answer": ("answer", "a"),
    "qa_id": ("qa_id", "id"),
    "targets": ("targets", "segments", "objects"),
    "ann_id": ("ann_id", "id", "annotation_id"),
    "label": ("label", "name", "instance_label"),
    "category": ("category", "category_name", "class"),
    "is_part": ("is_part", "part"),
    "bbox": ("bbox", "box"),
    "segmentation": ("segmentation", "mask", "rle"),
}


def _get(doc: dict, field: str, where: str, required: bool = True, default=None):
    for key in FIELD_ALIASES.get(field, (field,)):
        if key in doc:
            return doc[key]
    if required:
        raise ValidationError(f"{where}: missing field {field!r}")
    return default


@dataclass(frozen=True)
class TargetRecord:
    """A QA target with its annotation payload embedded."""

    ann_id: int
    label: str
    category: str
    is_part: bool
    bbox: tuple[float, float, float, float]
    segmentation: dict  # RLE object

    def to_dict(self) -> dict:
        return {
            "ann_id": self.ann_id,
            "label": self.label,
            "category": self.category,
            "is_part": self.is_part,
            "bbox": list(self.bbox),
            "segmentation": masks.rle_to_dict(self.segmentation),
        }


@dataclass(frozen=True)
class QaRecord:
    qa_id: str
    question: str
    answer: str
    granularity: str
    targets: tuple[TargetRecord, ...]

    def __post_init__(self):
        n = self.answer.count(SEG)
        if n != len(self.targets):
            raise ValidationError(
                f"qa {self.qa_id}: answer has {n} {SEG} markers but {len(self.targets)} targets"
            )

    def to_dict(self) -> dict:
        return {
            "qa_id": self.qa_id,
            "question": self.question,
            "answer": self.answer,
            "granularity": self.granularity,
            "targets": [t.to_dict() for t in self.targets],
        }


@dataclass(frozen=True)
class MmrSample:
    image_id: int
    file_name: str
    width: int
    height: int
    qa_pairs: tuple[QaRecord, ...]
    split: str | None = None
    test_subset: str | None = None

    def __post_init__(self):
        if self.split is not None and self.split not in SPLITS:
            raise ValidationError(f"sample {self.image_id}: unknown split {self.split!r}")
        if self.test_subset is not None:
            if self.split != "test":
                raise ValidationError(
                    f"sample {self.image_id}: test_subset set but split is {self.split!r}"
                )
            if self.test_subset not in TEST_SUBSETS:
                raise ValidationError(
                    f"sample {self.image_id}: unknown test_subset {self.test_subset!r}"
                )

    def to_dict(self) -> dict:
        out = {
            "image_id": self.image_id,
            "file_name": self.file_name,
            "width": self.width,
            "height": self.height,
            "qa_pairs": [q.to_dict() for q in self.qa_pairs],
        }
        if self.test_subset is not None:
            out["test_subset"] = self.test_subset
        return out


def canonical_order(samples) -> tuple[MmrSample, ...]:
    """Stable dataset-wide sample order: split, primary-then-subset, image."""

    def key(sample: MmrSample):
        split_rank = SPLITS.index(sample.split) if sample.split in SPLITS else len(SPLITS)
        subset_rank = (
            0 if sample.test_subset is None else 1 + TEST_SUBSETS.index(sample.test_subset)
        )
        return (split_rank, subset_rank, sample.image_id)

    return tuple(sorted(samples, key=key))


@dataclass(frozen=True)
class MmrDataset:
    samples: tuple[MmrSample, ...]
    object_categories: tuple[tuple[int, str], ...]
    part_categories: tuple[tuple[int, str, int], ...]
    format_version: str = FORMAT_VERSION

    def split_samples(self, split: str) -> tuple[MmrSample, ...]:
        return tuple(s for s in self.samples if s.split == split)

    def split_totals(self) -> dict[str, int]:
        totals = {s: 0 for s in SPLITS}
        for sample in self.samples:
            if sample.split is not None and sample.test_subset is None:
                totals[sample.split] += len(sample.qa_pairs)
        return totals


# -- assembly ----------------------------------------------------------------


def _target_record(index: AnnotationIndex, ann_id: int) -> TargetRecord:
    inst = index.instance(ann_id)
    is_part = index.is_part(ann_id)
    if is_part:
        category = display_name(index.categories.part_name(inst.part_category_id))
    else:
        category = display_name(index.categories.object_name(inst.category_id))
    mask = index.instance_mask(ann_id)
    rle = masks.compress_rle(masks.encode_rle(mask))
    return TargetRecord(
        ann_id=ann_id,
        label=instance_label(index, ann_id),
        category=category,
        is_part=is_part,
        bbox=inst.bbox,
        segmentation=rle,
    )


def assemble_samples(
    qas_by_image: dict[int, list[QAPair]] | list[QAPair],
    index: AnnotationIndex,
) -> list[MmrSample]:
    """Materialize samples from QA pairs, embedding target payloads."""
    if isinstance(qas_by_image, list):
        grouped: dict[int, list[QAPair]] = {}
        for qa in qas_by_image:
            grouped.setdefault(qa.image_id, []).append(qa)
        qas_by_image = grouped
    samples = []
    target_cache: dict[int, TargetRecord] = {}
    for image_id in sorted(qas_by_image):
        image = index.images.get(image_id)
        if image is None:
            raise ValidationError(f"QA pairs reference unknown image {image_id}")
        qa_records = []
        for qa in qas_by_image[image_id]:
            targets = []
            for ann_id in qa.targets:
                if ann_id not in target_cache:
                    target_cache[ann_id] = _target_record(index, ann_id)
                targets.append(target_cache[ann_id])
            qa_records.append(
                QaRecord(
                    qa_id=qa.qa_id,
                    question=qa.question,
                    answer=qa.answer,
                    granularity=qa.granularity,
                    targets=tuple(targets),
                )
            )
        samples.append(
            MmrSample(
                image_id=image_id,
                file_name=image.file_name,
                width=image.width,
                height=image.height,
                qa_pairs=tuple(qa_records),
            )
        )
    return samples


def assign_splits(
    samples: list[MmrSample],
    ratios: tuple[float, float, float] = DEFAULT_RATIOS,
    seed: int = 0,
    index: AnnotationIndex | None = None,
) -> MmrDataset:
    """Assign train/val/test at image level by seeded shuffle."""
    if not samples:
        raise ValidationError("cannot split an empty sample list")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValidationError(f"split ratios must sum to 1, got {ratios}")
    image_ids = sorted({s.image_id for s in samples})
    rng = random.Random(seed)
    rng.shuffle(image_ids)
    n = len(image_ids)
    cut1 = round(n * ratios[0])
    cut2 = round(n * (ratios[0] + ratios[1]))
    split_of: dict[int, str] = {}
    for i, image_id in enumerate(image_ids):
        split_of[image_id] = "train" if i < cut1 else ("val" if i < cut2 else "test")
    assigned = canonical_order(
        replace(s, split=split_of[s.image_id]) for s in samples
    )
    if index is not None:
        object_categories = index.categories.object_categories
        part_categories = index.categories.part_categories
    else:
        object_categories, part_categories = (), ()
    return MmrDataset(
        samples=assigned,
        object_categories=object_categories,
        part_categories=part_categories,
    )


def partition_test(dataset: MmrDataset) -> MmrDataset:
    """Route test QAs into subset views by granularity.

    A test sample whose QA pairs span several granularities is duplicated,
    once per subset, each copy holding only the matching QA pairs. Non-test
    samples pass through unchanged. The unlabeled test samples are kept too,
    so the union ("all test") view remains directly computable.
    """
    out: list[MmrSample] = []
    for sample in dataset.samples:
        out.append(sample)
        if sample.split != "test" or sample.test_subset is not None:
            continue
        by_subset: dict[str, list[QaRecord]] = {}
        for qa in sample.qa_pairs:
            by_subset.setdefault(_SUBSET_OF_GRANULARITY[qa.granularity], []).append(qa)
        for subset in TEST_SUBSETS:
            if subset in by_subset:
                out.append(
                    replace(sample, qa_pairs=tuple(by_subset[subset]), test_subset=subset)
                )
    return replace(dataset, samples=canonical_order(out))


# -- on-disk format ----------------------------------------------------------


def _split_document(dataset: MmrDataset, split: str) -> dict:
    return {
        "format_version": dataset.format_version,
        "split": split,
        "categories": {
            "objects": [list(c) for c in dataset.object_categories],
            "parts": [list(c) for c in dataset.part_categories],
        },
        "samples": [s.to_dict() for s in dataset.samples if s.split == split and s.test_subset is None],
        "subset_views": {
            subset: [
                s.to_dict()
                for s in dataset.samples
                if s.split == split and s.test_subset == subset
            ]
            for subset in TEST_SUBSETS
        }
        if split == "test"
        else {},
    }


def write_mmr(dataset: MmrDataset, directory: str | Path) -> list[Path]:
    """Write one JSON document per non-empty split; returns the paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    present = {s.split for s in dataset.samples if s.split is not None}
    for split in SPLITS:
        if split not in present:
            continue
        path = directory / f"mmr_{split}.json"
        doc = _split_document(dataset, split)
        path.write_text(
            json.dumps(doc, ensure_ascii=False, sort_keys=True, indent=1), encoding="utf-8"
        )
        written.append(path)
    return written


def _parse_target(doc: dict, where: str) -> TargetRecord:
    seg = _get(doc, "segmentation", where)
    if not isinstance(seg, dict) or "size" not in seg or "counts" not in seg:
        raise ValidationError(f"{where}.segmentation: expected an RLE object")
    bbox = _get(doc, "bbox", where)
    if len(bbox) != 4:
        raise ValidationError(f"{where}.bbox: expected 4 values, got {len(bbox)}")
    return TargetRecord(
        ann_id=int(_get(doc, "ann_id", where)),
        label=str(_get(doc, "label", where)),
        category=str(_get(doc, "category", where, required=False, default="")),
        is_part=bool(_get(doc, "is_part", where, required=False, default=False)),
        bbox=tuple(float(v) for v in bbox),
        segmentation=masks.rle_to_dict(seg),
    )


def _parse_qa(doc: dict, where: str) -> QaRecord:
    targets = _get(doc, "targets", where, required=False, default=[])
    parsed_targets = tuple(
        _parse_target(t, f"{where}.targets[{i}]") for i, t in enumerate(targets)
    )
    answer = str(_get(doc, "answer", where))
    granularity = doc.get("granularity")
    if granularity is None:
        kinds = {t.is_part for t in parsed_targets}
        granularity = "mixed" if kinds == {True, False} else ("part" if kinds == {True} else "object")
    qa_id = str(_get(doc, "qa_id", where))
    n_markers = answer.count(SEG)
    if n_markers != len(parsed_targets):
        raise ValidationError(
            f"{where}: qa {qa_id!r} has {n_markers} {SEG} markers but {len(parsed_targets)} targets"
        )
    return QaRecord(
        qa_id=qa_id,
        question=str(_get(doc, "question", where)),
        answer=answer,
        granularity=granularity,
        targets=parsed_targets,
    )


def _parse_sample(doc: dict, where: str, split: str, test_subset: str | None) -> MmrSample:
    qa_docs = _get(doc, "qa_pairs", where, required=False, default=[])
    return MmrSample(
        image_id=int(_get(doc, "image_id", where)),
        file_name=str(_get(doc, "file_name", where, required=False, default="")),
        width=int(_get(doc, "width", where)),
        height=int(_get(doc, "height", where)),
        qa_pairs=tuple(_parse_qa(q, f"{where}.qa_pairs[{i}]") for i, q in enumerate(qa_docs)),
        split=split,
        test_subset=test_subset or doc.get("test_subset"),
    )


def read_mmr(directory: str | Path, splits: tuple[str, ...] = SPLITS) -> MmrDataset:
    """Read split documents from a directory (missing splits are skipped)."""
    directory = Path(directory)
    samples: list[MmrSample] = []
    object_categories: tuple = ()
    part_categories: tuple = ()
    version = FORMAT_VERSION
    found = False
    for split in splits:
        path = directory / f"mmr_{split}.json"
        if not path.exists():
            continue
        found = True
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from exc
        version = doc.get("format_version", FORMAT_VERSION)
        cats = doc.get("categories", {})
        if cats.get("objects"):
            object_categories = tuple((int(c[0]), str(c[1])) for c in cats["objects"])
        if cats.get("parts"):
            part_categories = tuple((int(c[0]), str(c[1]), int(c[2])) for c in cats["parts"])
        for i, raw in enumerate(doc.get("samples", [])):
            samples.append(_parse_sample(raw, f"{path.name}:samples[{i}]", split, None))
        for subset, subset_samples in (doc.get("subset_views") or {}).items():
            if subset not in TEST_SUBSETS:
                raise ValidationError(f"{path.name}: unknown subset view {subset!r}")
            for i, raw in enumerate(subset_samples):
                samples.append(
                    _parse_sample(raw, f"{path.name}:subset_views.{subset}[{i}]", split, subset)
                )
    if not found:
        raise ParseError(f"no mmr_<split>.json documents found in {directory}")
    return MmrDataset(
        samples=canonical_order(samples),
        object_categories=object_categories,
        part_categories=part_categories,
        format_version=version,
    )


# -- statistics ---------------------------------------------------------------


@dataclass(frozen=True)
class StatsReport:
    n_qa: int
    n_images: int
    split_totals: dict
    object_category_questions: dict
    part_category_questions: dict
    target_count_hist: dict
    object_expressions: int
    part_expressions: int
    mean_targets: float
    max_targets: int

    def to_dict(self) -> dict:
        return {
            "n_qa": self.n_qa,
            "n_images": self.n_images,
            "split_totals": dict(self.split_totals),
            "object_category_questions": dict(self.object_category_questions),
            "part_category_questions": dict(self.part_category_questions),
            "target_count_hist": {str(k): v for k, v in sorted(self.target_count_hist.items())},
            "object_expressions": self.object_expressions,
            "part_expressions": self.part_expressions,
            "mean_targets": self.mean_targets,
            "max_targets": self.max_targets,
        }

    def format_table(self) -> str:
        lines = [
            f"QA pairs:            {self.n_qa}",
            f"images:              {self.n_images}",
        ]
        for split, count in self.split_totals.items():
            lines.append(f"  {split:<18} {count}")
        lines += [
            f"object expressions:  {self.object_expressions}",
            f"part expressions:    {self.part_expressions}",
            f"targets per answer:  mean {self.mean_targets:.2f}, max {self.max_targets}",
        ]
        return "\n".join(lines)


def compute_stats(dataset: MmrDataset) -> StatsReport:
    """Dataset-wide statistics over the primary (non-subset-view) samples."""
    primary = [s for s in dataset.samples if s.test_subset is None]
    if not any(s.qa_pairs for s in primary):
        raise ValidationError("dataset has no QA pairs")
    obj_freq: Counter = Counter()
    part_freq: Counter = Counter()
    hist: Counter = Counter()
    object_expr = 0
    part_expr = 0
    n_qa = 0
    for sample in primary:
        for qa in sample.qa_pairs:
            n_qa += 1
            hist[len(qa.targets)] += 1
            for target in qa.targets:
                if target.is_part:
                    part_expr += 1
                    part_freq[target.category] += 1
                else:
                    object_expr += 1
                    obj_freq[target.category] += 1
    total_targets = object_expr + part_expr
    return StatsReport(
        n_qa=n_qa,
        n_images=len({s.image_id for s in primary}),
        split_totals=MmrDataset(
            samples=tuple(primary),
            object_categories=dataset.object_categories,
            part_categories=dataset.part_categories,
        ).split_totals(),
        object_category_questions=dict(obj_freq),
        part_category_questions=dict(part_freq),
        target_count_hist=dict(hist),
        object_expressions=object_expr,
        part_expressions=part_expr,
        mean_targets=total_targets / n_qa if n_qa else 0.0,
        max_targets=max(hist) if hist else 0,
    )


def export_histograms(stats: StatsReport, directory: str | Path) -> list[Path]:
    """Plain CSV exports of the distributions, for external plotting."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    tables = {
        "target_count_hist.csv": ("n_targets,qa_pairs", sorted(stats.target_count_hist.items())),
        "object_category_questions.csv": (
            "category,questions",
            sorted(stats.object_category_questions.items(), key=lambda kv: (-kv[1], kv[0])),
        ),
        "part_category_questions.csv": (
            "category,questions",
            sorted(stats.part_category_questions.items(), key=lambda kv: (-kv[1], kv[0])),
        ),
    }
    for name, (header, rows) in tables.items():
        path = directory / name
        lines = [header] + [f"{k},{v}" for k, v in rows]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(path)
    return written


def records_to_dataset(
    records: list[GenerationRecord],
    index: AnnotationIndex,
    ratios: tuple[float, float, float] = DEFAULT_RATIOS,
    seed: int = 0,
) -> MmrDataset:
    """records -> samples -> splits -> test subset views, in one call."""
    qas = [qa for record in records for qa in record.qa_pairs]
    samples = assemble_samples(qas, index)
    dataset = assign_splits(samples, ratios, seed, index=index)
    return partition_test(dataset)
