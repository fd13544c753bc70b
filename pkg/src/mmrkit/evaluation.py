"""Score predictions against dataset ground truth; build query and frequency
subsets.

Alignment is positional: the k-th predicted mask is paired with the k-th
ground-truth target of the QA pair, mirroring the one-marker-per-target
answer protocol. Cardinality mismatches are penalized symmetrically — missing
predictions are scored as empty masks against their targets, surplus
predictions are scored against empty ground truth — so both under- and
over-segmentation cost score.

Prediction files are line-delimited JSON records:
``{"qa_id": ..., "masks": [<RLE>, ...], "answer_text": optional}``.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import masks
from .annotations import AnnotationIndex, display_name
from .dataset import MmrDataset, QaRecord, TEST_SUBSETS
from .errors import ParseError, ValidationError
from .metrics import MetricReport, ScoredPair, build_report

logger = logging.getLogger(__name__)

DEFAULT_QUERY_TEMPLATE = "Can you segment the {CATEGORIES}?"


@dataclass(frozen=True)
class EvalPrediction:
    qa_id: str
    predicted_masks: tuple[dict, ...]  # RLE objects, in [SEG] order
    raw_answer_text: str | None = None


def read_predictions(path: str | Path) -> list[EvalPrediction]:
    preds = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
            preds.append(
                EvalPrediction(
                    qa_id=str(doc["qa_id"]),
                    predicted_masks=tuple(doc.get("masks", [])),
                    raw_answer_text=doc.get("answer_text"),
                )
            )
    return preds


def write_predictions(preds: list[EvalPrediction], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pred in preds:
            doc = {
                "qa_id": pred.qa_id,
                "masks": [masks.rle_to_dict(m) for m in pred.predicted_masks],
            }
            if pred.raw_answer_text is not None:
                doc["answer_text"] = pred.raw_answer_text
            fh.write(json.dumps(doc, ensure_ascii=False, sort_keys=True) + "\n")


def select_qas(
    dataset: MmrDataset,
    split: str | None = None,
    subset: str | None = None,
) -> dict[str, tuple[QaRecord, tuple[int, int]]]:
    """qa_id -> (record, image size) for the requested split/subset.

    ``subset=None`` selects the union view (primary samples only);
    naming a subset selects that routed view.
    """
    if subset is not None and subset not in TEST_SUBSETS:
        raise ValidationError(f"unknown test subset {subset!r}")
    selected: dict[str, tuple[QaRecord, tuple[int, int]]] = {}
    for sample in dataset.samples:
        if split is not None and sample.split != split:
            continue
        if sample.test_subset != subset:
            continue
        for qa in sample.qa_pairs:
            selected[qa.qa_id] = (qa, (sample.height, sample.width))
    return selected


def score_qa(
    qa: QaRecord,
    image_size: tuple[int, int],
    predicted: tuple[dict, ...],
) -> list[ScoredPair]:
    """Positionally pair predicted masks with targets, padding with empties."""
    height, width = image_size
    gt = [masks.decode_rle(t.segmentation) for t in qa.targets]
    pred = [masks.decode_rle(p) for p in predicted]
    for k, mask in enumerate(pred):
        if mask.shape != (height, width):
            raise ValidationError(
                f"qa {qa.qa_id}: predicted mask {k} has shape {mask.shape}, "
                f"image is {(height, width)}"
            )
    empty = np.zeros((height, width), dtype=bool)
    n = max(len(gt), len(pred))
    if n == 0:
        # a QA with no targets and no predicted masks: correctly-empty
        # prediction, one perfect pair (empty vs empty scores 1.0)
        return [ScoredPair(sample_id=qa.qa_id, target_index=0, intersection=0, union=0)]
    pairs = []
    for k in range(n):
        g = gt[k] if k < len(gt) else empty
        p = pred[k] if k < len(pred) else empty
        pairs.append(
            ScoredPair(
                sample_id=qa.qa_id,
                target_index=k,
                intersection=masks.intersection_area(g, p),
                union=masks.union_area(g, p),
            )
        )
    return pairs


def align_and_score(
    preds: list[EvalPrediction],
    dataset: MmrDataset,
    *,
    split: str | None = "test",
    subset: str | None = None,
    giou_mode: str = "per_sample",
    keep_per_sample: bool = False,
) -> MetricReport:
    """Score a prediction set over one split/subset selection.

    Every prediction must reference a selected qa_id; ground-truth QAs with
    no prediction record are scored as all-empty predictions.
    """
    selected = select_qas(dataset, split, subset)
    if not selected:
        raise ValidationError(f"no QA pairs selected for split={split!r} subset={subset!r}")
    by_id = {}
    for pred in preds:
        if pred.qa_id not in selected:
            raise ValidationError(f"prediction references unknown qa_id {pred.qa_id!r}")
        by_id[pred.qa_id] = pred
    pairs: list[ScoredPair] = []
    for qa_id in sorted(selected):
        qa, size = selected[qa_id]
        pred = by_id.get(qa_id)
        pairs.extend(score_qa(qa, size, pred.predicted_masks if pred else ()))
    name = (split or "all") + (f"/{subset}" if subset else "")
    return build_report(name, pairs, giou_mode, keep_per_sample=keep_per_sample)


def gt_as_predictions(dataset: MmrDataset, split: str | None = "test", subset=None) -> list[EvalPrediction]:
    """Oracle predictions straight from ground truth (sanity checking)."""
    selected = select_qas(dataset, split, subset)
    return [
        EvalPrediction(qa_id=qa_id, predicted_masks=tuple(t.segmentation for t in qa.targets))
        for qa_id, (qa, _) in selected.items()
    ]


# -- multi-target query curation ----------------------------------------------


@dataclass(frozen=True)
class CuratedQuery:
    image_id: int
    categories: tuple[str, ...]
    query_text: str
    gt_masks: dict  # category name -> RLE of the per-category union

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "categories": list(self.categories),
            "query_text": self.query_text,
            "gt_masks": {k: masks.rle_to_dict(v) for k, v in self.gt_masks.items()},
        }


def _oxford_join(names: list[str]) -> str:
    return ", ".join(names[:-1]) + ", and " + names[-1]


def curate_multitarget_queries(
    index: AnnotationIndex,
    k_range: tuple[int, int] = (4, 6),
    seed: int = 0,
    template: str = DEFAULT_QUERY_TEMPLATE,
) -> list[CuratedQuery]:
    """Build segment-these-categories queries from object annotations.

    Per image, k in [k_min, min(k_max, available)] object categories are
    sampled without replacement (seeded); images with fewer than k_min
    distinct categories are skipped. Ground truth per category is the union
    of that category's instance masks.
    """
    k_min, k_max = k_range
    rng = random.Random(seed)
    queries = []
    for image_id in sorted(index.images):
        by_category: dict[int, list[int]] = {}
        for ann_id in index.image_objects.get(image_id, ()):
            by_category.setdefault(index.objects[ann_id].category_id, []).append(ann_id)
        if len(by_category) < k_min:
            logger.info(
                "image %s skipped: %d object categories < %d", image_id, len(by_category), k_min
            )
            continue
        ordered = sorted(by_category)
        k = rng.randint(k_min, min(k_max, len(ordered)))
        chosen = rng.sample(ordered, k)
        names = [display_name(index.categories.object_name(cid)) for cid in chosen]
        gt: dict[str, dict] = {}
        for cid, name in zip(chosen, names):
            union = None
            for ann_id in by_category[cid]:
                mask = index.instance_mask(ann_id)
                union = mask if union is None else (union | mask)
            gt[name] = masks.compress_rle(masks.encode_rle(union))
        queries.append(
            CuratedQuery(
                image_id=image_id,
                categories=tuple(names),
                query_text=template.format(CATEGORIES=_oxford_join(names)),
                gt_masks=gt,
            )
        )
    return queries


# -- frequency subsets ---------------------------------------------------------


@dataclass(frozen=True)
class FrequencySubsets:
    kind: str
    upper_categories: tuple[str, ...]
    lower_categories: tuple[str, ...]
    upper_qa_ids: tuple[str, ...]
    lower_qa_ids: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "upper_categories": list(self.upper_categories),
            "lower_categories": list(self.lower_categories),
            "upper_qa_ids": list(self.upper_qa_ids),
            "lower_qa_ids": list(self.lower_qa_ids),
        }


def subset_by_frequency(
    dataset: MmrDataset,
    top_n: int = 10,
    bottom_n: int = 10,
    kind: str = "object",
    *,
    split: str | None = "test",
) -> FrequencySubsets:
    """Upper/lower QA subsets from the most/least question-frequent categories.

    Ranking covers the categories of the requested kind that actually occur
    in the selection; ties break by ascending category id (falling back to
    name for categories absent from the table) for determinism.
    """
    if kind not in ("object", "part"):
        raise ValidationError(f"kind must be 'object' or 'part', got {kind!r}")
    selected = select_qas(dataset, split, None)
    if kind == "object":
        id_of = {display_name(name): cid for cid, name in dataset.object_categories}
    else:
        id_of = {display_name(name): cid for cid, name, _ in dataset.part_categories}
    freq: dict[str, int] = {}
    qa_categories: dict[str, set[str]] = {}
    for qa_id, (qa, _) in selected.items():
        cats = {t.category for t in qa.targets if t.is_part == (kind == "part")}
        qa_categories[qa_id] = cats
        for cat in cats:
            freq[cat] = freq.get(cat, 0) + 1
    if top_n + bottom_n > len(freq):
        raise ValidationError(
            f"top_n + bottom_n = {top_n + bottom_n} exceeds the {len(freq)} "
            f"{kind} categories present"
        )

    def tie_key(name: str):
        return (id_of.get(name, 1 << 31), name)

    # One descending ranking; upper is its head and lower its tail, so the
    # two never overlap as long as top_n + bottom_n fits the category count.
    ranked = sorted(freq.items(), key=lambda kv: (-kv[1],) + tie_key(kv[0]))
    upper = tuple(name for name, _ in ranked[:top_n])
    lower = tuple(name for name, _ in ranked[len(ranked) - bottom_n :])
    upper_set, lower_set = set(upper), set(lower)
    upper_qas = tuple(
        qa_id for qa_id in sorted(selected) if qa_categories[qa_id] & upper_set
    )
    lower_qas = tuple(
        qa_id for qa_id in sorted(selected) if qa_categories[qa_id] & lower_set
    )
    return FrequencySubsets(
        kind=kind,
        upper_categories=upper,
        lower_categories=lower,
        upper_qa_ids=upper_qas,
        lower_qa_ids=lower_qas,
    )
