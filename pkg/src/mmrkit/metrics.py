"""Segmentation quality metrics and their split-level aggregation.

Two scores are reported everywhere: gIoU, the mean of per-unit IoUs (the unit
is a sample or an individual target depending on granularity), and cIoU, the
ratio of summed intersection areas to summed union areas over the whole
evaluation set. cIoU weights by region area, so large regions dominate it;
gIoU weights every unit equally.

All aggregation happens on integer (intersection, union) pixel counts; IoU
floats are derived at the end so repeated aggregation cannot drift.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

from .errors import ValidationError

GIOU_MODES = ("per_sample", "per_target")


@dataclass(frozen=True)
class ScoredPair:
    """One (ground truth, prediction) mask comparison, reduced to pixel sums."""

    sample_id: str | int
    target_index: int
    intersection: int
    union: int

    def __post_init__(self):
        if self.intersection < 0 or self.union < 0:
            raise ValidationError("pixel counts must be non-negative")
        if self.intersection > self.union:
            raise ValidationError(
                f"intersection {self.intersection} exceeds union {self.union}"
            )

    @property
    def iou(self) -> float:
        """IoU of the pair; defined as 1.0 when both masks are empty."""
        if self.union == 0:
            return 1.0
        return self.intersection / self.union


def _group_by_sample(pairs) -> "OrderedDict[str | int, list[ScoredPair]]":
    groups: OrderedDict[str | int, list[ScoredPair]] = OrderedDict()
    for pair in pairs:
        groups.setdefault(pair.sample_id, []).append(pair)
    return groups


def g_iou(pairs: list[ScoredPair], granularity: str = "per_sample") -> float:
    """Mean IoU; per_sample averages within each sample before averaging."""
    if not pairs:
        raise ValidationError("g_iou needs at least one scored pair")
    if granularity not in GIOU_MODES:
        raise ValidationError(f"unknown granularity {granularity!r}")
    if granularity == "per_target":
        return sum(p.iou for p in pairs) / len(pairs)
    groups = _group_by_sample(pairs)
    sample_means = [sum(p.iou for p in g) / len(g) for g in groups.values()]
    return sum(sample_means) / len(sample_means)


def c_iou(pairs: list[ScoredPair]) -> float:
    """Cumulative intersection over cumulative union across all pairs."""
    if not pairs:
        raise ValidationError("c_iou needs at least one scored pair")
    total_union = sum(p.union for p in pairs)
    if total_union == 0:
        return 1.0
    return sum(p.intersection for p in pairs) / total_union


def m_iou(pairs: list[ScoredPair]) -> float:
    """Mean IoU over expressions; each expression must hold exactly one pair."""
    if not pairs:
        raise ValidationError("m_iou needs at least one scored pair")
    groups = _group_by_sample(pairs)
    bad = [sid for sid, g in groups.items() if len(g) != 1]
    if bad:
        raise ValidationError(
            f"m_iou expects one pair per expression; offenders: {bad[:5]}"
        )
    return g_iou(pairs, granularity="per_target")


@dataclass(frozen=True)
class MetricReport:
    """Aggregated scores for one split or subset."""

    split_name: str
    g_iou: float
    c_iou: float
    n_samples: int
    n_targets: int
    giou_granularity: str = "per_sample"
    per_sample: tuple[tuple[str | int, float], ...] | None = None

    def to_dict(self) -> dict:
        out = {
            "split": self.split_name,
            "gIoU": self.g_iou,
            "cIoU": self.c_iou,
            "n_samples": self.n_samples,
            "n_targets": self.n_targets,
            "giou_granularity": self.giou_granularity,
        }
        if self.per_sample is not None:
            out["per_sample"] = {str(k): v for k, v in self.per_sample}
        return out


def build_report(
    split_name: str,
    pairs: list[ScoredPair],
    giou_granularity: str = "per_sample",
    keep_per_sample: bool = False,
) -> MetricReport:
    groups = _group_by_sample(pairs)
    per_sample = None
    if keep_per_sample:
        per_sample = tuple(
            (sid, sum(p.iou for p in g) / len(g)) for sid, g in groups.items()
        )
    return MetricReport(
        split_name=split_name,
        g_iou=g_iou(pairs, giou_granularity),
        c_iou=c_iou(pairs),
        n_samples=len(groups),
        n_targets=len(pairs),
        giou_granularity=giou_granularity,
        per_sample=per_sample,
    )


def format_report_table(reports: list[MetricReport]) -> str:
    """Fixed-width table, one row per split/subset."""
    header = f"{'split':<24} {'gIoU':>8} {'cIoU':>8} {'samples':>8} {'targets':>8}"
    lines = [header, "-" * len(header)]
    for r in reports:
        lines.append(
            f"{r.split_name:<24} {r.g_iou:>8.4f} {r.c_iou:>8.4f} "
            f"{r.n_samples:>8d} {r.n_targets:>8d}"
        )
    return "\n".join(lines)
