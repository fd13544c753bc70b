"""Automated screening and multi-inspector filtering of generated QA pairs.

Three criteria are screened and flagged: ``logicality`` (questions must not
leak coordinates or strong location hints), ``coherence`` (answers must only
mention annotated targets) and ``clarity`` (no ill-posed questions such as
asking for the function of a named target).

Removal authority rests with the human inspectors: in ``paper`` mode a QA is
removed iff two or more distinct inspectors flagged it. Automated screening
results are advisory overlays shown during review; ``strict`` mode
additionally removes QAs with any automatic logicality violation, for
unattended pipelines.
"""

from __future__ import annotations

import json
import re
import threading
import time
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .annotations import AnnotationIndex
from .errors import ValidationError
from .synthesis import QAPair, SEG

RULES = ("logicality", "coherence", "clarity")

COORDINATE_PATTERNS = (
    # bracketed list of 2-4 numbers, the typical leaked bbox/point
    r"[\[(]\s*-?\d+(?:\.\d+)?(?:\s*,\s*-?\d+(?:\.\d+)?){1,3}\s*[\])]",
    r"\bbbox\b",
    r"\bbounding\s+box\b",
    r"\bcoordinates?\b",
    r"\b[xy]\s*=\s*-?\d",
    r"\bpixel\s+(?:position|location)\b",
)

CLARITY_PATTERNS = (
    r"\bwhat\s+is\s+the\s+function\s+of\b",
    r"\bwhat\s+are\s+the\s+functions\s+of\b",
    r"\bwhat\s+is\s+the\s+purpose\s+of\b",
)


@dataclass(frozen=True)
class Violation:
    qa_id: str
    rule: str
    detail: str
    source: str = "auto"  # auto | inspector

    def __post_init__(self):
        if self.rule not in RULES:
            raise ValidationError(f"unknown rule {self.rule!r}; expected one of {RULES}")

    def to_dict(self) -> dict:
        return {"qa_id": self.qa_id, "rule": self.rule, "detail": self.detail, "source": self.source}


@dataclass(frozen=True)
class InspectorVerdict:
    inspector_id: str
    qa_id: str
    flagged: bool
    rule: str | None = None
    note: str | None = None
    corrected_answer: str | None = None
    timestamp: float = 0.0

    def __post_init__(self):
        if self.rule is not None and self.rule not in RULES:
            raise ValidationError(f"unknown rule {self.rule!r}; expected one of {RULES}")

    def to_dict(self) -> dict:
        return {
            "inspector_id": self.inspector_id,
            "qa_id": self.qa_id,
            "flagged": self.flagged,
            "rule": self.rule,
            "note": self.note,
            "corrected_answer": self.corrected_answer,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "InspectorVerdict":
        return cls(
            inspector_id=str(doc["inspector_id"]),
            qa_id=str(doc["qa_id"]),
            flagged=bool(doc["flagged"]),
            rule=doc.get("rule"),
            note=doc.get("note"),
            corrected_answer=doc.get("corrected_answer"),
            timestamp=float(doc.get("timestamp", 0.0)),
        )


@dataclass(frozen=True)
class FilterReport:
    total_in: int
    removed: int
    retained: int
    removal_rate: float
    per_rule: dict
    mode: str

    def to_dict(self) -> dict:
        return {
            "total_in": self.total_in,
            "removed": self.removed,
            "retained": self.retained,
            "removal_rate": self.removal_rate,
            "per_rule": dict(self.per_rule),
            "mode": self.mode,
        }


def auto_screen(
    qa: QAPair,
    index: AnnotationIndex | None = None,
    *,
    extra_coordinate_patterns: tuple[str, ...] = (),
    extra_clarity_patterns: tuple[str, ...] = (),
) -> list[Violation]:
    """Advisory rule screening for one QA pair."""
    violations: list[Violation] = []
    question = qa.question
    for pattern in COORDINATE_PATTERNS + tuple(extra_coordinate_patterns):
        m = re.search(pattern, question, re.IGNORECASE)
        if m:
            violations.append(
                Violation(qa.qa_id, "logicality", f"question leaks location: {m.group(0)!r}")
            )
            break
    for mention in qa.unbound_mentions:
        violations.append(
            Violation(qa.qa_id, "coherence", f"answer mentions unannotated target: {mention!r}")
        )
    if index is not None:
        known = set(index.objects) | set(index.parts)
        for ann_id in qa.targets:
            if ann_id not in known:
                violations.append(
                    Violation(qa.qa_id, "coherence", f"target ann {ann_id} missing from annotations")
                )
    for pattern in CLARITY_PATTERNS + tuple(extra_clarity_patterns):
        m = re.search(pattern, question, re.IGNORECASE)
        if m:
            violations.append(
                Violation(qa.qa_id, "clarity", f"ill-posed question pattern: {m.group(0)!r}")
            )
            break
    return violations


class VerdictStore:
    """Append-only verdict log with replace-by-latest semantics per
    (inspector, qa). Appends are serialized and atomic; reads snapshot."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._mem: list[InspectorVerdict] = []
        if self.path is not None and self.path.exists():
            self._mem = self._read_file()

    def _read_file(self) -> list[InspectorVerdict]:
        verdicts = []
        with self.path.open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    verdicts.append(InspectorVerdict.from_dict(json.loads(line)))
        return verdicts

    def append(self, verdict: InspectorVerdict) -> None:
        with self._lock:
            self._mem.append(verdict)
            if self.path is not None:
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(verdict.to_dict(), sort_keys=True) + "\n")

    def latest(self) -> dict[tuple[str, str], InspectorVerdict]:
        """Consistent snapshot: the latest verdict per (inspector, qa)."""
        with self._lock:
            snapshot = list(self._mem)
        latest: dict[tuple[str, str], InspectorVerdict] = {}
        for v in snapshot:
            latest[(v.inspector_id, v.qa_id)] = v
        return latest

    def flag_count(self, qa_id: str) -> int:
        return sum(
            1 for (_, qid), v in self.latest().items() if qid == qa_id and v.flagged
        )

    def inspectors_seen(self) -> set[str]:
        return {i for (i, _) in self.latest()}


def record_verdict(
    store: VerdictStore,
    verdict: InspectorVerdict,
    *,
    known_qa_ids: set[str] | None = None,
    known_inspectors: set[str] | None = None,
    threshold: int = 2,
) -> dict:
    """Persist a verdict; resubmission replaces the inspector's earlier one."""
    if known_qa_ids is not None and verdict.qa_id not in known_qa_ids:
        raise ValidationError(f"unknown qa_id {verdict.qa_id!r}")
    if known_inspectors is not None and verdict.inspector_id not in known_inspectors:
        raise ValidationError(f"unknown inspector {verdict.inspector_id!r}")
    if verdict.timestamp == 0.0:
        verdict = InspectorVerdict(
            inspector_id=verdict.inspector_id,
            qa_id=verdict.qa_id,
            flagged=verdict.flagged,
            rule=verdict.rule,
            note=verdict.note,
            corrected_answer=verdict.corrected_answer,
            timestamp=time.time(),
        )
    store.append(verdict)
    count = store.flag_count(verdict.qa_id)
    return {
        "qa_id": verdict.qa_id,
        "flag_count": count,
        "threshold_met": count >= threshold,
    }


def distinct_flags(verdicts: dict[tuple[str, str], InspectorVerdict]) -> Counter:
    """qa_id -> number of distinct inspectors whose latest verdict flags it."""
    counts: Counter = Counter()
    for (_, qa_id), v in verdicts.items():
        if v.flagged:
            counts[qa_id] += 1
    return counts


def apply_filter(
    qas: list[QAPair],
    verdicts: VerdictStore | dict[tuple[str, str], InspectorVerdict],
    mode: str = "paper",
    *,
    auto_violations: dict[str, list[Violation]] | None = None,
    threshold: int = 2,
) -> tuple[list[QAPair], FilterReport]:
    """Remove QAs flagged by >= threshold distinct inspectors.

    ``strict`` mode also removes QAs with an automatic logicality violation.
    Inspector corrections are applied to retained QAs when the corrected
    answer keeps the marker/target bookkeeping intact.
    """
    if mode not in ("paper", "strict"):
        raise ValidationError(f"unknown filter mode {mode!r}")
    latest = verdicts.latest() if isinstance(verdicts, VerdictStore) else dict(verdicts)
    flags = distinct_flags(latest)

    corrections: dict[str, InspectorVerdict] = {}
    for v in latest.values():
        if v.corrected_answer is not None:
            prior = corrections.get(v.qa_id)
            if prior is None or v.timestamp > prior.timestamp:
                corrections[v.qa_id] = v

    auto_violations = auto_violations or {}
    retained: list[QAPair] = []
    removed_rules: Counter = Counter()
    removed = 0
    for qa in qas:
        kill = flags.get(qa.qa_id, 0) >= threshold
        if not kill and mode == "strict":
            kill = any(v.rule == "logicality" for v in auto_violations.get(qa.qa_id, ()))
        if kill:
            removed += 1
            cited = [
                v.rule or "unspecified"
                for (_, qid), v in latest.items()
                if qid == qa.qa_id and v.flagged
            ]
            if not cited and mode == "strict":
                cited = ["logicality"]
            removed_rules.update(cited)
            continue
        correction = corrections.get(qa.qa_id)
        if correction is not None and correction.corrected_answer.count(SEG) == len(qa.targets):
            qa = QAPair(
                qa_id=qa.qa_id,
                image_id=qa.image_id,
                question=qa.question,
                answer=correction.corrected_answer,
                targets=qa.targets,
                granularity=qa.granularity,
                provenance=qa.provenance,
                unbound_mentions=qa.unbound_mentions,
            )
        retained.append(qa)

    total = len(qas)
    report = FilterReport(
        total_in=total,
        removed=removed,
        retained=len(retained),
        removal_rate=(removed / total) if total else 0.0,
        per_rule=dict(removed_rules),
        mode=mode,
    )
    return retained, report
