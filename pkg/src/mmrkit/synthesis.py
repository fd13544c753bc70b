"""Turn raw generation output into structured QA pairs bound to annotations.

Binding works on the instance labels produced by ``instance_label``:
``category_k`` for objects, ``category_k's part`` for parts. Generated prose
often drops the ``_k`` ordinal when an image contains a single instance of a
category, so ordinal-free aliases are accepted exactly in that case; with
several same-class instances an ordinal-free mention is ambiguous and is
flagged for curation instead of being guessed. Every bound mention gets a
``[SEG]`` marker appended immediately after it (unless one is already
there), and the marker count always equals the target count.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

from .annotations import AnnotationIndex, display_name, instance_label
from .errors import ValidationError
from .gateway import RawResponse

SEG = "[SEG]"

GRANULARITIES = ("object", "part", "mixed")


@dataclass(frozen=True)
class QAPair:
    qa_id: str
    image_id: int
    question: str
    answer: str
    targets: tuple[int, ...]
    granularity: str
    provenance: str = ""
    unbound_mentions: tuple[str, ...] = ()

    def __post_init__(self):
        n_markers = self.answer.count(SEG)
        if n_markers != len(self.targets):
            raise ValidationError(
                f"qa {self.qa_id}: answer has {n_markers} {SEG} markers "
                f"but {len(self.targets)} targets"
            )
        if self.granularity not in GRANULARITIES:
            raise ValidationError(f"qa {self.qa_id}: bad granularity {self.granularity!r}")


@dataclass(frozen=True)
class GenerationRecord:
    image_id: int
    caption: str
    raw_text: str
    parse_status: str  # ok | partial | failed
    qa_pairs: tuple[QAPair, ...]
    provenance: str = ""


def granularity_of(targets, index: AnnotationIndex) -> str:
    kinds = {("part" if index.is_part(t) else "object") for t in targets}
    if kinds == {"object"}:
        return "object"
    if kinds == {"part"}:
        return "part"
    return "mixed"


_HEADER = re.compile(
    r"^\s*(?:[*#>\-\s]*)\s*(?P<kind>global\s+caption|caption|question|answer|q|a)"
    r"\s*(?P<num>\d+)?\s*[:.)\]]\s*(?P<rest>.*)$",
    re.IGNORECASE,
)


def parse_text(text: str) -> tuple[str, list[tuple[str, str]]]:
    """Extract (caption, [(question, answer), ...]) from model output.

    Tolerates numbering drift, markdown bullets/bold and multi-line bodies.
    Questions without a following answer are dropped.
    """
    caption_parts: list[str] = []
    questions: list[str] = []
    answers: list[str] = []
    current: list[str] | None = None
    for raw_line in text.splitlines():
        line = raw_line.strip().strip("*").strip()
        m = _HEADER.match(line)
        if m:
            kind = m.group("kind").lower()
            rest = m.group("rest").strip().strip("*").strip()
            if kind in ("caption", "global caption"):
                current = caption_parts
            elif kind in ("question", "q"):
                questions.append("")
                current = questions
            else:
                answers.append("")
                current = answers
            if current is questions or current is answers:
                if rest:
                    current[-1] = rest
            elif rest:
                current.append(rest)
        elif line and current is not None:
            if current is caption_parts:
                current.append(line)
            else:
                current[-1] = (current[-1] + " " + line).strip()
        elif not line:
            if current is caption_parts:
                current = None
    caption = " ".join(caption_parts).strip()
    pairs = [(q, a) for q, a in zip(questions, answers) if q and a]
    return caption, pairs


def parse_response(resp: RawResponse | str) -> tuple[str, list[tuple[str, str]]]:
    text = resp.response_text if isinstance(resp, RawResponse) else resp
    return parse_text(text)


# -- label matching ---------------------------------------------------------


def _alias_pattern(alias: str) -> re.Pattern:
    parts = []
    for ch in alias:
        if ch in (" ", "_"):
            parts.append(r"[ _]")
        elif ch in ("'", "’"):
            parts.append(r"['’]")
        else:
            parts.append(re.escape(ch))
    return re.compile(r"(?<!\w)" + "".join(parts) + r"(?!\w)", re.IGNORECASE)


_POSSESSIVE_TAIL = re.compile(r"['’]s\s+\w")


def _image_aliases(index: AnnotationIndex, image_id: int) -> list[tuple[str, int, bool]]:
    """(alias, ann_id, is_part) triples, canonical labels first.

    Ordinal-free aliases exist only when the (parent) category has a single
    instance in the image, so they can never be ambiguous.
    """
    objects = index.image_objects.get(image_id, ())
    parts = index.image_parts.get(image_id, ())
    category_count: dict[int, int] = {}
    for ann_id in objects:
        cid = index.objects[ann_id].category_id
        category_count[cid] = category_count.get(cid, 0) + 1

    aliases: list[tuple[str, int, bool]] = []
    for ann_id in parts:
        part = index.parts[ann_id]
        label = instance_label(index, ann_id)
        aliases.append((label, ann_id, True))
        parent = index.objects[part.parent_ann_id]
        if category_count.get(parent.category_id, 0) == 1:
            bare_parent = display_name(index.categories.object_name(parent.category_id))
            part_name = display_name(index.categories.part_name(part.part_category_id))
            aliases.append((f"{bare_parent}'s {part_name}", ann_id, True))
    for ann_id in objects:
        obj = index.objects[ann_id]
        aliases.append((instance_label(index, ann_id), ann_id, False))
        if category_count.get(obj.category_id, 0) == 1:
            aliases.append((display_name(index.categories.object_name(obj.category_id)), ann_id, False))
    # Longest first so part phrases win over their object prefixes.
    aliases.sort(key=lambda t: (-len(t[0]), t[0]))
    return aliases


def _claimed(spans: list[tuple[int, int]], start: int, end: int) -> bool:
    return any(start < e and s < end for s, e in spans)


@dataclass(frozen=True)
class _Match:
    start: int
    end: int
    ann_id: int


def _find_mentions(answer: str, aliases) -> list[_Match]:
    spans: list[tuple[int, int]] = []
    found: list[_Match] = []
    for alias, ann_id, is_part in aliases:
        for m in _alias_pattern(alias).finditer(answer):
            if _claimed(spans, m.start(), m.end()):
                continue
            if not is_part and _POSSESSIVE_TAIL.match(answer, m.end()):
                # Owner prefix of a part phrase; the part alias either claimed
                # it already or the phrase is unbound, not an object mention.
                continue
            spans.append((m.start(), m.end()))
            found.append(_Match(m.start(), m.end(), ann_id))
    found.sort(key=lambda m: m.start)
    return found


_ORDINAL_PHRASE = re.compile(
    r"(?<!\w)[a-z][\w]*(?:[ _][\w]+)*_\d+(?:['’]s\s+\w+(?:\s+\w+)?)?",
    re.IGNORECASE,
)


def _unbound_mentions(answer: str, matches: list[_Match], index, image_id) -> list[str]:
    claimed = [(m.start, m.end) for m in matches]
    unbound: list[str] = []

    def free(start: int, end: int) -> bool:
        return not _claimed(claimed, start, end)

    for m in _ORDINAL_PHRASE.finditer(answer):
        if free(m.start(), m.end()):
            unbound.append(m.group(0))

    # Bare or possessive uses of annotated object categories that did not
    # bind: either the ordinal is required (several instances) or the named
    # part is not annotated.
    objects = index.image_objects.get(image_id, ())
    counts: dict[int, int] = {}
    for ann_id in objects:
        cid = index.objects[ann_id].category_id
        counts[cid] = counts.get(cid, 0) + 1
    for cid, n in counts.items():
        name = display_name(index.categories.object_name(cid))
        bare = _alias_pattern(name)
        for m in bare.finditer(answer):
            if answer[m.end() : m.end() + 1] == "_":
                continue  # part of an ordinal phrase, handled above
            possessive = _POSSESSIVE_TAIL.match(answer, m.end())
            if possessive:
                tail = re.match(r"['’]s\s+\w+(?:\s+\w+)?", answer[m.end() :])
                end = m.end() + tail.end()
                if free(m.start(), end):
                    unbound.append(answer[m.start() : end])
            elif n > 1 and free(m.start(), m.end()):
                unbound.append(m.group(0))
    return unbound


def _insert_markers(answer: str, matches: list[_Match]) -> str:
    out = answer
    for m in sorted(matches, key=lambda m: m.end, reverse=True):
        rest = out[m.end :]
        if rest.lstrip().startswith(SEG):
            continue
        out = out[: m.end] + " " + SEG + rest
    return out


def bind_targets(
    raw_qa: tuple[str, str],
    index: AnnotationIndex,
    image_id: int,
    *,
    qa_id: str = "",
    provenance: str = "",
) -> QAPair:
    """Bind an answer's mentions to annotations and insert [SEG] markers.

    Unresolvable mentions are collected on the pair (``unbound_mentions``)
    for curation rather than raising; re-binding an already marked answer is
    a no-op.
    """
    question, answer = raw_qa
    if image_id not in index.images:
        raise ValidationError(f"unknown image id {image_id}")
    aliases = _image_aliases(index, image_id)
    matches = _find_mentions(answer, aliases)
    marked = _insert_markers(answer, matches)
    targets = tuple(m.ann_id for m in matches)
    unbound = tuple(_unbound_mentions(answer, matches, index, image_id))
    return QAPair(
        qa_id=qa_id or f"{image_id}-0",
        image_id=image_id,
        question=question,
        answer=marked,
        targets=targets,
        granularity=granularity_of(targets, index),
        provenance=provenance,
        unbound_mentions=unbound,
    )


def synthesize_record(
    index: AnnotationIndex,
    image_id: int,
    caption: str,
    raw_text: str,
    *,
    provenance: str = "",
) -> GenerationRecord:
    """Parse one response and bind every QA; status reflects what survived."""
    parsed_caption, raw_pairs = parse_text(raw_text)
    caption = caption or parsed_caption
    qa_pairs = []
    for k, raw_qa in enumerate(raw_pairs, start=1):
        qa_pairs.append(
            bind_targets(
                raw_qa,
                index,
                image_id,
                qa_id=f"{image_id}-{k}",
                provenance=provenance,
            )
        )
    if not qa_pairs:
        status = "failed"
    elif not caption or any(q.unbound_mentions for q in qa_pairs) or any(
        not q.targets for q in qa_pairs
    ):
        status = "partial"
    else:
        status = "ok"
    return GenerationRecord(
        image_id=image_id,
        caption=caption,
        raw_text=raw_text,
        parse_status=status,
        qa_pairs=tuple(qa_pairs),
        provenance=provenance,
    )


# -- persistence -------------------------------------------------------------


def qa_to_dict(qa: QAPair) -> dict:
    return {
        "qa_id": qa.qa_id,
        "image_id": qa.image_id,
        "question": qa.question,
        "answer": qa.answer,
        "targets": list(qa.targets),
        "granularity": qa.granularity,
        "provenance": qa.provenance,
        "unbound_mentions": list(qa.unbound_mentions),
    }


def qa_from_dict(doc: dict) -> QAPair:
    return QAPair(
        qa_id=str(doc["qa_id"]),
        image_id=int(doc["image_id"]),
        question=doc["question"],
        answer=doc["answer"],
        targets=tuple(int(t) for t in doc["targets"]),
        granularity=doc["granularity"],
        provenance=doc.get("provenance", ""),
        unbound_mentions=tuple(doc.get("unbound_mentions", ())),
    )


def record_to_dict(record: GenerationRecord) -> dict:
    return {
        "image_id": record.image_id,
        "caption": record.caption,
        "raw_text": record.raw_text,
        "parse_status": record.parse_status,
        "provenance": record.provenance,
        "qa_pairs": [qa_to_dict(q) for q in record.qa_pairs],
    }


def record_from_dict(doc: dict) -> GenerationRecord:
    return GenerationRecord(
        image_id=int(doc["image_id"]),
        caption=doc.get("caption", ""),
        raw_text=doc.get("raw_text", ""),
        parse_status=doc.get("parse_status", "raw"),
        qa_pairs=tuple(qa_from_dict(q) for q in doc.get("qa_pairs", [])),
        provenance=doc.get("provenance", ""),
    )


def write_records(records, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record_to_dict(record), ensure_ascii=False, sort_keys=True))
            fh.write("\n")


def read_records(path: str | Path) -> list[GenerationRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(record_from_dict(json.loads(line)))
    return records
