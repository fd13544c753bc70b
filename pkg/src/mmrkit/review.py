"""HTTP service backing the inspector review workflow.

Every inspector reviews the entire QA set, in ascending qa_id order, one
item at a time. Items carry the question, the marked-up answer, the target
labels, any automatic screening violations, and a link to a server-rendered
overlay PNG that composites the target masks over the source image with a
deterministic palette. Verdicts go straight into the shared verdict store;
a resubmission by the same inspector replaces their earlier verdict.

Endpoints:
    GET  /api/review/next?inspector=ID
    POST /api/review/{qa_id}/verdict
    GET  /api/review/{qa_id}/overlay.png
    GET  /api/progress
"""

from __future__ import annotations

import io
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from pydantic import BaseModel

from .annotations import AnnotationIndex, instance_label
from .curation import (
    RULES,
    InspectorVerdict,
    VerdictStore,
    auto_screen,
    record_verdict,
)
from .errors import ValidationError
from .synthesis import QAPair

# RGB palette keyed by target index; fixed so overlays are reproducible.
PALETTE = (
    (230, 57, 70),
    (29, 53, 87),
    (42, 157, 143),
    (233, 196, 106),
    (155, 93, 229),
    (244, 114, 182),
    (80, 141, 78),
    (2, 132, 199),
)

OVERLAY_ALPHA = 0.45


class VerdictBody(BaseModel):
    inspector: str
    flagged: bool
    rule: str | None = None
    note: str | None = None
    corrected_answer: str | None = None


@dataclass
class ReviewSession:
    """Shared state for one review run."""

    qas: list[QAPair]
    index: AnnotationIndex
    store: VerdictStore
    inspectors: tuple[str, ...]
    images_root: Path | None = None
    threshold: int = 2
    served: dict[str, set[str]] = field(default_factory=dict)

    def __post_init__(self):
        self.qas = sorted(self.qas, key=lambda q: q.qa_id)
        self._by_id = {qa.qa_id: qa for qa in self.qas}
        self._violations = {qa.qa_id: auto_screen(qa, self.index) for qa in self.qas}
        self._lock = threading.Lock()

    def _check_inspector(self, inspector_id: str) -> None:
        if inspector_id not in self.inspectors:
            raise ValidationError(f"unknown inspector {inspector_id!r}")

    def judged_ids(self, inspector_id: str) -> set[str]:
        return {qa_id for (ins, qa_id) in self.store.latest() if ins == inspector_id}

    def next_item(self, inspector_id: str) -> dict | None:
        """Lowest-id QA this inspector has not judged yet; None when done."""
        self._check_inspector(inspector_id)
        judged = self.judged_ids(inspector_id)
        for qa in self.qas:
            if qa.qa_id not in judged:
                with self._lock:
                    self.served.setdefault(inspector_id, set()).add(qa.qa_id)
                return self.item_payload(qa.qa_id)
        return None

    def item_payload(self, qa_id: str) -> dict:
        qa = self._by_id.get(qa_id)
        if qa is None:
            raise ValidationError(f"unknown qa_id {qa_id!r}")
        return {
            "qa_id": qa.qa_id,
            "image_id": qa.image_id,
            "question": qa.question,
            "answer": qa.answer,
            "target_labels": [instance_label(self.index, t) for t in qa.targets],
            "granularity": qa.granularity,
            "auto_violations": [v.to_dict() for v in self._violations[qa.qa_id]],
            "flag_count": self.store.flag_count(qa.qa_id),
            "overlay_url": f"/api/review/{qa.qa_id}/overlay.png",
        }

    def submit(
        self,
        inspector_id: str,
        qa_id: str,
        flagged: bool,
        rule: str | None = None,
        note: str | None = None,
        corrected_answer: str | None = None,
    ) -> dict:
        self._check_inspector(inspector_id)
        if qa_id not in self._by_id:
            raise ValidationError(f"unknown qa_id {qa_id!r}")
        if qa_id not in self.served.get(inspector_id, set()):
            raise ValidationError(f"item {qa_id!r} was not served to inspector {inspector_id!r}")
        ack = record_verdict(
            self.store,
            InspectorVerdict(
                inspector_id=inspector_id,
                qa_id=qa_id,
                flagged=flagged,
                rule=rule,
                note=note,
                corrected_answer=corrected_answer,
            ),
            threshold=self.threshold,
        )
        return ack

    def reopen(self, inspector_id: str, qa_id: str) -> dict:
        """Serve a specific item again for revision."""
        self._check_inspector(inspector_id)
        if qa_id not in self._by_id:
            raise ValidationError(f"unknown qa_id {qa_id!r}")
        with self._lock:
            self.served.setdefault(inspector_id, set()).add(qa_id)
        return self.item_payload(qa_id)

    def progress(self) -> dict:
        total = len(self.qas)
        per_inspector = {}
        for inspector in self.inspectors:
            judged = len(self.judged_ids(inspector))
            per_inspector[inspector] = {
                "judged": judged,
                "pending": total - judged,
                "total": total,
            }
        return {"total": total, "inspectors": per_inspector}

    def render_overlay(self, qa_id: str) -> bytes:
        from PIL import Image

        qa = self._by_id.get(qa_id)
        if qa is None:
            raise ValidationError(f"unknown qa_id {qa_id!r}")
        image_rec = self.index.images[qa.image_id]
        if self.images_root is None:
            raise FileNotFoundError("review session has no images root configured")
        path = Path(self.images_root) / image_rec.file_name
        if not path.exists():
            raise FileNotFoundError(f"image file not found: {path}")
        with Image.open(path) as img:
            rgb = np.asarray(img.convert("RGB"), dtype=np.float32)
        for k, ann_id in enumerate(qa.targets):
            mask = self.index.instance_mask(ann_id)
            if mask.shape != rgb.shape[:2]:
                raise ValidationError(
                    f"qa {qa_id}: mask shape {mask.shape} does not match image {rgb.shape[:2]}"
                )
            color = np.asarray(PALETTE[k % len(PALETTE)], dtype=np.float32)
            region = mask[..., None]
            rgb = np.where(region, (1 - OVERLAY_ALPHA) * rgb + OVERLAY_ALPHA * color, rgb)
        out = Image.fromarray(rgb.astype(np.uint8), mode="RGB")
        buf = io.BytesIO()
        out.save(buf, format="PNG")
        return buf.getvalue()


def create_app(session: ReviewSession, ui_dir: str | Path | None = None):
    """FastAPI application over a review session.

    ``ui_dir`` mounts a built browser client at ``/`` when provided; the API
    is complete without it.
    """
    from fastapi import FastAPI, HTTPException
    from fastapi.responses import JSONResponse, Response

    app = FastAPI(title="QA review service")

    @app.get("/api/review/next")
    def next_item(inspector: str):
        try:
            item = session.next_item(inspector)
        except ValidationError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        if item is None:
            return JSONResponse({"done": True, "progress": session.progress()})
        return item

    @app.get("/api/review/{qa_id}")
    def reopen(qa_id: str, inspector: str):
        try:
            return session.reopen(inspector, qa_id)
        except ValidationError as exc:
            raise HTTPException(status_code=404, detail=str(exc))

    @app.post("/api/review/{qa_id}/verdict")
    def submit(qa_id: str, body: VerdictBody):
        if body.rule is not None and body.rule not in RULES:
            raise HTTPException(status_code=422, detail=f"unknown rule {body.rule!r}")
        try:
            ack = session.submit(
                body.inspector,
                qa_id,
                body.flagged,
                rule=body.rule,
                note=body.note,
                corrected_answer=body.corrected_answer,
            )
        except ValidationError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return ack

    @app.get("/api/review/{qa_id}/overlay.png")
    def overlay(qa_id: str):
        try:
            png = session.render_overlay(qa_id)
        except ValidationError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except FileNotFoundError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return Response(content=png, media_type="image/png")

    @app.get("/api/progress")
    def progress():
        return session.progress()

    if ui_dir is not None and Path(ui_dir).exists():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app


def serve(
    session: ReviewSession,
    host: str = "127.0.0.1",
    port: int = 8800,
    ui_dir: str | Path | None = None,
) -> None:
    import uvicorn

    uvicorn.run(create_app(session, ui_dir=ui_dir), host=host, port=port, log_level="info")
