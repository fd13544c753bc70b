"""Build structured generation prompts from an image's annotations.

A prompt has four components: the assistant role (system text), the object
and part information block, the task statement, and the requirements list.
All wording lives in plain-text template assets with named placeholder slots
({CAPTION_BLOCK}, {INFO_BLOCK}, {TASK}, {REQUIREMENTS}) so it can be swapped
or versioned without code changes; this package ships a default set.

Three variants control which instances enter the info block: ``general``
(objects and parts), ``object_only`` and ``part_only``.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .annotations import AnnotationIndex, instance_label
from .errors import ValidationError

VARIANTS = ("general", "object_only", "part_only")


@dataclass(frozen=True)
class PromptBundle:
    variant: str
    system_text: str
    user_text: str
    image_ref: str
    image_id: int


class TemplateSet:
    """Named template assets loaded from a directory.

    Files: role.txt, user.txt, task.txt, requirements.txt, caption_task.txt,
    caption_inline.txt. A variant-specific ``task.<variant>.txt`` or
    ``requirements.<variant>.txt`` overrides the shared file.
    """

    REQUIRED = ("role.txt", "user.txt", "task.txt", "requirements.txt", "caption_task.txt")

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        missing = [n for n in self.REQUIRED if not (self.directory / n).exists()]
        if missing:
            raise FileNotFoundError(
                f"template set {self.directory} is missing assets: {', '.join(missing)}"
            )

    @classmethod
    def default(cls) -> "TemplateSet":
        return cls(resources.files("mmrkit") / "templates" / "default")

    def _read(self, name: str) -> str:
        return (self.directory / name).read_text(encoding="utf-8").rstrip("\n")

    def role(self) -> str:
        return self._read("role.txt")

    def user_skeleton(self) -> str:
        return self._read("user.txt")

    def caption_task(self) -> str:
        return self._read("caption_task.txt")

    def caption_inline(self) -> str:
        path = self.directory / "caption_inline.txt"
        if path.exists():
            return path.read_text(encoding="utf-8")
        return 'First write one sentence describing the scene, prefixed by "Caption:".\n\n'

    def slot(self, name: str, variant: str) -> str:
        override = self.directory / f"{name}.{variant}.txt"
        if override.exists():
            return override.read_text(encoding="utf-8").rstrip("\n")
        return self._read(f"{name}.txt")


def _format_bbox(bbox, image, normalized: bool) -> str:
    x, y, w, h = bbox
    if normalized:
        vals = [x / image.width, y / image.height, w / image.width, h / image.height]
        return "[" + ", ".join(f"{v:.4f}" for v in vals) + "]"
    return "[" + ", ".join(str(int(round(v))) for v in (x, y, w, h)) + "]"


def info_lines(
    index: AnnotationIndex,
    image_id: int,
    variant: str,
    *,
    normalized_coords: bool = False,
) -> list[str]:
    """One ``label: [x, y, w, h]`` line per instance included by the variant."""
    if variant not in VARIANTS:
        raise ValidationError(f"unknown prompt variant {variant!r}")
    image = index.images.get(image_id)
    if image is None:
        raise ValidationError(f"unknown image id {image_id}")
    ann_ids: list[int] = []
    if variant in ("general", "object_only"):
        ann_ids.extend(index.image_objects.get(image_id, ()))
    if variant in ("general", "part_only"):
        ann_ids.extend(index.image_parts.get(image_id, ()))
    lines = []
    for ann_id in ann_ids:
        inst = index.instance(ann_id)
        lines.append(f"{instance_label(index, ann_id)}: {_format_bbox(inst.bbox, image, normalized_coords)}")
    return lines


def build_prompt(
    index: AnnotationIndex,
    image_id: int,
    variant: str = "general",
    templates: TemplateSet | None = None,
    *,
    caption: str | None = None,
    normalized_coords: bool = False,
) -> PromptBundle:
    """Assemble the QA-generation prompt for one image.

    ``caption`` embeds a previously generated global caption verbatim; the
    single-step flow instead passes ``caption=""`` upstream and lets the
    caption-inline slot ask for one.
    """
    templates = templates or TemplateSet.default()
    lines = info_lines(index, image_id, variant, normalized_coords=normalized_coords)
    if not lines:
        raise ValidationError(
            f"image {image_id} has no instances eligible for variant {variant!r}"
        )
    if caption:
        caption_block = f"Global caption of the image: {caption}\n\n"
    else:
        caption_block = ""
    user_text = templates.user_skeleton().format(
        CAPTION_BLOCK=caption_block,
        INFO_BLOCK="\n".join(lines),
        TASK=templates.slot("task", variant),
        REQUIREMENTS=templates.slot("requirements", variant),
    )
    image = index.images[image_id]
    return PromptBundle(
        variant=variant,
        system_text=templates.role(),
        user_text=user_text,
        image_ref=image.file_name,
        image_id=image_id,
    )


def build_caption_prompt(
    index: AnnotationIndex,
    image_id: int,
    templates: TemplateSet | None = None,
) -> PromptBundle:
    """Step-1 prompt: ask for a global caption of the image."""
    templates = templates or TemplateSet.default()
    image = index.images.get(image_id)
    if image is None:
        raise ValidationError(f"unknown image id {image_id}")
    return PromptBundle(
        variant="caption",
        system_text=templates.role(),
        user_text=templates.caption_task(),
        image_ref=image.file_name,
        image_id=image_id,
    )


def build_single_step_prompt(
    index: AnnotationIndex,
    image_id: int,
    variant: str = "general",
    templates: TemplateSet | None = None,
    *,
    normalized_coords: bool = False,
) -> PromptBundle:
    """One combined prompt requesting the caption and the QA pairs together."""
    templates = templates or TemplateSet.default()
    bundle = build_prompt(
        index, image_id, variant, templates, caption=None, normalized_coords=normalized_coords
    )
    return PromptBundle(
        variant=bundle.variant,
        system_text=bundle.system_text,
        user_text=templates.caption_inline() + bundle.user_text,
        image_ref=bundle.image_ref,
        image_id=bundle.image_id,
    )
