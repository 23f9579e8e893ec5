"""Box refinement and annotation output.

After a candidate is selected, its layout boxes are snapped to the refiner
detector's output, assembled into a per-image annotation document, and
emitted in the formats a task asked for: COCO instances, YOLO label files,
and a line-delimited document archive. Model-produced extras (masks,
captions, relations) pass through untouched when a backend supplied them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

from .adapters.base import CandidateImage
from .filtering import Detection, match_detections
from .layout import Layout

FORMAT_TAGS = ("bbox", "mask", "global_caption", "region_caption", "relations")

# Extras payload key feeding each optional document slot.
_SLOT_PREREQS = {
    "mask": "masks",
    "global_caption": "global_caption",
    "region_caption": "region_captions",
    "relations": "relations",
}


class UnknownCategoryError(KeyError):
    """A document references a category missing from the registry."""


class UnavailableAnnotationError(RuntimeError):
    """A requested format's prerequisite payload was never produced."""


@dataclass
class AnnotationDocument:
    """Everything recorded about one emitted image."""

    image: CandidateImage
    instances: list[dict]
    global_caption: str | None = None
    region_captions: dict[int, str] | None = None
    relations: list[dict] | None = None
    masks: dict[int, object] | None = None
    formats_emitted: set[str] = field(default_factory=set)

    def to_json_obj(self) -> dict:
        doc = {
            "image": {
                "path": self.image.path,
                "width": self.image.width,
                "height": self.image.height,
                "generator": self.image.generator,
                "seed": self.image.seed,
            },
            "instances": self.instances,
            "formats_emitted": sorted(self.formats_emitted),
        }
        for slot in ("global_caption", "region_captions", "relations", "masks"):
            value = getattr(self, slot)
            if value is not None:
                doc[slot] = value
        return doc


def post_refine(layout: Layout, detections: Sequence[Detection]) -> Layout:
    """Replace instance boxes with matching high-IoU refiner detections.

    Matching reuses the filtering rules (greedy one-to-one, category equal,
    IoU over 0.5); unmatched instances keep their boxes, and nothing else
    about the layout changes.
    """
    if not detections:
        return layout
    report = match_detections(layout, list(detections))
    instances = []
    for inst in layout.instances:
        entry = report.entries[inst.id]
        if entry.matched:
            instances.append(replace(inst, bbox=detections[entry.detection_index].bbox))
        else:
            instances.append(inst)
    return Layout(scene=layout.scene, instances=instances, style_ref=layout.style_ref)


def assemble(
    image: CandidateImage,
    layout: Layout,
    extras: Mapping[str, object] | None,
    formats: set[str],
) -> AnnotationDocument:
    """Build the per-image document for a refined layout.

    Raises:
        UnavailableAnnotationError: a requested format needs a payload
            (mask, caption, ...) that no backend produced.
    """
    unknown = formats - set(FORMAT_TAGS)
    if unknown:
        raise ValueError(f"unknown format tags: {sorted(unknown)}")
    extras = dict(extras or {})
    doc = AnnotationDocument(
        image=image,
        instances=[
            {
                "id": inst.id,
                "label": inst.label,
                "cate": inst.cate,
                "desc": inst.desc,
                "bbox": list(inst.bbox.as_tuple()),
            }
            for inst in layout.instances
        ],
    )
    for tag in sorted(formats):
        if tag == "bbox":
            doc.formats_emitted.add(tag)
            continue
        payload_key = _SLOT_PREREQS[tag]
        if payload_key not in extras:
            raise UnavailableAnnotationError(
                f"format {tag!r} requested but no {payload_key!r} payload was produced"
            )
        setattr(doc, payload_key, extras[payload_key])
        doc.formats_emitted.add(tag)
    return doc


# ---------------------------------------------------------------------------
# Emitters


def emit_coco(documents: Sequence[AnnotationDocument], registry: Mapping[str, int]) -> str:
    """Serialize documents as a COCO instances file.

    Boxes are converted to pixel [x, y, w, h] with each image's own
    dimensions; annotation and image ids are assigned strictly increasing
    from 1 and floats are kept at 2 decimals (half-pixel fidelity at the
    pipeline's image sizes).
    """
    images = []
    annotations = []
    ann_id = 0
    for img_id, doc in enumerate(documents, start=1):
        images.append(
            {
                "id": img_id,
                "width": doc.image.width,
                "height": doc.image.height,
                "file_name": Path(doc.image.path).name,
            }
        )
        for inst in doc.instances:
            cate = inst["cate"]
            if cate not in registry:
                raise UnknownCategoryError(f"category {cate!r} not in registry")
            x0, y0, x1, y1 = inst["bbox"]
            px = [
                round(x0 * doc.image.width, 2),
                round(y0 * doc.image.height, 2),
                round((x1 - x0) * doc.image.width, 2),
                round((y1 - y0) * doc.image.height, 2),
            ]
            ann_id += 1
            annotations.append(
                {
                    "id": ann_id,
                    "image_id": img_id,
                    "category_id": registry[cate],
                    "bbox": px,
                    "area": round(px[2] * px[3], 2),
                    "iscrowd": 0,
                }
            )
    doc = {
        "images": images,
        "annotations": annotations,
        "categories": [
            {"id": cid, "name": name} for name, cid in sorted(registry.items(), key=lambda kv: kv[1])
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


def emit_yolo(document: AnnotationDocument, registry: Mapping[str, int]) -> list[str]:
    """YOLO label lines for one image: class index plus normalized center form."""
    lines = []
    for inst in document.instances:
        cate = inst["cate"]
        if cate not in registry:
            raise UnknownCategoryError(f"category {cate!r} not in registry")
        x0, y0, x1, y1 = inst["bbox"]
        cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
        w, h = x1 - x0, y1 - y0
        lines.append(f"{registry[cate]} {cx:.6f} {cy:.6f} {w:.6f} {h:.6f}\n")
    return lines


def write_archive(documents: Sequence[AnnotationDocument], path: str | Path) -> None:
    """One JSON record per image, newline-delimited, for downstream tooling."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc in documents:
            fh.write(json.dumps(doc.to_json_obj(), separators=(",", ":")) + "\n")


# ---------------------------------------------------------------------------
# COCO schema checker


def validate_coco(doc: dict) -> list[str]:
    """Structural checks for a COCO instances document; returns problems."""
    problems = []
    for section in ("images", "annotations", "categories"):
        if section not in doc or not isinstance(doc[section], list):
            problems.append(f"missing or non-list section {section!r}")
    if problems:
        return problems

    image_ids = set()
    for img in doc["images"]:
        for key in ("id", "width", "height", "file_name"):
            if key not in img:
                problems.append(f"image missing {key!r}: {img}")
        if img.get("id") in image_ids:
            problems.append(f"duplicate image id {img.get('id')}")
        image_ids.add(img.get("id"))

    category_ids = set()
    for cat in doc["categories"]:
        for key in ("id", "name"):
            if key not in cat:
                problems.append(f"category missing {key!r}: {cat}")
        if cat.get("id") in category_ids:
            problems.append(f"duplicate category id {cat.get('id')}")
        category_ids.add(cat.get("id"))

    last_id = 0
    for ann in doc["annotations"]:
        for key in ("id", "image_id", "category_id", "bbox"):
            if key not in ann:
                problems.append(f"annotation missing {key!r}: {ann}")
                continue
        if ann.get("id", 0) <= last_id:
            problems.append(f"annotation ids not strictly increasing at {ann.get('id')}")
        last_id = ann.get("id", last_id)
        if ann.get("image_id") not in image_ids:
            problems.append(f"annotation {ann.get('id')} references unknown image {ann.get('image_id')}")
        if ann.get("category_id") not in category_ids:
            problems.append(
                f"annotation {ann.get('id')} references unknown category {ann.get('category_id')}"
            )
        bbox = ann.get("bbox", [])
        if len(bbox) != 4 or not all(isinstance(v, (int, float)) for v in bbox):
            problems.append(f"annotation {ann.get('id')} bbox malformed: {bbox}")
        elif bbox[2] <= 0 or bbox[3] <= 0:
            problems.append(f"annotation {ann.get('id')} bbox has non-positive extent: {bbox}")
    return problems
