"""Layout construction and statistical adjustment.

A layout is a scene description plus an ordered list of instance specs
(label, free-text description, detection category, box, optional reference
image). Layouts come from a proposer backend (typically an LLM) or from the
built-in deterministic fallback, then get adjusted toward the reference
dataset's size statistics and nudged apart to reduce overlap.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import BBox, clamp_to_canvas, overlap_ratio
from .stats import CategoryStats, StatsTable, sample_empirical

logger = logging.getLogger(__name__)

MAX_INSTANCES = 10

# Candidate centers tried by the position adjustment, in tie-break order.
# The canvas y axis points down, so "N" decreases y. Diagonal steps are
# scaled by 1/sqrt(2) to keep the displacement magnitude equal to d.
_DIAG = 1 / np.sqrt(2)
DIRECTIONS: tuple[tuple[str, float, float], ...] = (
    ("stay", 0.0, 0.0),
    ("N", 0.0, -1.0),
    ("NE", _DIAG, -_DIAG),
    ("E", 1.0, 0.0),
    ("SE", _DIAG, _DIAG),
    ("S", 0.0, 1.0),
    ("SW", -_DIAG, _DIAG),
    ("W", -1.0, 0.0),
    ("NW", -_DIAG, -_DIAG),
)

# Size blend weight toward the empirical sample, and the center step range,
# both as fractions of the canvas.
BLEND_WEIGHT_RANGE = (0.1, 0.2)
STEP_RANGE = (0.05, 0.15)

_PLACEMENT_ATTEMPTS = 20
_MAX_SIDE = 0.95


class LayoutValidationError(ValueError):
    """Proposer reply violated the request's rules or instance contract."""

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


@dataclass(frozen=True)
class InstanceSpec:
    """One object in a layout."""

    id: int
    label: str
    desc: str
    cate: str
    bbox: BBox
    ref: str | None = None


@dataclass
class Layout:
    """Scene text plus instance specs, the pipeline's central artifact."""

    scene: str
    instances: list[InstanceSpec]
    style_ref: str | None = None

    def __post_init__(self):
        if not self.instances:
            raise ValueError("layout must contain at least one instance")
        ids = [inst.id for inst in self.instances]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate instance ids: {ids}")

    def boxes(self) -> list[BBox]:
        return [inst.bbox for inst in self.instances]

    def categories(self) -> list[str]:
        return [inst.cate for inst in self.instances]


@dataclass(frozen=True)
class LayoutRule:
    """User directive applied to a proposed layout.

    kind: one of add / remove / replace / scene / constrain.
      add: ensure an instance of `subject` is present.
      remove: drop every instance of `subject`.
      replace: turn instances of `subject` into `argument`.
      scene: override the scene text with `argument`.
      constrain: pin instances of `subject` to the BBox in `argument`.
    """

    kind: str
    subject: str = ""
    argument: object = None

    _KINDS = ("add", "remove", "replace", "scene", "constrain")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown rule kind: {self.kind!r}")
        if self.kind in ("add", "remove", "replace") and not self.subject:
            raise ValueError(f"rule kind {self.kind!r} requires a subject")


@dataclass
class LayoutRequest:
    """Inputs to layout generation: categories, rules, optional seed boxes."""

    categories: list[tuple[str, int]] = field(default_factory=list)
    rules: list[LayoutRule] = field(default_factory=list)
    initial_boxes: list[tuple[str, BBox]] = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        if not self.categories and not self.initial_boxes:
            raise ValueError("request needs categories or initial boxes")


def single_word_category(label: str) -> str:
    """Detection category token for a label: lowercase head word."""
    return label.lower().split()[-1]


# ---------------------------------------------------------------------------
# Proposal


def validate_layout(
    layout: Layout,
    request: LayoutRequest | None = None,
    max_instances: int = MAX_INSTANCES,
) -> list[str]:
    """Return the list of contract violations (empty when valid)."""
    violations = []
    if len(layout.instances) > max_instances:
        violations.append(f"instance count {len(layout.instances)} exceeds {max_instances}")
    for inst in layout.instances:
        tag = f"instance {inst.id}"
        if not inst.label:
            violations.append(f"{tag}: empty label")
        if not inst.cate:
            violations.append(f"{tag}: empty cate")
        if not inst.desc:
            violations.append(f"{tag}: empty desc")
        if not inst.bbox.inside_canvas():
            violations.append(f"{tag}: bbox {inst.bbox.as_tuple()} outside canvas")
    if request is not None:
        cates = {inst.cate.lower() for inst in layout.instances}
        for rule in request.rules:
            if rule.kind == "add" and rule.subject.lower() not in cates:
                violations.append(f"rule add '{rule.subject}' not satisfied")
            if rule.kind == "remove" and rule.subject.lower() in cates:
                violations.append(f"rule remove '{rule.subject}' not satisfied")
    return violations


def propose_layout(request: LayoutRequest, proposer, retries: int = 2, allow_refs: bool = False) -> Layout:
    """Obtain a validated layout from a proposer backend.

    The proposer is any object with ``propose(request) -> Layout | dict``;
    dict replies are parsed as layout documents. Replies violating the
    request's add/remove rules or the instance contract are retried up to
    ``retries`` times before the validation error is raised.

    Ref markers returned by the proposer are dropped unless the caller
    declared reference images available via ``allow_refs``.
    """
    last_error: LayoutValidationError | None = None
    for attempt in range(retries + 1):
        reply = proposer.propose(request)
        layout = reply if isinstance(reply, Layout) else layout_from_json_obj(reply)
        if not allow_refs:
            layout = Layout(
                scene=layout.scene,
                instances=[replace(inst, ref=None) for inst in layout.instances],
                style_ref=layout.style_ref,
            )
        violations = validate_layout(layout, request)
        if not violations:
            return layout
        last_error = LayoutValidationError(violations)
        logger.warning("proposer reply invalid (attempt %d): %s", attempt + 1, last_error)
    raise last_error


def fallback_propose(request: LayoutRequest, stats: StatsTable, rng: np.random.Generator) -> Layout:
    """Deterministic layout proposer requiring no external service.

    Sizes come from the fitted category stats (or the default entry) and
    centers from best-of-20 rejection sampling against the already placed
    instances, so the pipeline can run end to end without an LLM.
    """
    pending: list[dict] = []
    for label, box in request.initial_boxes:
        pending.append({"label": label, "bbox": box})
    for name, count in request.categories:
        for _ in range(count):
            pending.append({"label": name, "bbox": None})

    scene_override = None
    pinned: dict[str, BBox] = {}
    for rule in request.rules:
        if rule.kind == "add":
            pending.append({"label": rule.subject, "bbox": None})
        elif rule.kind == "remove":
            key = rule.subject.lower()
            pending = [p for p in pending if single_word_category(p["label"]) != key]
        elif rule.kind == "replace":
            key = rule.subject.lower()
            new_label = str(rule.argument)
            for p in pending:
                if single_word_category(p["label"]) == key:
                    p["label"] = new_label
        elif rule.kind == "scene":
            scene_override = str(rule.argument)
        elif rule.kind == "constrain":
            pinned[single_word_category(rule.subject)] = rule.argument

    if not pending:
        raise LayoutValidationError(["rules removed every instance"])

    instances: list[InstanceSpec] = []
    placed: list[BBox] = []
    for i, item in enumerate(pending, start=1):
        label = item["label"]
        cate = single_word_category(label)
        box = pinned.get(cate, item["bbox"])
        if box is None:
            width, aspect = sample_empirical(stats.get_or_default(cate), rng)
            width = min(width, _MAX_SIDE)
            height = min(width * aspect, _MAX_SIDE)
            box = _place_box(width, height, placed, rng)
        instances.append(
            InstanceSpec(id=i, label=label, desc=f"a {label}", cate=cate, bbox=box)
        )
        placed.append(box)

    scene = scene_override or _scene_text([item["label"] for item in pending])
    return Layout(scene=scene, instances=instances)


def _scene_text(labels: list[str]) -> str:
    seen: list[str] = []
    for label in labels:
        if label not in seen:
            seen.append(label)
    if len(seen) == 1:
        listing = seen[0]
    else:
        listing = ", ".join(seen[:-1]) + " and " + seen[-1]
    return f"A natural scene containing {listing}"


def _place_box(width: float, height: float, placed: list[BBox], rng: np.random.Generator) -> BBox:
    best = None
    best_ratio = float("inf")
    for _ in range(_PLACEMENT_ATTEMPTS):
        cx = rng.uniform(width / 2, 1 - width / 2)
        cy = rng.uniform(height / 2, 1 - height / 2)
        candidate = BBox.from_center(cx, cy, width, height)
        ratio = overlap_ratio(candidate, placed)
        if ratio < best_ratio:
            best, best_ratio = candidate, ratio
        if best_ratio == 0.0:
            break
    return best


# ---------------------------------------------------------------------------
# Adjustment


def blend_size(
    old_width: float, old_aspect: float, emp_width: float, emp_aspect: float, alpha: float
) -> tuple[float, float]:
    """Weighted average pulling a box's size toward the empirical sample."""
    return (
        alpha * emp_width + (1 - alpha) * old_width,
        alpha * emp_aspect + (1 - alpha) * old_aspect,
    )


def adjust_size(inst: InstanceSpec, stats: CategoryStats | None, rng: np.random.Generator) -> InstanceSpec:
    """Resize an instance toward its category's empirical size.

    The box is rebuilt around its unchanged center with the blended width
    and aspect, then clamped to the canvas. Instances whose category has no
    stats entry are returned unchanged (and consume no randomness).
    """
    if stats is None:
        return inst
    emp_width, emp_aspect = sample_empirical(stats, rng)
    alpha = rng.uniform(*BLEND_WEIGHT_RANGE)
    new_width, new_aspect = blend_size(inst.bbox.width, inst.bbox.aspect, emp_width, emp_aspect, alpha)
    cx, cy = inst.bbox.center
    box = clamp_to_canvas(BBox.from_center(cx, cy, new_width, new_width * new_aspect))
    return replace(inst, bbox=box)


def position_candidates(box: BBox, step: float) -> list[BBox]:
    """The stay-put box plus its 8 compass shifts, each clamped to canvas."""
    cx, cy = box.center
    return [
        clamp_to_canvas(box.recenter(cx + dx * step, cy + dy * step))
        for _, dx, dy in DIRECTIONS
    ]


def _best_position(box: BBox, others: Sequence[BBox], rng: np.random.Generator) -> BBox:
    step = rng.uniform(*STEP_RANGE)
    candidates = position_candidates(box, step)
    ratios = [overlap_ratio(c, others) for c in candidates]
    return candidates[int(np.argmin(ratios))]


def adjust_position(inst: InstanceSpec, layout: Layout, rng: np.random.Generator) -> InstanceSpec:
    """Move an instance to whichever of its 9 candidate centers overlaps least.

    Candidates are the current center plus a random step along each compass
    direction, with staying put included so an already overlap-free instance
    is never made worse. Ties keep the earliest candidate in DIRECTIONS
    order, so no-overlap situations resolve to stay-put.
    """
    others = [other.bbox for other in layout.instances if other.id != inst.id]
    if len(others) == len(layout.instances):
        raise ValueError(f"instance {inst.id} does not belong to the layout")
    return replace(inst, bbox=_best_position(inst.bbox, others, rng))


def adjust_layout(layout: Layout, stats: StatsTable, rng: np.random.Generator) -> Layout:
    """Apply size then position adjustment to every instance.

    Instances are processed in descending initial area (large objects anchor
    the scene; small ones dodge them) and each step sees the other instances'
    current, possibly already adjusted, boxes. Everything except the boxes is
    preserved, including the instance order.
    """
    order = sorted(
        range(len(layout.instances)),
        key=lambda i: (-layout.instances[i].bbox.area, i),
    )
    current: list[BBox] = [inst.bbox for inst in layout.instances]
    for i in order:
        inst = replace(layout.instances[i], bbox=current[i])
        inst = adjust_size(inst, stats.get(inst.cate), rng)
        others = [b for j, b in enumerate(current) if j != i]
        current[i] = _best_position(inst.bbox, others, rng)
    instances = [
        replace(inst, bbox=current[i]) for i, inst in enumerate(layout.instances)
    ]
    return Layout(scene=layout.scene, instances=instances, style_ref=layout.style_ref)


# ---------------------------------------------------------------------------
# Serialization

_BBOX_DECIMALS = 6


def _fmt(value: float) -> str:
    return f"{value:.{_BBOX_DECIMALS}f}"


def layout_to_text(layout: Layout) -> str:
    """Render a layout document with fixed 6-decimal box coordinates.

    Fixed formatting keeps read-then-write byte-stable, which the pipeline
    relies on for reproducible output trees.
    """
    lines = ["{"]
    lines.append(f'  "scene": {json.dumps(layout.scene)},')
    if layout.style_ref is not None:
        lines.append(f'  "style_ref": {json.dumps(layout.style_ref)},')
    lines.append('  "instances": [')
    for i, inst in enumerate(layout.instances):
        bbox = ", ".join(_fmt(v) for v in inst.bbox.as_tuple())
        parts = [
            f'"id": {inst.id}',
            f'"label": {json.dumps(inst.label)}',
            f'"desc": {json.dumps(inst.desc)}',
            f'"cate": {json.dumps(inst.cate)}',
            f'"bbox": [{bbox}]',
        ]
        if inst.ref is not None:
            parts.append(f'"ref": {json.dumps(inst.ref)}')
        comma = "," if i < len(layout.instances) - 1 else ""
        lines.append("    {" + ", ".join(parts) + "}" + comma)
    lines.append("  ]")
    lines.append("}")
    return "\n".join(lines) + "\n"


def layout_from_json_obj(doc: dict) -> Layout:
    instances = []
    for i, rec in enumerate(doc.get("instances", []), start=1):
        coords = rec["bbox"]
        instances.append(
            InstanceSpec(
                id=int(rec.get("id", i)),
                label=str(rec.get("label", "")),
                desc=str(rec.get("desc", "")),
                cate=str(rec.get("cate", "")),
                bbox=BBox(*[float(v) for v in coords]),
                ref=rec.get("ref"),
            )
        )
    return Layout(
        scene=str(doc.get("scene", "")),
        instances=instances,
        style_ref=doc.get("style_ref"),
    )


def layout_to_json_obj(layout: Layout) -> dict:
    doc: dict = {"scene": layout.scene}
    if layout.style_ref is not None:
        doc["style_ref"] = layout.style_ref
    doc["instances"] = []
    for inst in layout.instances:
        rec: dict = {
            "id": inst.id,
            "label": inst.label,
            "desc": inst.desc,
            "cate": inst.cate,
            "bbox": [round(v, _BBOX_DECIMALS) for v in inst.bbox.as_tuple()],
        }
        if inst.ref is not None:
            rec["ref"] = inst.ref
        doc["instances"].append(rec)
    return doc


def save_layout(layout: Layout, path: str | Path) -> None:
    Path(path).write_text(layout_to_text(layout), encoding="utf-8")


def load_layout(path: str | Path) -> Layout:
    return layout_from_json_obj(json.loads(Path(path).read_text(encoding="utf-8")))


def request_from_json_obj(doc: dict) -> LayoutRequest:
    categories = []
    for entry in doc.get("categories", []):
        if isinstance(entry, str):
            categories.append((entry, 1))
        else:
            categories.append((str(entry["name"]), int(entry.get("count", 1))))
    rules = []
    for rec in doc.get("rules", []):
        argument = rec.get("argument")
        if rec.get("kind") == "constrain" and isinstance(argument, (list, tuple)):
            argument = BBox(*[float(v) for v in argument])
        rules.append(LayoutRule(kind=rec["kind"], subject=rec.get("subject", ""), argument=argument))
    initial = []
    for rec in doc.get("initial_boxes", []):
        initial.append((str(rec["label"]), BBox(*[float(v) for v in rec["bbox"]])))
    return LayoutRequest(
        categories=categories,
        rules=rules,
        initial_boxes=initial,
        seed=int(doc.get("seed", 0)),
    )


def request_to_json_obj(request: LayoutRequest) -> dict:
    return {
        "categories": [{"name": name, "count": count} for name, count in request.categories],
        "rules": [
            {
                "kind": rule.kind,
                "subject": rule.subject,
                "argument": list(rule.argument.as_tuple())
                if isinstance(rule.argument, BBox)
                else rule.argument,
            }
            for rule in request.rules
        ],
        "initial_boxes": [
            {"label": label, "bbox": list(box.as_tuple())} for label, box in request.initial_boxes
        ],
        "seed": request.seed,
    }


def load_request(path: str | Path) -> LayoutRequest:
    return request_from_json_obj(json.loads(Path(path).read_text(encoding="utf-8")))
