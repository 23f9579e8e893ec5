"""Candidate image filtering and selection.

Each generated candidate is checked by every detector backend: detections
are matched one-to-one against the control layout by IoU, candidates with an
instance that no detector found are discarded, and the survivor with the
best quality + position total wins.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .geometry import BBox, iou
from .layout import Layout

IOU_THRESHOLD = 0.5


class AllCandidatesDiscarded(RuntimeError):
    """Every candidate for a layout failed the discard rule."""


@dataclass(frozen=True)
class Detection:
    """One detector hit: category token, box, confidence, and its backend."""

    cate: str
    bbox: BBox
    confidence: float
    detector: str = ""

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence out of [0,1]: {self.confidence}")


@dataclass(frozen=True)
class MatchEntry:
    matched: bool
    best_iou: float = 0.0
    best_confidence: float = 0.0
    detection_index: int | None = None


@dataclass
class MatchReport:
    """Per-instance match outcome for one detector's output."""

    detector: str
    entries: dict[int, MatchEntry] = field(default_factory=dict)

    def matched_ids(self) -> set[int]:
        return {i for i, e in self.entries.items() if e.matched}


def match_detections(layout: Layout, detections: Sequence[Detection]) -> MatchReport:
    """Greedily match detections to layout instances.

    Pairs are considered in descending IoU order (ties broken by the
    detection box's coordinates, so permuting the input list cannot change
    the outcome). A pair matches only when the category tokens are equal
    case-insensitively and IoU exceeds the 0.5 threshold; each detection and
    each instance is used at most once. Unmatched instances are recorded
    with zero confidence.
    """
    detector = detections[0].detector if detections else ""
    pairs = []
    best_seen: dict[int, float] = {inst.id: 0.0 for inst in layout.instances}
    for d_idx, det in enumerate(detections):
        for inst in layout.instances:
            if det.cate.lower() != inst.cate.lower():
                continue
            value = iou(det.bbox, inst.bbox)
            best_seen[inst.id] = max(best_seen[inst.id], value)
            if value > IOU_THRESHOLD:
                pairs.append((value, det.bbox.as_tuple(), d_idx, inst.id))
    pairs.sort(key=lambda p: (-p[0], p[1], p[3]))

    entries: dict[int, MatchEntry] = {}
    used_detections: set[int] = set()
    for value, _, d_idx, inst_id in pairs:
        if inst_id in entries or d_idx in used_detections:
            continue
        entries[inst_id] = MatchEntry(
            matched=True,
            best_iou=value,
            best_confidence=detections[d_idx].confidence,
            detection_index=d_idx,
        )
        used_detections.add(d_idx)
    for inst in layout.instances:
        if inst.id not in entries:
            entries[inst.id] = MatchEntry(matched=False, best_iou=best_seen[inst.id])
    return MatchReport(detector=detector, entries=entries)


def accept_candidate(reports: Sequence[MatchReport]) -> bool:
    """Discard rule: reject iff some instance is unmatched in every report."""
    if not reports:
        raise ValueError("need at least one match report")
    instance_ids = set(reports[0].entries)
    for instance_id in instance_ids:
        if not any(report.entries[instance_id].matched for report in reports):
            return False
    return True


def position_score(reports: Sequence[MatchReport]) -> float:
    """Mean matched confidence over all (detector, instance) pairs.

    Unmatched pairs contribute 0, so hard-to-recognize instances drag the
    score down instead of being skipped.
    """
    if not reports:
        raise ValueError("need at least one match report")
    confidences = [
        entry.best_confidence for report in reports for entry in report.entries.values()
    ]
    if not confidences:
        return 0.0
    return sum(confidences) / len(confidences)


@dataclass
class ScoredCandidate:
    """A candidate image with its per-detector reports and both scores."""

    image: object
    reports: list[MatchReport]
    quality: float
    position: float
    accepted: bool

    @property
    def total(self) -> float:
        return self.quality + self.position


def score_candidate(image, layout: Layout, detections_per_detector: Mapping[str, Sequence[Detection]], quality: float) -> ScoredCandidate:
    """Bundle matching, acceptance, and the position score for one candidate."""
    reports = [
        match_detections(layout, list(dets)) for dets in detections_per_detector.values()
    ]
    for name, report in zip(detections_per_detector, reports):
        report.detector = report.detector or name
    accepted = accept_candidate(reports)
    return ScoredCandidate(
        image=image,
        reports=reports,
        quality=quality,
        position=position_score(reports),
        accepted=accepted,
    )


def select_best(candidates: Sequence[ScoredCandidate], mode: str = "both") -> int:
    """Index of the accepted candidate with the best score.

    ``mode`` selects the scoring ablation: "quality", "position", or "both"
    (the sum). Ties keep the lowest index; rejected candidates never win.

    Raises:
        AllCandidatesDiscarded: no candidate passed the discard rule.
    """
    if mode not in ("quality", "position", "both"):
        raise ValueError(f"unknown selection mode: {mode!r}")
    best_index = None
    best_score = float("-inf")
    for i, cand in enumerate(candidates):
        if not cand.accepted:
            continue
        if mode == "quality":
            score = cand.quality
        elif mode == "position":
            score = cand.position
        else:
            score = cand.total
        if score > best_score:
            best_index, best_score = i, score
    if best_index is None:
        raise AllCandidatesDiscarded(f"all {len(candidates)} candidates discarded")
    return best_index
