"""Domain types shared by every backend implementation.

Backends fill four roles: layout proposer, image generator, object detector,
and quality scorer. The engine computes the per-timestep style blend weights
here and forwards them with each generation request; how a generator applies
them is its own business.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..geometry import BBox
from ..layout import Layout

ROLES = ("proposer", "generator", "detector", "scorer")


@dataclass(frozen=True)
class StyleSchedule:
    """Two-phase style weight over denoising timesteps.

    Style information is applied strongly while the generator is still
    committing to layout and composition, then backed off for the detail
    steps.
    """

    early_weight: float = 0.7
    late_weight: float = 0.3
    boundary: int = 35
    total_steps: int = 50

    def __post_init__(self):
        if not (0 <= self.early_weight <= 1 and 0 <= self.late_weight <= 1):
            raise ValueError("style weights must be in [0,1]")
        if not (0 <= self.boundary < self.total_steps):
            raise ValueError("boundary must satisfy 0 <= boundary < total_steps")

    def as_pairs(self) -> list[tuple[int, float]]:
        """Expanded (timestep, weight) list as sent over the wire."""
        return [(t, style_lambda(self, t)) for t in range(self.total_steps)]


def style_lambda(schedule: StyleSchedule, t: int) -> float:
    """Style weight at timestep t: early weight through the boundary step,
    late weight after."""
    if not (0 <= t < schedule.total_steps):
        raise ValueError(f"timestep {t} outside [0, {schedule.total_steps})")
    return schedule.early_weight if t <= schedule.boundary else schedule.late_weight


@dataclass(frozen=True)
class CandidateImage:
    """Handle to one generated image file."""

    path: str
    width: int
    height: int
    generator: str
    seed: int

    def __post_init__(self):
        if not self.path:
            raise ValueError("image path must be non-empty")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")


@dataclass(frozen=True)
class Placement:
    """Where an instance actually landed in a generated image."""

    instance_id: int
    cate: str
    bbox: BBox


@dataclass
class GenerationRequest:
    """Everything a generator backend needs for one candidate."""

    layout: Layout
    seed: int
    output_dir: str
    style_ref: str | None = None
    style_schedule: StyleSchedule = field(default_factory=StyleSchedule)


class Backend:
    """Interface the pipeline drives; raises NotImplementedError per role.

    ``score`` returns a quality already normalized into [0,1]; backends with
    another native range declare it in their handshake and the transport
    applies the min-max mapping.
    """

    role: str = ""
    name: str = ""

    def hello(self) -> dict:
        raise NotImplementedError

    def propose(self, request) -> dict:
        raise NotImplementedError(f"{self.name or type(self).__name__} is not a proposer")

    def generate(self, request: GenerationRequest) -> tuple[CandidateImage, list[Placement] | None]:
        raise NotImplementedError(f"{self.name or type(self).__name__} is not a generator")

    def detect(self, image: CandidateImage, vocabulary: list[str]) -> list:
        raise NotImplementedError(f"{self.name or type(self).__name__} is not a detector")

    def score(self, image: CandidateImage) -> float:
        raise NotImplementedError(f"{self.name or type(self).__name__} is not a scorer")

    def shutdown(self) -> None:
        pass


def normalize_score(raw: float, score_range: tuple[float, float] | None) -> float:
    """Map a backend's native score into [0,1] via its declared range."""
    if score_range is None:
        lo, hi = 0.0, 1.0
    else:
        lo, hi = score_range
        if hi <= lo:
            raise ValueError(f"invalid score range: ({lo}, {hi})")
    return min(1.0, max(0.0, (raw - lo) / (hi - lo)))
