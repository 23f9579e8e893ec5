"""Desk-scale simulated backends.

The simulator chain replaces the neural generator/detector/scorer stack with
deterministic stand-ins: the generator renders each instance as a uniquely
colored rectangle (blue channel = instance id) and records the true
placements in a sidecar file; detectors perturb those placements with
configurable miss/jitter behavior; the scorer hashes the image bytes. All of
it is a pure function of (seed, config), which is what makes whole pipeline
runs byte-reproducible.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from urllib.parse import parse_qs

import numpy as np
from PIL import Image, ImageDraw

from ..filtering import Detection
from ..geometry import BBox
from ..layout import fallback_propose, layout_to_json_obj
from ..stats import StatsTable, load_stats
from .base import Backend, CandidateImage, GenerationRequest, Placement, normalize_score
from .protocol import PROTOCOL_VERSION

BACKGROUND = (245, 245, 245)
_MIN_EXTENT = 1e-3


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from arbitrary key parts.

    Uses sha256 rather than hash() so results survive interpreter restarts
    and are identical across worker processes.
    """
    key = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def color_for_instance(instance_id: int) -> tuple[int, int, int]:
    """Distinct fill color per instance; the blue channel carries the id."""
    if not (1 <= instance_id <= 200):
        raise ValueError(f"instance id {instance_id} outside the renderable range 1..200")
    r = (instance_id * 97 + 31) % 200
    g = (instance_id * 61 + 87) % 200
    return (r, g, instance_id)


def _noisy_box(box: BBox, sigma: float, rng: np.random.Generator) -> BBox:
    """Perturb each corner coordinate with Gaussian noise, then clamp.

    Coordinates are clipped to the canvas; an axis squeezed below the
    minimum extent is re-opened around its midpoint so the box stays valid.
    """
    coords = np.asarray(box.as_tuple()) + rng.normal(0.0, sigma, 4)
    x0, y0, x1, y1 = np.clip(coords, 0.0, 1.0)
    x0, x1 = _ensure_extent(x0, x1)
    y0, y1 = _ensure_extent(y0, y1)
    return BBox(x0, y0, x1, y1)


def _ensure_extent(lo: float, hi: float) -> tuple[float, float]:
    if hi - lo >= _MIN_EXTENT:
        return lo, hi
    mid = min(max((lo + hi) / 2, _MIN_EXTENT / 2), 1 - _MIN_EXTENT / 2)
    return mid - _MIN_EXTENT / 2, mid + _MIN_EXTENT / 2


def simulate_generate(
    request: GenerationRequest,
    rng: np.random.Generator,
    noise: float = 0.0,
    size: int = 256,
    generator_name: str = "sim-generator",
) -> tuple[CandidateImage, list[Placement]]:
    """Render a flat image for a layout and return the true placements.

    Each instance becomes a filled rectangle at its (optionally noise
    perturbed) box, drawn in descending area order so small objects stay on
    top. The placements are written next to the image as a sidecar JSON so
    detector simulators can find them later.
    """
    out_dir = Path(request.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    placements = []
    for inst in request.layout.instances:
        box = _noisy_box(inst.bbox, noise, rng) if noise > 0 else inst.bbox
        placements.append(Placement(instance_id=inst.id, cate=inst.cate, bbox=box))

    image = Image.new("RGB", (size, size), BACKGROUND)
    draw = ImageDraw.Draw(image)
    for placement in sorted(placements, key=lambda p: -p.bbox.area):
        x0 = int(round(placement.bbox.x_min * (size - 1)))
        y0 = int(round(placement.bbox.y_min * (size - 1)))
        x1 = max(x0 + 1, int(round(placement.bbox.x_max * (size - 1))))
        y1 = max(y0 + 1, int(round(placement.bbox.y_max * (size - 1))))
        draw.rectangle([x0, y0, x1, y1], fill=color_for_instance(placement.instance_id))

    path = out_dir / f"gen_{request.seed:016x}.png"
    image.save(path, format="PNG")
    write_placements_sidecar(path, placements)

    candidate = CandidateImage(
        path=str(path), width=size, height=size, generator=generator_name, seed=request.seed
    )
    return candidate, placements


def sidecar_path(image_path: str | Path) -> Path:
    return Path(str(image_path) + ".placements.json")


def write_placements_sidecar(image_path: str | Path, placements: list[Placement]) -> None:
    doc = {
        "placements": [
            {"instance_id": p.instance_id, "cate": p.cate, "bbox": list(p.bbox.as_tuple())}
            for p in placements
        ]
    }
    sidecar_path(image_path).write_text(json.dumps(doc), encoding="utf-8")


def read_placements_sidecar(image_path: str | Path) -> list[Placement]:
    doc = json.loads(sidecar_path(image_path).read_text(encoding="utf-8"))
    return [
        Placement(instance_id=rec["instance_id"], cate=rec["cate"], bbox=BBox(*rec["bbox"]))
        for rec in doc["placements"]
    ]


@dataclass(frozen=True)
class SimDetectorConfig:
    miss_rate: float = 0.0
    jitter: float = 0.0
    confidence_range: tuple[float, float] = (0.5, 1.0)

    def __post_init__(self):
        if not (0.0 <= self.miss_rate <= 1.0):
            raise ValueError(f"miss_rate out of [0,1]: {self.miss_rate}")


def simulate_detect(
    placements: list[Placement],
    config: SimDetectorConfig,
    rng: np.random.Generator,
    detector_name: str = "sim-detector",
) -> list[Detection]:
    """Turn ground-truth placements into imperfect detections.

    Each placement is independently dropped with probability miss_rate;
    survivors get Gaussian box jitter and a confidence drawn uniformly from
    the configured range.
    """
    detections = []
    for placement in placements:
        if rng.uniform() < config.miss_rate:
            continue
        box = _noisy_box(placement.bbox, config.jitter, rng)
        confidence = float(rng.uniform(*config.confidence_range))
        detections.append(
            Detection(cate=placement.cate, bbox=box, confidence=confidence, detector=detector_name)
        )
    return detections


def scan_rendered_boxes(image_path: str | Path, max_id: int = 200) -> dict[int, BBox]:
    """Recover visible instance boxes from a simulator-rendered image.

    Inverts the rendering palette through the blue channel. Occluded parts
    of a rectangle are invisible to this scan, so the returned box covers
    the visible pixels only.
    """
    arr = np.asarray(Image.open(image_path).convert("RGB"))
    height, width = arr.shape[:2]
    boxes: dict[int, BBox] = {}
    for instance_id in range(1, max_id + 1):
        expected = color_for_instance(instance_id)
        mask = np.all(arr == np.array(expected, dtype=arr.dtype), axis=-1)
        if not mask.any():
            continue
        rows = np.where(mask.any(axis=1))[0]
        cols = np.where(mask.any(axis=0))[0]
        boxes[instance_id] = BBox(
            cols[0] / (width - 1),
            rows[0] / (height - 1),
            max(cols[-1], cols[0] + 1) / (width - 1),
            max(rows[-1], rows[0] + 1) / (height - 1),
        )
    return boxes


# ---------------------------------------------------------------------------
# Backend wrappers


class SimGenerator(Backend):
    role = "generator"

    def __init__(self, noise: float = 0.0, size: int = 256, name: str = "sim-generator"):
        self.noise = noise
        self.size = size
        self.name = name

    def hello(self) -> dict:
        return {"role": self.role, "version": PROTOCOL_VERSION, "name": self.name}

    def generate(self, request: GenerationRequest):
        rng = np.random.default_rng(derive_seed("generate", self.name, request.seed))
        return simulate_generate(
            request, rng, noise=self.noise, size=self.size, generator_name=self.name
        )


class SimDetector(Backend):
    """Detector stand-in reading ground truth from the image's sidecar.

    Randomness is keyed on (detector name, image basename) so distinct
    detector instances miss independently while runs stay reproducible
    across output directories.
    """

    role = "detector"

    def __init__(self, config: SimDetectorConfig | None = None, name: str = "sim-detector"):
        self.config = config or SimDetectorConfig()
        self.name = name

    def hello(self) -> dict:
        return {"role": self.role, "version": PROTOCOL_VERSION, "name": self.name}

    def detect(self, image: CandidateImage, vocabulary: list[str]) -> list[Detection]:
        placements = read_placements_sidecar(image.path)
        rng = np.random.default_rng(derive_seed("detect", self.name, Path(image.path).name))
        detections = simulate_detect(placements, self.config, rng, detector_name=self.name)
        allowed = {v.lower() for v in vocabulary}
        return [d for d in detections if d.cate.lower() in allowed]


class SimScorer(Backend):
    role = "scorer"

    def __init__(self, score_range: tuple[float, float] = (0.0, 1.0), name: str = "sim-scorer"):
        if score_range[1] <= score_range[0]:
            raise ValueError(f"invalid score range: {score_range}")
        self.score_range = score_range
        self.name = name

    def hello(self) -> dict:
        return {
            "role": self.role,
            "version": PROTOCOL_VERSION,
            "name": self.name,
            "score_range": list(self.score_range),
        }

    def raw_score(self, image: CandidateImage) -> float:
        digest = hashlib.sha256(Path(image.path).read_bytes()).digest()
        fraction = int.from_bytes(digest[:8], "big") / 2**64
        lo, hi = self.score_range
        return lo + fraction * (hi - lo)

    def score(self, image: CandidateImage) -> float:
        return normalize_score(self.raw_score(image), self.score_range)


class SimProposer(Backend):
    role = "proposer"

    def __init__(self, stats: StatsTable, name: str = "sim-proposer"):
        self.stats = stats
        self.name = name

    def hello(self) -> dict:
        return {"role": self.role, "version": PROTOCOL_VERSION, "name": self.name}

    def propose(self, request) -> dict:
        rng = np.random.default_rng(derive_seed("propose", self.name, request.seed))
        return layout_to_json_obj(fallback_propose(request, self.stats, rng))


def parse_sim_spec(spec: str, default_name: str = "") -> Backend:
    """Build a simulated backend from a ``sim:role?key=value&...`` spec."""
    body = spec[len("sim:"):]
    role, _, query = body.partition("?")
    params = {k: v[-1] for k, v in parse_qs(query).items()}
    name = params.pop("name", default_name)

    if role == "generator":
        backend = SimGenerator(
            noise=float(params.pop("noise", 0.0)),
            size=int(params.pop("size", 256)),
            name=name or "sim-generator",
        )
    elif role == "detector":
        conf = params.pop("conf", "0.5,1.0").split(",")
        backend = SimDetector(
            SimDetectorConfig(
                miss_rate=float(params.pop("miss_rate", 0.0)),
                jitter=float(params.pop("jitter", 0.0)),
                confidence_range=(float(conf[0]), float(conf[1])),
            ),
            name=name or "sim-detector",
        )
    elif role == "scorer":
        lo, hi = (params.pop("range", "0,1")).split(",")
        backend = SimScorer(score_range=(float(lo), float(hi)), name=name or "sim-scorer")
    elif role == "proposer":
        stats_path = params.pop("stats", None)
        stats = load_stats(stats_path) if stats_path else StatsTable()
        backend = SimProposer(stats, name=name or "sim-proposer")
    else:
        raise ValueError(f"unknown simulated role in spec {spec!r}")

    if params:
        raise ValueError(f"unknown parameters {sorted(params)} in spec {spec!r}")
    return backend
