"""Conformance replay for backend adapters.

A transcript is a fixed request sequence per role; the replayer sends each
request to a live backend process and validates every reply against the
protocol schemas. The same transcripts gate the built-in simulators and any
third-party adapter, so "it replays clean" means "the engine can drive it".
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

import numpy as np

from ..geometry import BBox
from ..layout import InstanceSpec, Layout
from ..stats import CategoryStats, StatsTable, save_stats
from .base import GenerationRequest
from .protocol import BackendError
from .remote import SubprocessBackend
from .sim import simulate_generate

TRANSCRIPT_DIR = Path(__file__).parent / "transcripts"


def transcript_path(role: str) -> Path:
    path = TRANSCRIPT_DIR / f"{role}.json"
    if not path.exists():
        raise FileNotFoundError(f"no conformance transcript for role {role!r}")
    return path


def load_transcript(role: str) -> dict:
    return json.loads(transcript_path(role).read_text(encoding="utf-8"))


def materialize_fixtures(workdir: Path) -> dict[str, str]:
    """Create the files transcript placeholders refer to.

    Returns the placeholder substitution map: ``{image}`` is a rendered
    one-dog image (with placements sidecar, so simulated detectors can read
    it), ``{stats}`` a one-category stats file, ``{output_dir}`` a scratch
    directory for generators.
    """
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    layout = Layout(
        scene="A natural scene containing dog",
        instances=[
            InstanceSpec(id=1, label="dog", desc="a dog", cate="dog", bbox=BBox(0.3, 0.3, 0.7, 0.7))
        ],
    )
    request = GenerationRequest(layout=layout, seed=7, output_dir=str(workdir / "fixture"))
    image, _ = simulate_generate(request, np.random.default_rng(7))

    stats_path = workdir / "stats.json"
    save_stats(
        StatsTable(
            entries={"dog": CategoryStats("dog", 0.3, 0.05, 1.0, 0.1, 10)}, source="fixture"
        ),
        stats_path,
    )
    out_dir = workdir / "out"
    out_dir.mkdir(exist_ok=True)
    return {
        "{image}": image.path,
        "{stats}": str(stats_path),
        "{output_dir}": str(out_dir),
    }


def _substitute(value, mapping: dict[str, str]):
    if isinstance(value, str):
        for key, replacement in mapping.items():
            value = value.replace(key, replacement)
        return value
    if isinstance(value, list):
        return [_substitute(v, mapping) for v in value]
    if isinstance(value, dict):
        return {k: _substitute(v, mapping) for k, v in value.items()}
    return value


def replay_transcript(
    command: str | list[str],
    transcript: dict,
    workdir: Path,
    timeout: float = 30.0,
) -> list[str]:
    """Run every transcript step against a backend; return schema violations."""
    mapping = materialize_fixtures(Path(workdir))
    violations: list[str] = []
    backend = SubprocessBackend(command, role=transcript["role"], timeout=timeout)
    try:
        for step_index, step in enumerate(transcript["steps"]):
            send = _substitute(copy.deepcopy(step["send"]), mapping)
            op = send.pop("op")
            label = f"step {step_index} ({op})"
            try:
                reply = backend._call(op, send)
            except BackendError as exc:
                violations.append(f"{label}: {exc}")
                continue
            if step.get("check_vocabulary"):
                allowed = {v.lower() for v in send.get("vocabulary", [])}
                stray = {
                    d["cate"] for d in reply.get("detections", []) if d["cate"].lower() not in allowed
                }
                if stray:
                    violations.append(f"{label}: detections outside vocabulary: {sorted(stray)}")
            if step.get("check_image_exists"):
                path = reply.get("image", {}).get("path", "")
                if not Path(path).is_file():
                    violations.append(f"{label}: generated image missing at {path!r}")
    finally:
        backend.shutdown()
    return violations


def run_conformance(command: str | list[str], role: str, workdir: Path, timeout: float = 30.0) -> list[str]:
    """Replay the shipped transcript for one role against a backend command."""
    return replay_transcript(command, load_transcript(role), Path(workdir), timeout=timeout)
