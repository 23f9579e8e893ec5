"""Serve a backend over stdin/stdout so it can run as a child process.

This is how the built-in simulators double as external backends: the same
conformance transcripts that gate third-party adapters replay against
``synthpipe backend --spec sim:...``.
"""

from __future__ import annotations

import json
import sys

from ..layout import layout_from_json_obj, request_from_json_obj
from .base import Backend, CandidateImage, GenerationRequest, StyleSchedule
from .protocol import (
    BackendProtocolError,
    encode_message,
    error_reply,
    validate_request,
)
from .sim import parse_sim_spec


def _schedule_from_pairs(pairs: list) -> StyleSchedule:
    """Recover the two-phase schedule from its expanded pair list."""
    if not pairs:
        return StyleSchedule()
    weights = [w for _, w in pairs]
    early = weights[0]
    boundary = 0
    for t, w in pairs:
        if w == early:
            boundary = t
        else:
            break
    late = weights[-1]
    return StyleSchedule(
        early_weight=early, late_weight=late, boundary=boundary, total_steps=len(pairs)
    )


def handle_request(backend: Backend, message: dict) -> dict:
    """Dispatch one validated request to the backend; never raises."""
    request_id = message.get("id")
    try:
        op = validate_request(message)
    except BackendProtocolError as exc:
        return error_reply(request_id, "protocol", str(exc))

    try:
        if op == "hello":
            return {"id": request_id, **backend.hello()}
        if op == "shutdown":
            backend.shutdown()
            return {"id": request_id, "ok": True}
        if op == "propose_layout":
            layout = backend.propose(request_from_json_obj(message["request"]))
            return {"id": request_id, "layout": layout}
        if op == "generate":
            request = GenerationRequest(
                layout=layout_from_json_obj(message["layout"]),
                seed=int(message["seed"]),
                output_dir=message["output_dir"],
                style_ref=message.get("style_ref"),
                style_schedule=_schedule_from_pairs(message["style_schedule"]),
            )
            image, placements = backend.generate(request)
            reply = {
                "id": request_id,
                "image": {
                    "path": image.path,
                    "width": image.width,
                    "height": image.height,
                    "generator": image.generator,
                    "seed": image.seed,
                },
            }
            if placements is not None:
                reply["placements"] = [
                    {"instance_id": p.instance_id, "cate": p.cate, "bbox": list(p.bbox.as_tuple())}
                    for p in placements
                ]
            return reply
        if op == "detect":
            info = message["image"]
            image = CandidateImage(
                path=info["path"],
                width=int(info.get("width", 1)),
                height=int(info.get("height", 1)),
                generator=info.get("generator", ""),
                seed=int(info.get("seed", 0)),
            )
            detections = backend.detect(image, [str(v) for v in message["vocabulary"]])
            return {
                "id": request_id,
                "detections": [
                    {
                        "cate": d.cate,
                        "bbox": list(d.bbox.as_tuple()),
                        "confidence": d.confidence,
                    }
                    for d in detections
                ],
            }
        if op == "score":
            info = message["image"]
            image = CandidateImage(
                path=info["path"],
                width=int(info.get("width", 1)),
                height=int(info.get("height", 1)),
                generator=info.get("generator", ""),
                seed=int(info.get("seed", 0)),
            )
            raw = backend.raw_score(image) if hasattr(backend, "raw_score") else backend.score(image)
            return {"id": request_id, "score": float(raw)}
    except Exception as exc:  # noqa: BLE001 - backend faults become protocol errors
        return error_reply(request_id, "backend", f"{type(exc).__name__}: {exc}")
    return error_reply(request_id, "protocol", f"role {backend.role!r} cannot service {op!r}")


def serve(backend: Backend, stdin=None, stdout=None) -> None:
    """Run the request loop until shutdown or EOF."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            message = json.loads(line)
            if not isinstance(message, dict):
                raise ValueError("message must be an object")
        except ValueError as exc:
            stdout.write(encode_message(error_reply(None, "protocol", f"bad message: {exc}")))
            stdout.flush()
            continue
        reply = handle_request(backend, message)
        stdout.write(encode_message(reply))
        stdout.flush()
        if message.get("op") == "shutdown":
            break


def serve_spec(spec: str) -> None:
    """Entry point for ``synthpipe backend --spec sim:...``."""
    serve(parse_sim_spec(spec))
