"""Wire protocol spoken between the engine and backend processes.

One UTF-8 JSON object per line in each direction; every request carries
``id`` and ``op``, every reply echoes the ``id``. Unknown fields are
ignored, missing required fields are rejected. The full schema reference
lives in docs/protocol.md.
"""

from __future__ import annotations

import json
from typing import Any

from .base import ROLES

PROTOCOL_VERSION = "1"

OPS = ("hello", "propose_layout", "generate", "detect", "score", "shutdown")

REQUEST_FIELDS: dict[str, tuple[str, ...]] = {
    "hello": (),
    "propose_layout": ("request",),
    "generate": ("layout", "seed", "style_schedule", "output_dir"),
    "detect": ("image", "vocabulary"),
    "score": ("image",),
    "shutdown": (),
}

REPLY_FIELDS: dict[str, tuple[str, ...]] = {
    "hello": ("role", "version"),
    "propose_layout": ("layout",),
    "generate": ("image",),
    "detect": ("detections",),
    "score": ("score",),
    "shutdown": ("ok",),
}

# Ops each role must service (hello/shutdown are universal).
ROLE_OPS = {
    "proposer": ("propose_layout",),
    "generator": ("generate",),
    "detector": ("detect",),
    "scorer": ("score",),
}


class BackendError(Exception):
    """Base error for backend exchanges; carries the raw payload."""

    def __init__(self, message: str, payload: Any = None):
        super().__init__(message)
        self.payload = payload


class BackendTimeout(BackendError):
    """Backend did not reply within the configured timeout."""


class BackendProtocolError(BackendError):
    """Reply was not valid JSON or violated the message schema."""


class BackendRoleError(BackendError):
    """Backend declared a different role than the engine expected."""


class BackendStatusError(BackendError):
    """Backend replied with an error status or exited nonzero."""


def encode_message(message: dict) -> str:
    """One wire line for a message (newline included)."""
    return json.dumps(message, separators=(",", ":")) + "\n"


def decode_message(line: str) -> dict:
    try:
        message = json.loads(line)
    except json.JSONDecodeError as exc:
        raise BackendProtocolError(f"invalid JSON: {exc}", payload=line) from exc
    if not isinstance(message, dict):
        raise BackendProtocolError("message must be a JSON object", payload=line)
    return message


def _require(message: dict, fields: tuple[str, ...], what: str) -> None:
    missing = [f for f in fields if f not in message]
    if missing:
        raise BackendProtocolError(f"{what} missing fields {missing}", payload=message)


def validate_request(message: dict) -> str:
    """Check a request message; returns its op."""
    _require(message, ("id", "op"), "request")
    op = message["op"]
    if op not in OPS:
        raise BackendProtocolError(f"unknown op {op!r}", payload=message)
    _require(message, REQUEST_FIELDS[op], f"{op} request")
    if op == "detect" and not isinstance(message["vocabulary"], list):
        raise BackendProtocolError("detect vocabulary must be a list", payload=message)
    return op


def validate_reply(op: str, message: dict, role: str | None = None) -> None:
    """Check a reply against the schema for the request's op.

    An ``error`` member is always acceptable in place of the op's payload;
    transports turn it into BackendStatusError.
    """
    _require(message, ("id",), "reply")
    if "error" in message:
        err = message["error"]
        if not isinstance(err, dict) or "kind" not in err or "message" not in err:
            raise BackendProtocolError("error reply needs kind and message", payload=message)
        return
    _require(message, REPLY_FIELDS[op], f"{op} reply")
    if op == "hello":
        if message["role"] not in ROLES:
            raise BackendProtocolError(f"unknown role {message['role']!r}", payload=message)
        if role is not None and message["role"] != role:
            raise BackendRoleError(
                f"expected role {role!r}, backend declared {message['role']!r}",
                payload=message,
            )
        score_range = message.get("score_range")
        if score_range is not None:
            if (
                not isinstance(score_range, (list, tuple))
                or len(score_range) != 2
                or not all(isinstance(v, (int, float)) for v in score_range)
                or score_range[1] <= score_range[0]
            ):
                raise BackendProtocolError("score_range must be [lo, hi] with lo < hi", payload=message)
    elif op == "generate":
        image = message["image"]
        if not isinstance(image, dict):
            raise BackendProtocolError("generate image must be an object", payload=message)
        _require(image, ("path", "width", "height"), "generate reply image")
    elif op == "detect":
        detections = message["detections"]
        if not isinstance(detections, list):
            raise BackendProtocolError("detections must be a list", payload=message)
        for det in detections:
            if not isinstance(det, dict):
                raise BackendProtocolError("detection must be an object", payload=message)
            _require(det, ("cate", "bbox", "confidence"), "detection")
            if not isinstance(det["bbox"], list) or len(det["bbox"]) != 4:
                raise BackendProtocolError("detection bbox must have 4 numbers", payload=message)
    elif op == "score":
        if not isinstance(message["score"], (int, float)):
            raise BackendProtocolError("score must be numeric", payload=message)
    elif op == "propose_layout":
        if not isinstance(message["layout"], dict):
            raise BackendProtocolError("layout must be an object", payload=message)


def error_reply(request_id, kind: str, message: str) -> dict:
    return {"id": request_id, "error": {"kind": kind, "message": message}}
