"""Subprocess transport for external backends.

The engine spawns each backend as a child process and exchanges one JSON
message per line over its stdin/stdout, one request in flight at a time.
Binary data never crosses the pipe; images travel by file path. Setting
ANYSYNTH_BACKEND_LOG=path appends every raw line (both directions) to a
transcript file for later conformance replay.
"""

from __future__ import annotations

import json
import os
import queue
import shlex
import subprocess
import threading
from pathlib import Path

from ..filtering import Detection
from ..geometry import BBox
from ..layout import Layout, layout_from_json_obj, layout_to_json_obj, request_to_json_obj
from .base import Backend, CandidateImage, GenerationRequest, Placement, normalize_score
from .protocol import (
    BackendProtocolError,
    BackendStatusError,
    BackendTimeout,
    decode_message,
    encode_message,
    validate_reply,
)

DEFAULT_TIMEOUT = 120.0

TRANSCRIPT_ENV = "ANYSYNTH_BACKEND_LOG"


class SubprocessBackend(Backend):
    """Drives one external backend process over the line protocol."""

    def __init__(self, command: str | list[str], role: str, timeout: float = DEFAULT_TIMEOUT):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.role = role
        self.name = self.command[0]
        self.timeout = timeout
        self._next_id = 0
        self._hello: dict | None = None
        self._transcript = os.environ.get(TRANSCRIPT_ENV)
        self._proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._replies: queue.Queue[str | None] = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

    def _pump(self):
        assert self._proc.stdout is not None
        for line in self._proc.stdout:
            self._replies.put(line)
        self._replies.put(None)

    def _log(self, direction: str, line: str):
        if not self._transcript:
            return
        record = json.dumps({"direction": direction, "line": line.rstrip("\n")})
        with open(self._transcript, "a", encoding="utf-8") as fh:
            fh.write(record + "\n")

    def _call(self, op: str, payload: dict | None = None) -> dict:
        if self._proc.poll() is not None:
            raise BackendStatusError(
                f"backend {self.name!r} exited with status {self._proc.returncode}"
            )
        self._next_id += 1
        message = {"id": self._next_id, "op": op, **(payload or {})}
        line = encode_message(message)
        self._log("send", line)
        assert self._proc.stdin is not None
        try:
            self._proc.stdin.write(line)
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise BackendStatusError(f"backend {self.name!r} closed its pipe: {exc}") from exc

        try:
            raw = self._replies.get(timeout=self.timeout)
        except queue.Empty:
            self._proc.kill()
            raise BackendTimeout(f"backend {self.name!r} timed out after {self.timeout}s on {op}")
        if raw is None:
            status = self._proc.wait()
            raise BackendStatusError(
                f"backend {self.name!r} closed stdout (exit status {status})"
            )
        self._log("recv", raw)

        reply = decode_message(raw)
        if reply.get("id") != message["id"]:
            raise BackendProtocolError(
                f"reply id {reply.get('id')!r} does not match request id {message['id']}",
                payload=reply,
            )
        if "error" in reply:
            err = reply["error"]
            raise BackendStatusError(
                f"backend {self.name!r} error on {op}: {err.get('kind')}: {err.get('message')}",
                payload=reply,
            )
        validate_reply(op, reply, role=self.role if op == "hello" else None)
        return reply

    # -- role operations ---------------------------------------------------

    def hello(self) -> dict:
        reply = self._call("hello")
        self._hello = reply
        return reply

    def propose(self, request) -> dict:
        reply = self._call("propose_layout", {"request": request_to_json_obj(request)})
        return reply["layout"]

    def generate(self, request: GenerationRequest):
        payload = {
            "layout": layout_to_json_obj(request.layout),
            "seed": request.seed,
            "style_schedule": [[t, w] for t, w in request.style_schedule.as_pairs()],
            "output_dir": request.output_dir,
        }
        if request.style_ref is not None:
            payload["style_ref"] = request.style_ref
        reply = self._call("generate", payload)
        info = reply["image"]
        image = CandidateImage(
            path=info["path"],
            width=int(info["width"]),
            height=int(info["height"]),
            generator=info.get("generator", self.name),
            seed=int(info.get("seed", request.seed)),
        )
        placements = None
        if "placements" in reply:
            placements = [
                Placement(instance_id=rec["instance_id"], cate=rec["cate"], bbox=BBox(*rec["bbox"]))
                for rec in reply["placements"]
            ]
        return image, placements

    def detect(self, image: CandidateImage, vocabulary: list[str]) -> list[Detection]:
        payload = {
            "image": {"path": image.path, "width": image.width, "height": image.height},
            "vocabulary": vocabulary,
        }
        reply = self._call("detect", payload)
        return [
            Detection(
                cate=rec["cate"],
                bbox=BBox(*rec["bbox"]),
                confidence=min(1.0, max(0.0, float(rec["confidence"]))),
                detector=self.name,
            )
            for rec in reply["detections"]
        ]

    def score(self, image: CandidateImage) -> float:
        reply = self._call("score", {"image": {"path": image.path}})
        score_range = None
        if self._hello and self._hello.get("score_range") is not None:
            lo, hi = self._hello["score_range"]
            score_range = (float(lo), float(hi))
        return normalize_score(float(reply["score"]), score_range)

    def shutdown(self) -> None:
        if self._proc.poll() is None:
            try:
                self._call("shutdown")
            except (BackendStatusError, BackendTimeout, BackendProtocolError):
                pass
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
