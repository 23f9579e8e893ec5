"""Backend protocol, built-in simulators, and the subprocess transport."""

from .base import (
    ROLES,
    Backend,
    CandidateImage,
    GenerationRequest,
    Placement,
    StyleSchedule,
    normalize_score,
    style_lambda,
)
from .protocol import (
    BackendError,
    BackendProtocolError,
    BackendRoleError,
    BackendStatusError,
    BackendTimeout,
    decode_message,
    encode_message,
    validate_reply,
    validate_request,
)
from .remote import DEFAULT_TIMEOUT, TRANSCRIPT_ENV, SubprocessBackend
from .sim import (
    SimDetector,
    SimDetectorConfig,
    SimGenerator,
    SimProposer,
    SimScorer,
    derive_seed,
    parse_sim_spec,
    read_placements_sidecar,
    scan_rendered_boxes,
    simulate_detect,
    simulate_generate,
)

__all__ = [
    "ROLES",
    "Backend",
    "BackendError",
    "BackendProtocolError",
    "BackendRoleError",
    "BackendStatusError",
    "BackendTimeout",
    "CandidateImage",
    "DEFAULT_TIMEOUT",
    "GenerationRequest",
    "Placement",
    "SimDetector",
    "SimDetectorConfig",
    "SimGenerator",
    "SimProposer",
    "SimScorer",
    "StyleSchedule",
    "SubprocessBackend",
    "TRANSCRIPT_ENV",
    "decode_message",
    "derive_seed",
    "encode_message",
    "normalize_score",
    "parse_sim_spec",
    "read_placements_sidecar",
    "scan_rendered_boxes",
    "simulate_detect",
    "simulate_generate",
    "style_lambda",
    "validate_reply",
    "validate_request",
]
