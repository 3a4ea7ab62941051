"""The vision service's wire dialect.

Request: {"url": ..., "maxResults": ...}. Response: {"responses":
[{"label_annotations": [{"mid", "description", "score", "topicality"}]}]}.
Parsing normalizes: annotations re-sorted by score descending, duplicate
labels collapsed to their highest-scoring instance, truncation to the
requested result count. An empty "responses" array round-trips a failed
call.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from datetime import datetime

from .types import ContractError, LabelAnnotation, LabelledResponse

log = logging.getLogger(__name__)


class WireFormatError(ValueError):
    """Body does not parse as the service's response format."""


@dataclass(frozen=True)
class AnnotateRequest:
    url: str
    max_results: int

    def __post_init__(self):
        if not self.url:
            raise ContractError("request url must be non-empty")
        if self.max_results < 1:
            raise ContractError("maxResults must be at least 1")

    def to_wire(self) -> dict:
        return {"url": self.url, "maxResults": self.max_results}


def serialize_wire(response: LabelledResponse) -> dict:
    if not response.success:
        return {"responses": []}
    return {
        "responses": [
            {
                "label_annotations": [
                    {
                        "mid": ann.ontology_id or "",
                        "description": ann.label,
                        "score": ann.confidence,
                        "topicality": ann.topicality if ann.topicality is not None else ann.confidence,
                    }
                    for ann in response.annotations
                ]
            }
        ]
    }


def parse_wire_response(
    payload: dict,
    image_ref: str,
    captured_at: datetime,
    max_results: int | None = None,
) -> LabelledResponse:
    """Normalize a wire body into a LabelledResponse.

    Raises WireFormatError on malformed input; an empty "responses" array
    parses as a failed call (that is how failures serialize).
    """
    if not isinstance(payload, dict) or not isinstance(payload.get("responses"), list):
        raise WireFormatError("body must be an object with a 'responses' array")
    responses = payload["responses"]
    if not responses:
        return LabelledResponse(
            image_ref=image_ref, annotations=(), captured_at=captured_at, success=False
        )
    entry = responses[0]
    if not isinstance(entry, dict) or not isinstance(entry.get("label_annotations"), list):
        raise WireFormatError("response entry must carry a 'label_annotations' array")

    parsed = []
    for k, raw in enumerate(entry["label_annotations"]):
        if not isinstance(raw, dict):
            raise WireFormatError(f"label_annotations[{k}] is not an object")
        try:
            label = raw["description"]
            score = raw["score"]
        except KeyError as exc:
            raise WireFormatError(f"label_annotations[{k}] missing {exc}") from exc
        if not isinstance(label, str) or not label.strip():
            raise WireFormatError(f"label_annotations[{k}] has an empty description")
        if not isinstance(score, (int, float)) or isinstance(score, bool):
            raise WireFormatError(f"label_annotations[{k}] score is not numeric")
        if not 0.0 <= float(score) <= 1.0:
            raise WireFormatError(f"label_annotations[{k}] score {score!r} outside [0, 1]")
        topicality = raw.get("topicality")
        if topicality is not None and (
            not isinstance(topicality, (int, float)) or isinstance(topicality, bool)
        ):
            raise WireFormatError(f"label_annotations[{k}] topicality is not numeric")
        parsed.append(
            LabelAnnotation(
                label=label.strip(),
                confidence=float(score),
                ontology_id=raw.get("mid") or None,
                topicality=float(topicality) if topicality is not None else None,
            )
        )

    parsed.sort(key=lambda a: (-a.confidence, a.label))
    deduped = []
    seen = set()
    for ann in parsed:
        if ann.label in seen:
            log.warning("duplicate label %r in response for %s; keeping the "
                        "highest-confidence instance", ann.label, image_ref)
            continue
        seen.add(ann.label)
        deduped.append(ann)
    if max_results is not None:
        deduped = deduped[:max_results]

    return LabelledResponse(
        image_ref=image_ref,
        annotations=tuple(deduped),
        captured_at=captured_at,
        success=True,
    )
