"""Behaviour-token lifecycle: minting, weak-ETag encoding, request
validation, and persistent history.

A token freezes the proxy's state at one instant: the rules in force, the
benchmark identity, and the full response snapshot. Requests carry only
the opaque token id inside a weak ETag; the heavy state stays server-side.
Validation compares a requested token against the live one and reduces any
difference to one of ten coded errors, checked in ascending code order so
robustness failures always win over benchmark failures.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

from .diffing import collect_violations
from .types import (
    ERROR_TYPES,
    BenchmarkDataset,
    ContractError,
    LabelledResponse,
    ThresholdRules,
    canonical_json,
    iso_ts,
    parse_iso_ts,
    sha256_hex,
)

log = logging.getLogger(__name__)

TOKEN_ID_LENGTH = 16


class ETagParseError(ValueError):
    """Header is not a well-formed weak ETag."""


@dataclass(frozen=True)
class ValidationError:
    """A coded precondition failure. This is a domain result, not a fault."""

    error_code: int
    error_type: str
    error_data: dict

    def __post_init__(self):
        if ERROR_TYPES.get(self.error_code) != self.error_type:
            raise ContractError(
                f"error_code {self.error_code} does not map to {self.error_type!r}"
            )

    @classmethod
    def make(cls, code: int, error_data: dict) -> "ValidationError":
        return cls(error_code=code, error_type=ERROR_TYPES[code], error_data=error_data)

    def to_wire(self) -> dict:
        return {
            "error_code": self.error_code,
            "error_type": self.error_type,
            "error_data": self.error_data,
        }

    @classmethod
    def from_wire(cls, data: dict) -> "ValidationError":
        return cls(
            error_code=data["error_code"],
            error_type=data["error_type"],
            error_data=data["error_data"],
        )


@dataclass(frozen=True)
class BehaviourToken:
    token_id: str
    service_id: str
    dataset_fingerprint: str
    created_at: datetime
    rules: ThresholdRules
    snapshot: tuple[LabelledResponse, ...]
    success: bool

    def __post_init__(self):
        object.__setattr__(self, "snapshot", tuple(self.snapshot))
        if self.success != all(r.success for r in self.snapshot):
            raise ContractError("token success flag inconsistent with its snapshot")

    def metadata(self) -> dict:
        """Client-safe summary: never includes the snapshot itself."""
        return {
            "token_id": self.token_id,
            "service_id": self.service_id,
            "dataset_fingerprint": self.dataset_fingerprint,
            "created_at": iso_ts(self.created_at),
            "rules": self.rules.to_dict(),
            "success": self.success,
            "snapshot_size": len(self.snapshot),
        }

    def to_dict(self) -> dict:
        return {
            "token_id": self.token_id,
            "service_id": self.service_id,
            "dataset_fingerprint": self.dataset_fingerprint,
            "created_at": iso_ts(self.created_at),
            "rules": self.rules.to_dict(),
            "snapshot": [r.to_dict() for r in self.snapshot],
            "success": self.success,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BehaviourToken":
        return cls(
            token_id=data["token_id"],
            service_id=data["service_id"],
            dataset_fingerprint=data["dataset_fingerprint"],
            created_at=parse_iso_ts(data["created_at"]),
            rules=ThresholdRules.from_dict(data["rules"]),
            snapshot=tuple(LabelledResponse.from_dict(r) for r in data["snapshot"]),
            success=data["success"],
        )


def snapshot_digest(snapshot) -> str:
    return sha256_hex(canonical_json([r.to_dict() for r in snapshot]))


def compute_token_id(
    service_id: str,
    dataset_fingerprint: str,
    created_at: datetime,
    rules: ThresholdRules,
    snapshot,
) -> str:
    """Deterministic id: SHA-256 over the identifying fields joined by LF,
    truncated to the first 16 hex chars."""
    material = "\n".join(
        [
            service_id,
            dataset_fingerprint,
            iso_ts(created_at),
            rules.canonical_text(),
            snapshot_digest(snapshot),
        ]
    )
    return sha256_hex(material)[:TOKEN_ID_LENGTH]


def mint_token(
    service_id: str,
    dataset: BenchmarkDataset,
    rules: ThresholdRules,
    snapshot,
    now: datetime,
) -> BehaviourToken:
    snapshot = tuple(snapshot)
    if len(snapshot) != len(dataset.items):
        raise ContractError(
            f"snapshot has {len(snapshot)} responses for {len(dataset.items)} items"
        )
    for k, (response, item) in enumerate(zip(snapshot, dataset.items)):
        if response.image_ref != item.image_ref:
            raise ContractError(
                f"snapshot[{k}] is {response.image_ref!r}, expected {item.image_ref!r}"
            )
    created_at = now.replace(microsecond=0)
    return BehaviourToken(
        token_id=compute_token_id(
            service_id, dataset.fingerprint, created_at, rules, snapshot
        ),
        service_id=service_id,
        dataset_fingerprint=dataset.fingerprint,
        created_at=created_at,
        rules=rules,
        snapshot=snapshot,
        success=all(r.success for r in snapshot),
    )


def etag_of(token) -> str:
    token_id = token if isinstance(token, str) else token.token_id
    return f'W/"{token_id}"'


def parse_etag(header_value: str) -> str:
    """Invert etag_of. Strong ETags are rejected: only semantic equivalence
    is ever promised, so only weak validators are meaningful here."""
    value = header_value.strip()
    if not value.startswith('W/"'):
        raise ETagParseError(f"expected a weak ETag (W/\"...\"), got {header_value!r}")
    if not value.endswith('"') or len(value) < 5:
        raise ETagParseError(f"malformed weak ETag {header_value!r}")
    token_id = value[3:-1]
    if not token_id or '"' in token_id:
        raise ETagParseError(f"malformed weak ETag {header_value!r}")
    return token_id


def no_key_error() -> ValidationError:
    return ValidationError.make(
        0,
        {
            "source_key": None,
            "reason": "The proxy is still initialising its first behaviour token.",
        },
    )


def unknown_token_error(token_ref: str, current: BehaviourToken) -> ValidationError:
    """An id (or date) that matches nothing we ever minted: the state it
    encodes is not the benchmark state served here, so it reads as a
    dataset mismatch."""
    return ValidationError.make(
        2,
        {
            "source_key": None,
            "violating_key": current.metadata(),
            "token_provided": token_ref,
            "dataset_fingerprint_expected": current.dataset_fingerprint,
            "reason": f"Behaviour token {token_ref!r} is not known to this proxy.",
        },
    )


def _keys(requested: BehaviourToken, current: BehaviourToken) -> dict:
    return {"source_key": requested.metadata(), "violating_key": current.metadata()}


def _robustness_error(requested, current) -> ValidationError | None:
    if requested.service_id != current.service_id:
        return ValidationError.make(
            1,
            {
                **_keys(requested, current),
                "service_expected": current.service_id,
                "service_provided": requested.service_id,
                "reason": "Token was issued for a different service.",
            },
        )
    if (
        requested.dataset_fingerprint != current.dataset_fingerprint
        or requested.rules.expected_labels_global != current.rules.expected_labels_global
    ):
        return ValidationError.make(
            2,
            {
                **_keys(requested, current),
                "dataset_fingerprint_expected": current.dataset_fingerprint,
                "dataset_fingerprint_provided": requested.dataset_fingerprint,
                "expected_labels_rule_expected": sorted(current.rules.expected_labels_global),
                "expected_labels_rule_provided": sorted(requested.rules.expected_labels_global),
                "reason": "Token encodes a different benchmark dataset.",
            },
        )
    if not requested.success:
        return ValidationError.make(
            3,
            {
                **_keys(requested, current),
                "success_provided": requested.success,
                "reason": "Token was minted from an unsuccessful benchmark snapshot.",
            },
        )
    if (
        requested.rules.min_confidence != current.rules.min_confidence
        or requested.rules.max_delta_confidence != current.rules.max_delta_confidence
    ):
        return ValidationError.make(
            4,
            {
                **_keys(requested, current),
                "min_confidence_expected": current.rules.min_confidence,
                "min_confidence_provided": requested.rules.min_confidence,
                "max_delta_confidence_expected": current.rules.max_delta_confidence,
                "max_delta_confidence_provided": requested.rules.max_delta_confidence,
                "reason": "Confidence rules differ between the tokens.",
            },
        )
    if (
        requested.rules.max_labels != current.rules.max_labels
        or requested.rules.max_delta_labels != current.rules.max_delta_labels
    ):
        return ValidationError.make(
            5,
            {
                **_keys(requested, current),
                "max_labels_expected": current.rules.max_labels,
                "max_labels_provided": requested.rules.max_labels,
                "max_delta_labels_expected": current.rules.max_delta_labels,
                "max_delta_labels_provided": requested.rules.max_delta_labels,
                "reason": "Label rules differ between the tokens.",
            },
        )
    if len(requested.snapshot) != len(current.snapshot):
        return ValidationError.make(
            6,
            {
                **_keys(requested, current),
                "response_length_expected": len(current.snapshot),
                "response_length_provided": len(requested.snapshot),
                "reason": "Tokens hold different numbers of benchmark responses.",
            },
        )
    return None


def validate(
    requested: BehaviourToken,
    current: BehaviourToken | None,
    dataset: BenchmarkDataset,
) -> ValidationError | None:
    """Compare a requested token against the live one.

    Returns None when the tokens are semantically equivalent within the
    live rules. Robustness checks (codes 0-6) run first in code order;
    then every aligned snapshot pair goes through the benchmark checks. The
    first violation in (code, dataset position) order becomes the returned
    error and any remaining ones ride along in additional_errors.

    A requested token with the current token's id is the current state by
    definition, so the benchmark checks are skipped: label and confidence
    deltas of a snapshot against itself are zero anyway, and the
    expected-labels check must not lock clients out of a state the
    operator was already notified about when the token rotated.
    """
    if current is None:
        return no_key_error()

    robustness = _robustness_error(requested, current)
    if robustness is not None:
        return robustness

    if requested.token_id == current.token_id:
        return None

    violations = collect_violations(
        requested.snapshot, current.snapshot, dataset, current.rules
    )
    if not violations:
        return None

    primary, rest = violations[0], violations[1:]
    position = {item.image_ref: k for k, item in enumerate(dataset.items)}[primary.image_ref]
    error_data = {
        **_keys(requested, current),
        "source_response": requested.snapshot[position].to_dict(),
        "violating_response": current.snapshot[position].to_dict(),
        **primary.payload(),
    }
    if rest:
        error_data["additional_errors"] = [
            {
                "error_code": v.error_code,
                "error_type": v.error_type,
                "error_data": v.payload(),
            }
            for v in rest
        ]
    return ValidationError.make(primary.error_code, error_data)


class TokenStore:
    """Append-only token history persisted one file per token.

    File names are `<created_at unix seconds>-<token_id>.token`; contents
    are the canonical serialization (sorted keys, UTF-8, LF). The newest
    token is the current one; replacing it is atomic with respect to
    readers. Reload order for same-second mints falls back to file mtime,
    which matches write order.
    """

    def __init__(self, directory):
        self._dir = Path(directory)
        self._dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._history: list[BehaviourToken] = []
        self._load()

    def _load(self):
        entries = []
        for path in self._dir.glob("*.token"):
            try:
                token = BehaviourToken.from_dict(json.loads(path.read_text(encoding="utf-8")))
            except (ValueError, KeyError) as exc:
                log.warning("skipping unreadable token file %s: %s", path, exc)
                continue
            entries.append((token.created_at, path.stat().st_mtime_ns, path.name, token))
        entries.sort(key=lambda e: (e[0], e[1], e[2]))
        self._history = [token for *_, token in entries]

    def path_for(self, token: BehaviourToken) -> Path:
        unix = int(token.created_at.timestamp())
        return self._dir / f"{unix}-{token.token_id}.token"

    def store(self, token: BehaviourToken) -> Path:
        payload = (
            json.dumps(token.to_dict(), sort_keys=True, ensure_ascii=False, indent=2) + "\n"
        )
        with self._lock:
            path = self.path_for(token)
            path.write_text(payload, encoding="utf-8")
            # single reference assignment so readers never see a torn history
            history = [t for t in self._history if t.token_id != token.token_id]
            history.append(token)
            self._history = history
        return path

    @property
    def current(self) -> BehaviourToken | None:
        history = self._history
        return history[-1] if history else None

    def history(self) -> list[BehaviourToken]:
        return list(self._history)

    def find(self, token_id: str) -> BehaviourToken | None:
        for token in reversed(self._history):
            if token.token_id == token_id:
                return token
        return None

    def newest_at_or_before(self, moment: datetime) -> BehaviourToken | None:
        for token in reversed(self._history):
            if token.created_at <= moment:
                return token
        return None
