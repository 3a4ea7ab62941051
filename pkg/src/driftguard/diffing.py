"""Response diffing, threshold checks, and evolution reports.

Every function here is pure: two labelling responses for the same image go
in, deltas and violations come out. Label matching across epochs is exact,
case-sensitive text equality; a label present in only one epoch belongs to
the label-delta check and never to the confidence-delta check.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timezone

from .types import (
    CATEGORY_CONFIDENCE_DELTA,
    CATEGORY_EXPECTED_LABELS,
    CATEGORY_LABEL_DELTA,
    CODE_CONFIDENCE_DELTA,
    CODE_EXPECTED_LABELS,
    CODE_LABEL_DELTA,
    ERROR_TYPES,
    BenchmarkDataset,
    BenchmarkItem,
    ContractError,
    LabelledResponse,
    ThresholdRules,
    iso_ts,
)

_EPOCH_ZERO = datetime.fromtimestamp(0, timezone.utc)


def _require_same_image(old: LabelledResponse, new: LabelledResponse):
    if old.image_ref != new.image_ref:
        raise ContractError(
            f"responses refer to different images: {old.image_ref!r} vs {new.image_ref!r}"
        )


def label_set_delta(old: LabelledResponse, new: LabelledResponse):
    """Symmetric difference of the two label sets.

    Returns (new_labels, dropped_labels, count) where count is
    |new_labels| + |dropped_labels|.
    """
    _require_same_image(old, new)
    old_labels = old.labels()
    new_labels = new.labels()
    added = new_labels - old_labels
    dropped = old_labels - new_labels
    return added, dropped, len(added) + len(dropped)


def added_labels_in_order(old: LabelledResponse, new: LabelledResponse) -> list[str]:
    """Labels gained in the new epoch, in the new response's rank order."""
    old_labels = old.labels()
    return [a.label for a in new.annotations if a.label not in old_labels]


def dropped_labels_in_order(old: LabelledResponse, new: LabelledResponse) -> list[str]:
    """Labels lost since the old epoch, in the old response's rank order."""
    new_labels = new.labels()
    return [a.label for a in old.annotations if a.label not in new_labels]


def confidence_deltas(old: LabelledResponse, new: LabelledResponse) -> dict[str, float]:
    """Signed confidence change (new minus old) for every matched label.

    Keyed in the new response's rank order. Labels present in only one
    epoch are excluded.
    """
    _require_same_image(old, new)
    old_conf = old.confidences()
    return {
        ann.label: ann.confidence - old_conf[ann.label]
        for ann in new.annotations
        if ann.label in old_conf
    }


def trim_number(value) -> str:
    """Render a number without trailing zeros: 5 -> '5', 0.010 -> '0.01', 1.0 -> '1'."""
    text = repr(value)
    if "." in text and "e" not in text and "E" not in text:
        text = text.rstrip("0").rstrip(".")
    return text


def format_signed_mean(mean: float) -> str:
    """Signed, 4 decimals, round-half-even (the float formatting default)."""
    return f"{mean:+.4f}"


def label_delta_reason(threshold, added_count: int, dropped_count: int) -> str:
    return (
        f"Exceeded label count delta threshold ±{trim_number(threshold)} "
        f"({added_count} new labels + {dropped_count} dropped labels = "
        f"{added_count + dropped_count})."
    )


def confidence_delta_reason(threshold, flagged_count: int, mean: float) -> str:
    return (
        f"Exceeded confidence delta threshold ±{trim_number(threshold)} "
        f"in {flagged_count} labels (delta mean={format_signed_mean(mean)})."
    )


def expected_labels_reason(missing: list[str]) -> str:
    return f"The expected label(s) `{', '.join(missing)}' are missing in the response."


@dataclass(frozen=True)
class Violation:
    """One threshold breach for one image, with the data its error payload needs."""

    error_code: int
    category: str
    image_ref: str
    reason: str
    data: dict

    @property
    def error_type(self) -> str:
        return ERROR_TYPES[self.error_code]

    def payload(self) -> dict:
        return {**self.data, "uri": self.image_ref, "reason": self.reason}


def evaluate_image(
    old: LabelledResponse,
    new: LabelledResponse,
    item: BenchmarkItem,
    rules: ThresholdRules,
) -> list[Violation]:
    """Run the three benchmark checks on one image pair.

    Violations come back in code order (label delta, confidence delta,
    expected labels); an empty list means the image stayed within
    tolerance. Comparators are >= threshold for both delta checks.
    """
    _require_same_image(old, new)
    if old.image_ref != item.image_ref:
        raise ContractError(
            f"responses for {old.image_ref!r} evaluated against item {item.image_ref!r}"
        )
    violations = []

    added = added_labels_in_order(old, new)
    dropped = dropped_labels_in_order(old, new)
    count = len(added) + len(dropped)
    if count >= rules.max_delta_labels:
        violations.append(
            Violation(
                error_code=CODE_LABEL_DELTA,
                category=CATEGORY_LABEL_DELTA,
                image_ref=item.image_ref,
                reason=label_delta_reason(rules.max_delta_labels, len(added), len(dropped)),
                data={
                    "delta_labels_threshold": rules.max_delta_labels,
                    "delta_labels_detected": count,
                    "new_labels": added,
                    "dropped_labels": dropped,
                },
            )
        )

    deltas = confidence_deltas(old, new)
    flagged = {
        label: delta
        for label, delta in deltas.items()
        if abs(delta) >= rules.max_delta_confidence
    }
    if flagged:
        mean = sum(flagged.values()) / len(flagged)
        violations.append(
            Violation(
                error_code=CODE_CONFIDENCE_DELTA,
                category=CATEGORY_CONFIDENCE_DELTA,
                image_ref=item.image_ref,
                reason=confidence_delta_reason(rules.max_delta_confidence, len(flagged), mean),
                data={
                    "delta_confidence_threshold": rules.max_delta_confidence,
                    "delta_confidences_detected": flagged,
                },
            )
        )

    expected = rules.expected_labels_global | item.expected_labels
    missing = sorted(expected - new.labels())
    if missing:
        violations.append(
            Violation(
                error_code=CODE_EXPECTED_LABELS,
                category=CATEGORY_EXPECTED_LABELS,
                image_ref=item.image_ref,
                reason=expected_labels_reason(missing),
                data={
                    "expected_labels": sorted(expected),
                    "labels_detected": [a.label for a in new.annotations],
                    "labels_missing": missing,
                },
            )
        )

    return violations


@dataclass(frozen=True)
class EvolutionDelta:
    """Per-image drift between two epochs: raw deltas plus violated categories."""

    image_ref: str
    new_labels: frozenset[str]
    dropped_labels: frozenset[str]
    label_delta_count: int
    confidence_deltas: dict[str, float]
    top_label_old: str
    top_label_new: str
    top_confidence_delta: float
    violations: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "image_ref": self.image_ref,
            "new_labels": sorted(self.new_labels),
            "dropped_labels": sorted(self.dropped_labels),
            "label_delta_count": self.label_delta_count,
            "confidence_deltas": dict(self.confidence_deltas),
            "top_label_old": self.top_label_old,
            "top_label_new": self.top_label_new,
            "top_confidence_delta": self.top_confidence_delta,
            "violations": list(self.violations),
        }


@dataclass(frozen=True)
class EvolutionReport:
    """Aggregate drift between two benchmark epochs."""

    old_epoch: datetime
    new_epoch: datetime
    deltas: tuple[EvolutionDelta, ...]
    labels_added: int
    labels_dropped: int
    confidence_changes: int
    violating_images: int
    mean_label_delta_added: float
    mean_signed_confidence_delta: float

    def totals_dict(self) -> dict:
        return {
            "labels_added": self.labels_added,
            "labels_dropped": self.labels_dropped,
            "confidence_changes": self.confidence_changes,
            "violating_images": self.violating_images,
        }

    def summary_dict(self) -> dict:
        return {
            "old_epoch": iso_ts(self.old_epoch),
            "new_epoch": iso_ts(self.new_epoch),
            "totals": self.totals_dict(),
            "mean_label_delta_added": self.mean_label_delta_added,
            "mean_signed_confidence_delta": self.mean_signed_confidence_delta,
        }

    def to_dict(self) -> dict:
        result = self.summary_dict()
        result["deltas"] = [delta.to_dict() for delta in self.deltas]
        return result


def _delta_for_item(old, new, item, rules) -> EvolutionDelta:
    added, dropped, count = label_set_delta(old, new)
    deltas = confidence_deltas(old, new)
    top_old = old.top()
    top_new = new.top()
    if top_old is None or top_new is None:
        top_delta = 0.0
    else:
        top_delta = top_new.confidence - top_old.confidence
    return EvolutionDelta(
        image_ref=item.image_ref,
        new_labels=frozenset(added),
        dropped_labels=frozenset(dropped),
        label_delta_count=count,
        confidence_deltas=deltas,
        top_label_old=top_old.label if top_old else "",
        top_label_new=top_new.label if top_new else "",
        top_confidence_delta=top_delta,
        violations=tuple(v.category for v in evaluate_image(old, new, item, rules)),
    )


def check_alignment(snapshot, dataset: BenchmarkDataset, name: str = "snapshot"):
    """Snapshots must line up with the dataset by position and image_ref."""
    if len(snapshot) != len(dataset.items):
        raise ContractError(
            f"{name} has {len(snapshot)} responses for {len(dataset.items)} items"
        )
    for k, (response, item) in enumerate(zip(snapshot, dataset.items)):
        if response.image_ref != item.image_ref:
            raise ContractError(
                f"{name}[{k}] is {response.image_ref!r}, expected {item.image_ref!r}"
            )


def evaluate_epochs(
    old_snapshot,
    new_snapshot,
    dataset: BenchmarkDataset,
    rules: ThresholdRules,
) -> EvolutionReport:
    """Diff two aligned benchmark snapshots into an EvolutionReport.

    confidence_changes counts matched labels whose delta is nonzero, with no
    threshold applied; sub-threshold movement is visible in the raw deltas
    and only threshold-exceeding movement marks an image as violating.
    """
    check_alignment(old_snapshot, dataset, "old snapshot")
    check_alignment(new_snapshot, dataset, "new snapshot")

    deltas = tuple(
        _delta_for_item(old, new, item, rules)
        for old, new, item in zip(old_snapshot, new_snapshot, dataset.items)
    )

    labels_added = sum(len(d.new_labels) for d in deltas)
    labels_dropped = sum(len(d.dropped_labels) for d in deltas)
    confidence_changes = sum(
        1 for d in deltas for delta in d.confidence_deltas.values() if delta != 0.0
    )
    violating = sum(1 for d in deltas if d.violations)

    gained = [len(d.new_labels) for d in deltas if d.new_labels]
    mean_added = sum(gained) / len(gained) if gained else 0.0
    nonzero = [v for d in deltas for v in d.confidence_deltas.values() if v != 0.0]
    mean_signed = sum(nonzero) / len(nonzero) if nonzero else 0.0

    return EvolutionReport(
        old_epoch=max((r.captured_at for r in old_snapshot), default=_EPOCH_ZERO),
        new_epoch=max((r.captured_at for r in new_snapshot), default=_EPOCH_ZERO),
        deltas=deltas,
        labels_added=labels_added,
        labels_dropped=labels_dropped,
        confidence_changes=confidence_changes,
        violating_images=violating,
        mean_label_delta_added=mean_added,
        mean_signed_confidence_delta=mean_signed,
    )


def collect_violations(
    old_snapshot,
    new_snapshot,
    dataset: BenchmarkDataset,
    rules: ThresholdRules,
) -> list[Violation]:
    """All benchmark violations across a snapshot pair, sorted by code then
    dataset position (the order validation reports them in)."""
    check_alignment(old_snapshot, dataset, "old snapshot")
    check_alignment(new_snapshot, dataset, "new snapshot")
    indexed = []
    for k, (old, new, item) in enumerate(zip(old_snapshot, new_snapshot, dataset.items)):
        for violation in evaluate_image(old, new, item, rules):
            indexed.append((violation.error_code, k, violation))
    indexed.sort(key=lambda entry: (entry[0], entry[1]))
    return [violation for _, _, violation in indexed]
