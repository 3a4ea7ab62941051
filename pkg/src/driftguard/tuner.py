"""Sweep candidate drift thresholds over a captured snapshot pair.

The right thresholds depend on the application: too tight and harmless
noise raises errors, too loose and real drift slips through. The tuner
counts violating images for every grid cell so an operator can pick the
knee point.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .diffing import evaluate_image
from .types import BenchmarkDataset, ContractError, ThresholdRules


def _check_grid(grid, name, kind):
    values = tuple(grid)
    if not values:
        raise ContractError(f"{name} grid must be non-empty")
    if any(not isinstance(v, kind) or isinstance(v, bool) for v in values):
        raise ContractError(f"{name} grid values must be {kind.__name__}s")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ContractError(f"{name} grid must be strictly increasing")
    return values


@dataclass(frozen=True)
class TunerMatrix:
    """Violating-image counts per (max_delta_labels, max_delta_confidence) cell."""

    label_grid: tuple[int, ...]
    confidence_grid: tuple[float, ...]
    counts: tuple[tuple[int, ...], ...]  # rows follow label_grid, columns confidence_grid

    def cell(self, max_delta_labels: int, max_delta_confidence: float) -> int:
        row = self.label_grid.index(max_delta_labels)
        col = self.confidence_grid.index(max_delta_confidence)
        return self.counts[row][col]

    def to_tsv(self, pretty: bool = False) -> str:
        header = ["max_delta_labels\\max_delta_confidence"] + [
            repr(c) for c in self.confidence_grid
        ]
        rows = [header]
        for label_value, row in zip(self.label_grid, self.counts):
            rows.append([repr(label_value)] + [str(count) for count in row])
        if not pretty:
            return "\n".join("\t".join(row) for row in rows)
        widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
        return "\n".join(
            "  ".join(cell.rjust(width) for cell, width in zip(row, widths)) for row in rows
        )

    def to_dict(self) -> dict:
        return {
            "label_grid": list(self.label_grid),
            "confidence_grid": list(self.confidence_grid),
            "counts": [list(row) for row in self.counts],
        }


def tune_thresholds(
    old_snapshot,
    new_snapshot,
    dataset: BenchmarkDataset,
    label_grid,
    confidence_grid,
    base_rules: ThresholdRules | None = None,
) -> TunerMatrix:
    """Count violating images for every threshold combination.

    The expected-labels check is held fixed across cells (it does not
    depend on the thresholds being swept); base_rules supplies the global
    expected-label set and defaults to none. Counts are non-increasing
    along both axes because the comparators are >= threshold.
    """
    labels = _check_grid(label_grid, "label", int)
    confidences = _check_grid(confidence_grid, "confidence", float)
    rules = base_rules if base_rules is not None else ThresholdRules()

    counts = []
    for max_delta_labels in labels:
        row = []
        for max_delta_confidence in confidences:
            cell_rules = replace(
                rules,
                max_delta_labels=max_delta_labels,
                max_delta_confidence=max_delta_confidence,
            )
            violating = 0
            for old, new, item in zip(old_snapshot, new_snapshot, dataset.items):
                if evaluate_image(old, new, item, cell_rules):
                    violating += 1
            row.append(violating)
        counts.append(tuple(row))

    return TunerMatrix(
        label_grid=labels,
        confidence_grid=confidences,
        counts=tuple(counts),
    )
