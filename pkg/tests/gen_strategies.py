"""Shared hypothesis strategies for domain values."""

from datetime import datetime, timezone

import hypothesis.strategies as st

from driftguard.types import (
    CHECK_CATEGORIES,
    SEVERITIES,
    BenchmarkDataset,
    BenchmarkItem,
    LabelAnnotation,
    LabelledResponse,
    ThresholdRules,
)

T0 = datetime(2024, 1, 1, tzinfo=timezone.utc)
T1 = datetime(2024, 1, 9, tzinfo=timezone.utc)

labels = st.text(alphabet="abcdefghij", min_size=1, max_size=6)

# exclude_max keeps a 0 -> 1 flip impossible, so a max_delta_confidence of
# 1.0 really is an unreachable sentinel
confidences = st.floats(min_value=0.0, max_value=1.0, exclude_max=True, allow_nan=False)

label_maps = st.dictionaries(labels, confidences, min_size=0, max_size=8)


def response_from_map(image_ref, label_map, captured_at=T0):
    ordered = sorted(label_map.items(), key=lambda kv: (-kv[1], kv[0]))
    return LabelledResponse(
        image_ref=image_ref,
        annotations=tuple(LabelAnnotation(label=l, confidence=c) for l, c in ordered),
        captured_at=captured_at,
    )


@st.composite
def response_pairs(draw, image_ref="http://images.test/x.jpg"):
    """Two epochs of one image; the small alphabet makes label overlap common."""
    return (
        response_from_map(image_ref, draw(label_maps), T0),
        response_from_map(image_ref, draw(label_maps), T1),
    )


@st.composite
def rules_strategy(draw):
    return ThresholdRules(
        max_labels=draw(st.integers(min_value=1, max_value=20)),
        min_confidence=draw(st.sampled_from([0.0, 0.1, 0.5])),
        max_delta_labels=draw(st.integers(min_value=1, max_value=10)),
        max_delta_confidence=draw(st.sampled_from([0.001, 0.01, 0.05, 0.1, 0.5, 1.0])),
        expected_labels_global=frozenset(draw(st.lists(labels, max_size=2))),
        severity={c: draw(st.sampled_from(SEVERITIES)) for c in CHECK_CATEGORIES},
    )


@st.composite
def aligned_corpora(draw, min_items=1, max_items=5):
    """(dataset, old_snapshot, new_snapshot) aligned by construction."""
    n = draw(st.integers(min_value=min_items, max_value=max_items))
    items = []
    old_snapshot = []
    new_snapshot = []
    for k in range(n):
        image_ref = f"http://images.test/{k}.jpg"
        expected = frozenset(draw(st.lists(labels, max_size=1)))
        items.append(
            BenchmarkItem(image_ref=image_ref, ground_truth="", expected_labels=expected)
        )
        old_snapshot.append(response_from_map(image_ref, draw(label_maps), T0))
        new_snapshot.append(response_from_map(image_ref, draw(label_maps), T1))
    return BenchmarkDataset.create("hyp", items), old_snapshot, new_snapshot
