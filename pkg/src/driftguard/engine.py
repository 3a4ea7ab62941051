"""The facade's behaviour, independent of any HTTP framing.

The engine owns the benchmark dataset, the token store, the upstream
client, the precondition-failure counter, and the detection workflow. The
HTTP layer translates requests into the engine's vocabulary and back.

Request handling reads one atomic snapshot of the current token on entry
and uses it throughout, so a detection run swapping the token mid-request
never produces a torn view.
"""

from __future__ import annotations

import json
import logging
import threading
from pathlib import Path

import requests as _requests

from .diffing import evaluate_epochs
from .scheduler import (
    OUTCOME_ABORTED,
    OUTCOME_NO_CHANGE,
    OUTCOME_ROTATED,
    DetectionRun,
)
from .token import (
    TokenStore,
    etag_of,
    mint_token,
    no_key_error,
    unknown_token_error,
    validate,
)
from .types import (
    CATEGORY_FOR_CODE,
    SEVERITY_ERROR,
    SEVERITY_WARNING,
    BenchmarkDataset,
    LabelledResponse,
    canonical_json,
    http_date,
    iso_ts,
    utc_now_second,
)
from .upstream import UpstreamClient
from .wire import AnnotateRequest, serialize_wire

log = logging.getLogger(__name__)

DATASET_FILE = "dataset.json"
AUDIT_FILE = "audit.log"
DETECTIONS_FILE = "detections.log"

NOT_INITIALIZED = "not_initialized"


class UpstreamUnreachable(RuntimeError):
    """Every benchmark item failed; there is nothing to baseline against."""


def snapshot_content(snapshot):
    """Snapshot identity for change detection: everything but capture time."""
    return tuple((r.image_ref, r.annotations, r.success) for r in snapshot)


def filter_response(response: LabelledResponse, rules) -> LabelledResponse:
    """Apply the serving rules: prune low-confidence labels, cap the count."""
    kept = tuple(
        ann for ann in response.annotations if ann.confidence >= rules.min_confidence
    )[: rules.max_labels]
    return LabelledResponse(
        image_ref=response.image_ref,
        annotations=kept,
        captured_at=response.captured_at,
        success=response.success,
    )


class GuardEngine:
    def __init__(self, config, client: UpstreamClient | None = None, now_fn=utc_now_second):
        self.config = config
        self.storage = Path(config.storage_path)
        self.storage.mkdir(parents=True, exist_ok=True)
        self.store = TokenStore(self.storage)
        self.client = client or UpstreamClient(config.upstream_url)
        self._now = now_fn
        self.dataset: BenchmarkDataset | None = self._load_dataset()
        self._log_lock = threading.Lock()
        self._counter_lock = threading.Lock()
        self._violations_since_run = 0
        self._run_lock = threading.Lock()
        self._inflight_lock = threading.Lock()
        self._in_flight = 0
        self.max_in_flight_seen = 0
        # Set by the scheduler; called when the 412 counter reaches z.
        self.on_violation_threshold = None

    # ------------------------------------------------------------------ state

    @property
    def initialized(self) -> bool:
        return self.dataset is not None and self.store.current is not None

    def token_metadata(self) -> dict | None:
        current = self.store.current
        return current.metadata() if current else None

    def violations_since_run(self) -> int:
        with self._counter_lock:
            return self._violations_since_run

    def _load_dataset(self) -> BenchmarkDataset | None:
        path = self.storage / DATASET_FILE
        if not path.is_file():
            return None
        try:
            return BenchmarkDataset.from_dict(json.loads(path.read_text(encoding="utf-8")))
        except (ValueError, KeyError) as exc:
            log.warning("ignoring unreadable dataset file %s: %s", path, exc)
            return None

    def _save_dataset(self, dataset: BenchmarkDataset):
        path = self.storage / DATASET_FILE
        path.write_text(
            json.dumps(dataset.to_dict(), sort_keys=True, ensure_ascii=False, indent=2) + "\n",
            encoding="utf-8",
        )

    def _append_line(self, filename: str, record: dict):
        with self._log_lock:
            with open(self.storage / filename, "a", encoding="utf-8") as handle:
                handle.write(canonical_json(record) + "\n")

    def _audit(self, record: dict):
        self._append_line(AUDIT_FILE, {"ts": iso_ts(utc_now_second()), **record})

    def _post_callback(self, payload: dict):
        url = self.config.warning_callback_url
        if not url:
            log.info("no warning callback configured; dropping notification")
            return
        try:
            _requests.post(url, json=payload, timeout=5)
        except _requests.RequestException as exc:
            # The client must not be penalized for operator infrastructure.
            log.warning("warning callback delivery to %s failed: %s", url, exc)

    # ------------------------------------------------------------- benchmark

    def initialize_benchmark(self, items, rules, dataset_id: str | None = None):
        """Workflow: fingerprint the dataset, baseline the service, mint and
        persist the first token. Raises ContractError on a bad manifest and
        UpstreamUnreachable when no item could be snapshotted at all."""
        items = tuple(items)
        dataset = BenchmarkDataset.create(
            dataset_id or "ds-" + BenchmarkDataset.create("tmp", items).fingerprint[:12],
            items,
        )
        snapshot = self.client.snapshot_benchmark(dataset, rules)
        if not any(r.success for r in snapshot):
            raise UpstreamUnreachable(
                f"all {len(snapshot)} benchmark requests failed against {self.client.endpoint}"
            )
        token = mint_token(self.config.service_id, dataset, rules, snapshot, self._now())
        self._save_dataset(dataset)
        self.dataset = dataset
        self.store.store(token)
        self._audit(
            {
                "kind": "benchmark_initialized",
                "token_id": token.token_id,
                "dataset_fingerprint": dataset.fingerprint,
                "success": token.success,
            }
        )
        return token

    # -------------------------------------------------------------- annotate

    def _resolve_token(self, token_ref, current):
        kind, value = token_ref
        if kind == "etag":
            if value == current.token_id:
                return current, None
            found = self.store.find(value)
            if found is not None:
                return found, None
            return None, unknown_token_error(value, current)
        # Last-modified style: the newest token at or before the given date
        # is the state the client believes in.
        if current.created_at <= value:
            return current, None
        found = self.store.newest_at_or_before(value)
        if found is not None:
            return found, None
        return None, unknown_token_error(iso_ts(value), current)

    def _precondition_failed(self, error, url: str):
        self._audit({"kind": "precondition_failed", "url": url, "error_code": error.error_code})
        hook = None
        with self._counter_lock:
            self._violations_since_run += 1
            if self._violations_since_run >= self.config.violation_trigger_z:
                hook = self.on_violation_threshold
        if hook is not None:
            hook()
        return 412, {}, error.to_wire()

    def _forward(self, url: str, max_results: int | None, current):
        rules = current.rules
        request = AnnotateRequest(url=url, max_results=max_results or rules.max_labels)
        upstream = self.client.annotate(request)
        if not upstream.success:
            return 502, {}, {"error": f"upstream request for {url} failed"}
        filtered = filter_response(upstream, rules)
        self._audit(
            {
                "kind": "annotate",
                "url": url,
                "status": 200,
                "token_id": current.token_id,
                "labels": len(filtered.annotations),
            }
        )
        headers = {
            "ETag": etag_of(current),
            "Last-Modified": http_date(current.created_at),
        }
        return 200, headers, serialize_wire(filtered)

    def annotate(self, url: str, max_results: int | None, token_ref):
        """Serve one guarded annotation request.

        token_ref is ("etag", token_id) or ("date", datetime). Returns
        (status, headers, body) for the HTTP layer.
        """
        current = self.store.current
        dataset = self.dataset
        # A fingerprint mismatch means a re-initialisation is mid-flight;
        # until both halves agree the proxy has no usable baseline.
        if (
            current is None
            or dataset is None
            or current.dataset_fingerprint != dataset.fingerprint
        ):
            return self._precondition_failed(no_key_error(), url)
        requested, resolution_error = self._resolve_token(token_ref, current)
        if resolution_error is not None:
            return self._precondition_failed(resolution_error, url)
        error = validate(requested, current, dataset)
        if error is None:
            return self._forward(url, max_results, current)

        # Robustness failures (codes 0-6) are always hard errors; the
        # severity map only softens the three benchmark checks.
        severity = SEVERITY_ERROR
        if error.error_code >= 7:
            severity = current.rules.severity[CATEGORY_FOR_CODE[error.error_code]]
        if severity == SEVERITY_ERROR:
            return self._precondition_failed(error, url)

        # warning and info still serve the client from upstream
        status, headers, body = self._forward(url, max_results, current)
        if status == 200:
            if severity == SEVERITY_WARNING:
                self._post_callback(error.to_wire())
            else:
                self._audit({"kind": "violation", "url": url, **error.to_wire()})
        return status, headers, body

    # -------------------------------------------------------------- detection

    def run_detection(self, trigger: str) -> DetectionRun:
        """Execute one evolution-detection run. Serialized: concurrent calls
        queue up on the run lock, so at most one run is ever in flight."""
        with self._run_lock:
            with self._inflight_lock:
                self._in_flight += 1
                self.max_in_flight_seen = max(self.max_in_flight_seen, self._in_flight)
            try:
                run = self._detect(trigger)
            finally:
                with self._inflight_lock:
                    self._in_flight -= 1
                with self._counter_lock:
                    self._violations_since_run = 0
        self._append_line(DETECTIONS_FILE, run.to_dict())
        if run.outcome == OUTCOME_ROTATED:
            self._post_callback({"kind": "detection", "run": run.to_dict()})
        return run

    def _detect(self, trigger: str) -> DetectionRun:
        started = self._now()
        current = self.store.current
        dataset = self.dataset
        if (
            current is None
            or dataset is None
            or current.dataset_fingerprint != dataset.fingerprint
        ):
            return DetectionRun(
                started_at=started,
                finished_at=self._now(),
                trigger=trigger,
                outcome=OUTCOME_ABORTED,
                reason=NOT_INITIALIZED,
            )
        snapshot = self.client.snapshot_benchmark(dataset, current.rules)
        failures = sum(1 for r in snapshot if not r.success)
        if failures:
            # An incomplete probe proves nothing about drift; diffing against
            # empty failure entries would fabricate label deltas.
            log.warning("detection aborted: %d/%d benchmark items failed", failures, len(snapshot))
            return DetectionRun(
                started_at=started,
                finished_at=self._now(),
                trigger=trigger,
                outcome=OUTCOME_ABORTED,
                reason=f"snapshot_incomplete ({failures}/{len(snapshot)} items failed)",
            )
        report = evaluate_epochs(current.snapshot, snapshot, dataset, current.rules)
        if report.violating_images < 1:
            return DetectionRun(
                started_at=started,
                finished_at=self._now(),
                trigger=trigger,
                outcome=OUTCOME_NO_CHANGE,
                report=report,
            )
        if snapshot_content(snapshot) == snapshot_content(current.snapshot):
            # Identical results can only flag a persistent expected-label
            # absence the operator already learned about when this token was
            # installed; rotating onto a content-identical token would
            # invalidate healthy clients for nothing.
            return DetectionRun(
                started_at=started,
                finished_at=self._now(),
                trigger=trigger,
                outcome=OUTCOME_NO_CHANGE,
                report=report,
                reason="state_unchanged (persistent expected-labels violation)",
            )
        new_token = mint_token(
            self.config.service_id, dataset, current.rules, snapshot, self._now()
        )
        self.store.store(new_token)
        log.info(
            "behaviour change detected (%d violating images): token %s -> %s",
            report.violating_images,
            current.token_id,
            new_token.token_id,
        )
        return DetectionRun(
            started_at=started,
            finished_at=self._now(),
            trigger=trigger,
            outcome=OUTCOME_ROTATED,
            report=report,
            old_token_id=current.token_id,
            new_token_id=new_token.token_id,
        )
