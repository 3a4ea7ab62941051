#!/usr/bin/env python3
"""Walk the full proxy lifecycle against the simulated upstream.

Starts a simulator and a guard proxy in-process, then: registers a
benchmark, serves a guarded request, drifts the upstream, runs detection,
shows the stale token being rejected with a coded 412, and finishes with a
refreshed token being served again.
"""

import json
import tempfile

import requests

from driftguard.config import ProxyConfig
from driftguard.engine import GuardEngine
from driftguard.proxy import ProxyServer
from driftguard.simulator import SimulatorServer, parse_script
from driftguard.types import ThresholdRules
from driftguard.upstream import UpstreamClient

SCRIPT = """\
[epoch 0]
add http://images.test/street.jpg car 0.93
add http://images.test/street.jpg motor vehicle 0.91
add http://images.test/street.jpg city 0.88
add http://images.test/street.jpg road 0.85
add http://images.test/street.jpg vehicle 0.82
add http://images.test/sheep.jpg sheep 0.9622
add http://images.test/sheep.jpg fauna 0.90
[epoch 1]
drop http://images.test/street.jpg car
drop http://images.test/street.jpg motor vehicle
drop http://images.test/street.jpg city
drop http://images.test/street.jpg road
add http://images.test/street.jpg transport 0.94
add http://images.test/street.jpg building 0.90
add http://images.test/street.jpg architecture 0.87
add http://images.test/street.jpg house 0.84
shift http://images.test/sheep.jpg sheep 0.0194
"""

MANIFEST = [
    {"image_ref": "http://images.test/street.jpg", "ground_truth": "vehicle",
     "expected_labels": []},
    {"image_ref": "http://images.test/sheep.jpg", "ground_truth": "animal",
     "expected_labels": ["fauna"]},
]


def show(step, payload):
    print(f"\n== {step}")
    print(json.dumps(payload, indent=2, ensure_ascii=False))


def main():
    storage = tempfile.mkdtemp(prefix="drift-guard-demo-")
    with SimulatorServer(parse_script(SCRIPT, seed=1)) as sim:
        config = ProxyConfig(
            listen="127.0.0.1:0",
            upstream_url=sim.endpoint,
            service_id="vision-demo",
            storage_path=storage,
            rules=ThresholdRules(max_labels=8, max_delta_labels=5, max_delta_confidence=0.01),
        )
        engine = GuardEngine(config, client=UpstreamClient(sim.endpoint, timeout=5))
        with ProxyServer(config, engine=engine) as proxy:
            base = proxy.base_url
            init = requests.post(f"{base}/benchmark", json={"items": MANIFEST}, timeout=30)
            etag = init.headers["ETag"]
            show("benchmark registered (workflow: initialise)", init.json())
            print(f"client token: {etag}")

            ok = requests.post(
                f"{base}/annotate",
                json={"url": "http://images.test/street.jpg", "maxResults": 5},
                headers={"If-Match": etag},
                timeout=30,
            )
            show(f"guarded request pre-drift -> {ok.status_code}", ok.json())

            sim.advance_epoch()
            detect = requests.post(f"{base}/admin/detect", timeout=30)
            body = detect.json()
            show("detection run after upstream drift", {k: body[k] for k in
                 ("outcome", "old_token_id", "new_token_id", "report")})

            rejected = requests.post(
                f"{base}/annotate",
                json={"url": "http://images.test/street.jpg", "maxResults": 5},
                headers={"If-Match": etag},
                timeout=30,
            )
            show(f"stale token post-drift -> {rejected.status_code}", rejected.json())

            fresh = requests.get(f"{base}/token", timeout=30).headers["ETag"]
            refreshed = requests.post(
                f"{base}/annotate",
                json={"url": "http://images.test/street.jpg", "maxResults": 5},
                headers={"If-Match": fresh},
                timeout=30,
            )
            show(f"refreshed token -> {refreshed.status_code}", refreshed.json())


if __name__ == "__main__":
    main()
