#!/usr/bin/env python3
"""Generate a seeded demo corpus for offline replay and threshold tuning.

Writes a drift script, two epoch directories of captured responses, a
benchmark manifest, and a rules file, then prints ready-to-run commands.
"""

import argparse
from pathlib import Path

from driftguard.corpus import write_corpus
from driftguard.simulator import corpus_for_epoch, random_drift_script, script_to_text

RULES_TEXT = """\
max_labels=10
min_confidence=0.0
max_delta_labels=3
max_delta_confidence=0.05
"""


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="demo-corpus", help="output directory")
    parser.add_argument("--seed", type=int, default=606)
    parser.add_argument("--images", type=int, default=200)
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    script, items = random_drift_script(seed=args.seed, n_images=args.images)
    (out / "drift.script").write_text(script_to_text(script), encoding="utf-8")
    write_corpus(out / "epoch0", corpus_for_epoch(script, 0))
    write_corpus(out / "epoch1", corpus_for_epoch(script, 1))

    manifest_lines = [
        f"{item.image_ref}\t{item.ground_truth}\t{','.join(sorted(item.expected_labels))}"
        for item in items
    ]
    (out / "benchmark.tsv").write_text("\n".join(manifest_lines) + "\n", encoding="utf-8")
    (out / "rules.conf").write_text(RULES_TEXT, encoding="utf-8")

    print(f"wrote {args.images}-image corpus (seed {args.seed}) under {out}/")
    print("try:")
    print(
        f"  drift-guard replay --old {out}/epoch0 --new {out}/epoch1 "
        f"--rules {out}/rules.conf --manifest {out}/benchmark.tsv"
    )
    print(
        f"  drift-guard tune --old {out}/epoch0 --new {out}/epoch1 "
        f"--labels 1,3,5,8 --confs 0.01,0.05,0.1,0.3 "
        f"--manifest {out}/benchmark.tsv --pretty"
    )
    print(f"  drift-guard simulate --script {out}/drift.script --seed {args.seed} --port 9100")


if __name__ == "__main__":
    main()
