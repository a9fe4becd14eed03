"""Compare source-only, DANN, the shared-head variant and its entropy-regularised form on the hard-shift task.

    python scripts/adaptation_ordering.py --seeds 10 --out runs/ordering
"""

import argparse
import csv
import json
import time
from pathlib import Path

from adaptkit.experiments import adaptation_ordering
from adaptkit.harness import RunConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--steps", type=int, default=RunConfig.steps)
    ap.add_argument("--val-size", type=int, default=200)
    ap.add_argument("--out", default="runs/ordering")
    args = ap.parse_args()

    t0 = time.perf_counter()
    rep = adaptation_ordering(range(args.seeds), base=RunConfig(steps=args.steps, val_size=args.val_size))
    rows = rep.rows()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "ordering.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    full = {name: sel.to_dict() for name, sel in rep.selections.items()}
    (out / "ordering.json").write_text(json.dumps({"data_checksum": rep.checksum, "selections": full}, indent=1) + "\n")
    for r in rows:
        print(f"{r['objective']:<12} {r['selected']:<28} test {r['test']:.3f} +- {r['stderr']:.3f}  entropy {r['entropy']:.3f}")
    print(f"{time.perf_counter() - t0:.0f}s")


if __name__ == "__main__":
    main()
