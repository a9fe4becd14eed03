"""Train the keypoint-conditioned teacher, distill a pixel-input student, report reconstruction errors.

    python scripts/distill_flow.py --out runs/distill
"""

import argparse
import json
from dataclasses import asdict
from pathlib import Path

from adaptkit.flow import DistillConfig, train_flow_predictors


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lam", type=float, default=1.0, help="weight of the image term")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/distill")
    args = ap.parse_args()

    cfg = DistillConfig(lam=args.lam, seed=args.seed)
    res = train_flow_predictors(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = {"config": asdict(cfg), "teacher": res.teacher_error, "student": res.student_error,
               "oracle": res.oracle_error, "ratio": res.student_error / res.teacher_error, "metrics": res.metrics}
    (out / "distill.json").write_text(json.dumps(summary, indent=1) + "\n")
    print(f"teacher {res.teacher_error:.4f}  student {res.student_error:.4f}  ratio {summary['ratio']:.3f}")


if __name__ == "__main__":
    main()
