"""Attribute-conditioned translation on the analytic brightness task, with an interpolation strip.

    python scripts/translate_brightness.py --out runs/translate
"""

import argparse
import json
from pathlib import Path

import numpy as np

from adaptkit import io as aio
from adaptkit.cycle import TranslationConfig, interpolate_attribute, train_translation


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=23)
    ap.add_argument("--shared", action="store_true", help="one generator for all attributes")
    ap.add_argument("--out", default="runs/translate")
    args = ap.parse_args()

    cfg = TranslationConfig(steps=args.steps, seed=args.seed, shared=args.shared)
    res = train_translation(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps({"gt_l1": res.gt_l1, "cycle": res.cycle, "metrics": res.metrics}, indent=1) + "\n")
    x = cfg.task.glyphs(np.random.default_rng(cfg.seed + 99), 1)[0]
    strip = [interpolate_attribute(res.model, x, "day", "night", t) for t in np.linspace(0, 1, 6)]
    aio.write_image(out / "interpolation.pgm", np.concatenate([x, *strip], axis=1))
    print(f"ground-truth L1 {res.gt_l1:.4f}  cycle {res.cycle:.4f}")


if __name__ == "__main__":
    main()
