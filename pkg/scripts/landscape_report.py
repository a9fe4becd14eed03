"""Brute-force the target-term landscape on the simplex and dump the 1-D curves.

    python scripts/landscape_report.py --out runs/landscape
"""

import argparse
import json
from pathlib import Path

from adaptkit.landscape import brute_force_maximize, curve_samples


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--gamma-inv", type=float, nargs="+", default=[0.0, 0.1, 0.3, 1.0])
    ap.add_argument("--classes", type=int, nargs="+", default=[1, 2, 3])
    ap.add_argument("--grid-steps", type=int, default=200)
    ap.add_argument("--points", type=int, default=200)
    ap.add_argument("--out", default="runs/landscape")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = []
    for n in args.classes:
        for g in args.gamma_inv:
            res = brute_force_maximize(n, g, args.grid_steps)
            target_in_argmax = bool((res.argmax[:, -1] == 1.0).any())
            report.append({"n_classes": n, "gamma_inv": g, "max": res.max_value,
                           "argmax_size": len(res.argmax), "target_vertex_in_argmax": target_in_argmax})
            print(f"N={n} gamma_inv={g:<4} max {res.max_value:+.2e}  argmax {len(res.argmax)}  target vertex {target_in_argmax}")
    curves = {str(g): curve_samples(g, args.points, rescale=True) for g in args.gamma_inv}
    (out / "landscape.json").write_text(json.dumps({"brute_force": report, "curves": curves}, indent=1) + "\n")


if __name__ == "__main__":
    main()
