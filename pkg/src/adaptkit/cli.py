"""Command-line entry point: ``adaptkit <subcommand> [options]``.

Exit codes: 0 success, 1 configuration or usage error, 2 numerical abort.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import io as aio
from . import tensor as T
from .config import ConfigError, load_config, to_dict
from .cycle import DivergenceError, TranslationConfig, interpolate_attribute, train_translation
from .data import SyntheticDomainSpec, make_two_domain_dataset
from .flow import DistillConfig, bilinear_warp, train_flow_predictors
from .harness import RunConfig, evaluate, select_model, train_uda
from .landscape import brute_force_maximize, curve_samples

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _write_rows(path: Path, rows: list[dict], header: list[str]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if dataclasses.is_dataclass(o):
        return dataclasses.asdict(o)
    raise TypeError(f"not serialisable: {type(o).__name__}")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _section(args, key, default):
    if args.config is None:
        return default()
    cfg = load_config(args.config)
    return cfg.get(key, default())


def _with_seed(obj, seed):
    return obj if seed is None else dataclasses.replace(obj, seed=seed)


# -- subcommands ---------------------------------------------------------------------------
def cmd_train(args) -> int:
    cfg = load_config(args.config) if args.config else {}
    run = _with_seed(cfg.get("run", RunConfig()), args.seed)
    data = make_two_domain_dataset(cfg.get("data", SyntheticDomainSpec()))
    log, model = train_uda(run, data)
    res = evaluate(model, data.test)
    out = _out_dir(args)
    if args.format == "csv":
        (out / "metrics.csv").write_text(log.to_csv())
    else:
        (out / "metrics.json").write_text(log.to_json() + "\n")
    aio.save_checkpoint(out / "model.ckpt", {p.name: p.data for p in model.params})
    summary = {"config": to_dict(run), "data": to_dict(data.spec), "data_checksum": data.checksum(),
               "test_accuracy": res.accuracy, "per_group": res.per_group, **log.summary["final"]}
    _write_json(out / "summary.json", summary)
    print(f"test accuracy {res.accuracy:.4f}  entropy {log.summary['final']['entropy']:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_config(args.config) if args.config else {}
    run = _with_seed(cfg.get("run", RunConfig()), args.seed)
    data = make_two_domain_dataset(cfg.get("data", SyntheticDomainSpec()))
    # a zero-step run builds the architecture (augmented head included) for the checkpoint
    _, model = train_uda(dataclasses.replace(run, steps=0, pretrain_steps=0), data)
    if args.checkpoint:
        saved = aio.load_checkpoint(args.checkpoint)
        for p in model.params:
            if p.name not in saved or saved[p.name].shape != p.data.shape:
                raise ConfigError(f"checkpoint {args.checkpoint} has no matching tensor {p.name!r}")
            p.data = saved[p.name].copy()
    res = evaluate(model, data.test)
    out = _out_dir(args)
    _write_json(out / "eval.json", dataclasses.asdict(res))
    print(f"accuracy {res.accuracy:.4f} " + " ".join(f"{k}={v:.4f}" for k, v in res.per_group.items()))
    return EXIT_OK


def cmd_select(args) -> int:
    cfg = load_config(args.config) if args.config else {}
    grid = cfg.get("grid") or [RunConfig(objective="source_only"), RunConfig(objective="dann_em")]
    seeds = cfg.get("seeds") or [args.seed if args.seed is not None else 0]
    data = make_two_domain_dataset(cfg.get("data", SyntheticDomainSpec()))
    sel = select_model(grid, data, seeds)
    out = _out_dir(args)
    if args.format == "csv":
        rows = [{"label": s.config.label(), "mean_val": s.mean_val, "mean_test": s.mean_test,
                 "stderr_test": s.stderr_test} for s in sel.scores]
        _write_rows(out / "selection.csv", rows, ["label", "mean_val", "mean_test", "stderr_test"])
    _write_json(out / "selection.json", sel.to_dict())
    b = sel.best
    print(f"best {b.config.label()}: test {b.mean_test:.4f} +- {b.stderr_test:.4f}")
    return EXIT_OK


def cmd_landscape(args) -> int:
    out = _out_dir(args)
    rows = [{"alpha": a, "value": v + 0.0} for a, v in curve_samples(args.gamma_inv, args.points, rescale=args.rescale)]
    _write_rows(out / "landscape.csv", rows, ["alpha", "value"])
    summary = {"gamma_inv": args.gamma_inv, "points": args.points, "rescale": args.rescale}
    if args.n_classes:
        summary["brute_force"] = brute_force_maximize(args.n_classes, args.gamma_inv, args.grid_steps).to_dict()
    _write_json(out / "landscape.json", summary)
    print(f"wrote {len(rows)} curve points to {out}")
    return EXIT_OK


def cmd_warp(args) -> int:
    image = aio.read_image(args.image)
    flows = [aio.read_flow(p) for p in args.flow]
    for f in flows:
        if f.shape[:2] != image.shape[:2]:
            raise ConfigError(f"flow of shape {f.shape[:2]} does not match image {image.shape[:2]}")
    out = _out_dir(args)
    # applying flows in sequence: each later flow samples the previous result
    for f in flows:
        image = bilinear_warp(image, f).data
    suffix = ".ppm" if image.ndim == 3 else ".pgm"
    aio.write_image(out / f"warped{suffix}", image)
    if len(flows) > 1:
        composed = flows[-1]
        for f in reversed(flows[:-1]):
            composed = bilinear_warp(f, composed).data
        aio.write_flow(out / "composed.flo", composed)
    print(f"wrote {out / ('warped' + suffix)}")
    return EXIT_OK


def cmd_distill(args) -> int:
    cfg = _with_seed(_section(args, "distill", DistillConfig), args.seed)
    res = train_flow_predictors(cfg)
    out = _out_dir(args)
    header = ["phase", "step", "loss", "l1_flow", "l1_image"]
    if args.format == "csv":
        _write_rows(out / "metrics.csv", res.metrics, header)
    summary = {"config": to_dict(cfg), "teacher_error": res.teacher_error,
               "student_error": res.student_error, "oracle_error": res.oracle_error,
               "ratio": res.student_error / res.teacher_error}
    if args.format == "json":
        summary["metrics"] = res.metrics
    _write_json(out / "summary.json", summary)
    print(f"teacher {res.teacher_error:.4f}  student {res.student_error:.4f}  oracle {res.oracle_error:.4f}")
    return EXIT_OK


def cmd_translate(args) -> int:
    cfg = _with_seed(_section(args, "translate", TranslationConfig), args.seed)
    res = train_translation(cfg)
    out = _out_dir(args)
    names = res.model.attrs.names
    header = ["step"] + [f"loss_d_{a}" for a in names] + ["loss_g", "cycle", "gt_l1"]
    if args.format == "csv":
        _write_rows(out / "metrics.csv", res.metrics, header)
    summary = {"config": to_dict(cfg), "gt_l1": res.gt_l1, "cycle": res.cycle}
    if args.format == "json":
        summary["metrics"] = res.metrics
    _write_json(out / "summary.json", summary)
    x = cfg.task.glyphs(np.random.default_rng(cfg.seed + 99), 1)[0]
    for t in np.linspace(0.0, 1.0, args.interp_steps):
        img = interpolate_attribute(res.model, x, names[0], names[-1], float(t))
        aio.write_image(out / f"interp_{t:.2f}.pgm", img)
    print(f"ground-truth L1 {res.gt_l1:.4f}  cycle {res.cycle:.4f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .audit import run_audit

    report = run_audit(points=args.points, seed=args.seed or 0)
    out = _out_dir(args)
    rows = [{"name": k, "max_rel_error": v} for k, v in report.items()]
    _write_rows(out / "gradcheck.csv", rows, ["name", "max_rel_error"])
    worst = max(report.values())
    _write_json(out / "gradcheck.json", {"errors": report, "max_error": worst, "tolerance": 1e-4})
    for k, v in report.items():
        print(f"{k:<24} {v:.2e}")
    print(f"max error {worst:.2e}")
    return EXIT_OK if worst < 1e-4 else EXIT_NUMERIC


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "select": cmd_select,
    "landscape": cmd_landscape,
    "warp": cmd_warp,
    "distill": cmd_distill,
    "translate": cmd_translate,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (schema 1)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--format", choices=("csv", "json"), default="csv")

    p = _Parser(prog="adaptkit", description="Domain-adaptation objectives and diagnostics")
    sub = p.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}", parser_class=_Parser)
    sub.add_parser("train", parents=[common], help="train one model")
    ev = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    ev.add_argument("--checkpoint")
    sub.add_parser("select", parents=[common], help="grid sweep with validation-based selection")
    ls = sub.add_parser("landscape", parents=[common], help="target-term landscape curves")
    ls.add_argument("--gamma-inv", type=float, required=True)
    ls.add_argument("--points", type=int, default=200)
    ls.add_argument("--rescale", action="store_true")
    ls.add_argument("--n-classes", type=int, default=0, help="also brute-force the simplex for N classes")
    ls.add_argument("--grid-steps", type=int, default=200)
    wp = sub.add_parser("warp", parents=[common], help="warp a PGM/PPM image with one or more flows")
    wp.add_argument("--image", required=True)
    wp.add_argument("--flow", required=True, action="append")
    sub.add_parser("distill", parents=[common], help="teacher/student flow training")
    tr = sub.add_parser("translate", parents=[common], help="attribute-conditioned translation")
    tr.add_argument("--interp-steps", type=int, default=5)
    gc = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient audit")
    gc.add_argument("--points", type=int, default=10)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_CONFIG
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"adaptkit: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, FileNotFoundError, aio.FormatError) as exc:
        print(f"adaptkit: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, T.NonFiniteError) as exc:
        print(f"adaptkit: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"adaptkit: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
