"""Command-line interface.

Commands: gen-data, train, eval, gradcheck. Every command is
deterministic given its flags and seeds. Exit codes: 0 success,
1 numeric failure, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import dpfile, evaluation, learn, report
from .config import load_config, serialize_config
from .errors import NumericError, UsageError
from .evaluation import (ablation_suite, base_novel_eval, cross_dataset_eval,
                         generate_synthetic_dataset, make_shifted_copy)
from .learn import gradcheck_problem, GRADCHECK_TOLERANCE
from .grad import finite_diff_report


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dple",
                                description="quaternion domain prompt learning")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic embedding dataset")
    g.add_argument("--classes", type=int, default=12)
    g.add_argument("--per-class", type=int, default=40)
    g.add_argument("--dim", type=int, default=48, help="d_domain")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--spread", type=float, default=0.03)
    g.add_argument("--patches", type=int, default=8)
    g.add_argument("--shift-seed", type=int, default=0)
    g.add_argument("--name", default="synthetic")

    t = sub.add_parser("train", help="train prompts on a dataset")
    t.add_argument("--config", default=None, help="key=value config file")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="model container path")
    t.add_argument("--report-dir", default=None,
                   help="write loss records and figures here")

    e = sub.add_parser("eval", help="evaluate a trained model")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--protocol", choices=("base-novel", "cross", "ablate"),
                   default="base-novel")
    e.add_argument("--runs", type=int, default=1,
                   help="average base-novel over this many independent trainings")
    e.add_argument("--target", action="append", default=[],
                   help="extra target dataset for --protocol cross (repeatable)")
    e.add_argument("--steps", type=int, default=None,
                   help="cap training steps per ablation cell")
    e.add_argument("--report-dir", default=None)

    c = sub.add_parser("gradcheck",
                       help="finite-difference check of the full pipeline")
    c.add_argument("--seed", type=int, default=0)
    return p


def _pct(x: float) -> str:
    return f"{100.0 * x:6.2f}"


def cmd_gen_data(args) -> int:
    if args.classes < 2:
        raise UsageError("--classes must be >= 2")
    if args.per_class < 1:
        raise UsageError("--per-class must be >= 1")
    rng = np.random.Generator(np.random.PCG64(args.seed))
    ds = generate_synthetic_dataset(args.classes, args.per_class, args.dim,
                                    args.spread, args.shift_seed, rng,
                                    n_patches=args.patches, name=args.name)
    dpfile.write_dataset(args.out, ds)
    print(f"wrote {args.out}: {ds.features.shape[0]} records, "
          f"{len(ds.class_names)} classes ({len(ds.base_ids)} base / "
          f"{len(ds.novel_ids)} novel), d_domain={ds.d_domain}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config) if args.config else learn.TrainConfig()
    cfg.validate()
    ds = dpfile.read_dataset(args.data)
    if cfg.lr == 0:
        print("warning: lr = 0, the loss series will stay constant")
    pipe = learn.build_pipeline(cfg)
    rep = learn.train(cfg, ds, pipe)
    dpfile.write_model(args.out, cfg, pipe)

    print(f"trained {rep.steps} steps in {rep.wall_time_s:.1f}s on {ds.name!r}")
    print(f"loss: first={rep.losses[0]:.4f} last={rep.losses[-1]:.4f}")
    print(f"acc_base={_pct(rep.acc_base)}  acc_novel={_pct(rep.acc_novel)}  "
          f"hm={_pct(rep.hm)}")
    frozen_ok = rep.checksums["frozen_before"] == rep.checksums["frozen_after"]
    print(f"frozen weights unchanged: {frozen_ok}")
    print(f"model written to {args.out}")
    if not frozen_ok:
        raise NumericError("frozen encoder weights changed during training")

    if args.report_dir:
        out = Path(args.report_dir)
        rows = [{"step": i + 1, "loss": v} for i, v in enumerate(rep.losses)]
        report.write_records(out / "train_records.jsonl", rows)
        report.render_loss_curve(rep.losses, out / "loss_curve.png")
        print(f"report written to {out}")
    return 0


def _print_eval_table(rep) -> None:
    print(f"{'class':<24} {'acc%':>7}")
    for cname, acc in rep.per_class.items():
        print(f"{cname:<24} {_pct(acc):>7}")
    print(f"base={_pct(rep.acc_base)}  novel={_pct(rep.acc_novel)}  "
          f"hm={_pct(rep.hm)}")


def cmd_eval(args) -> int:
    cfg, pipe = dpfile.read_model(args.model)
    ds = dpfile.read_dataset(args.data)
    out_dir = Path(args.report_dir) if args.report_dir else None

    if args.protocol == "base-novel":
        if args.runs < 1:
            raise UsageError("--runs must be >= 1")
        reports = [base_novel_eval(pipe, ds)]
        for extra in range(1, args.runs):
            run_cfg = learn.TrainConfig(**{**cfg.__dict__, "seed": cfg.seed + extra})
            run_pipe = learn.build_pipeline(run_cfg)
            learn.train(run_cfg, ds, run_pipe)
            reports.append(base_novel_eval(run_pipe, ds))
        acc_b = float(np.mean([r.acc_base for r in reports]))
        acc_n = float(np.mean([r.acc_novel for r in reports]))
        hm = evaluation.harmonic_mean(100 * acc_b, 100 * acc_n) / 100.0
        print(f"protocol base-novel on {ds.name!r} (runs={args.runs})")
        _print_eval_table(reports[0])
        if args.runs > 1:
            print(f"averaged: base={_pct(acc_b)}  novel={_pct(acc_n)}  hm={_pct(hm)}")
        if out_dir:
            rows = [{"cell": f"run{i}", "config_hash": "-",
                     "acc_base": r.acc_base, "acc_novel": r.acc_novel, "hm": r.hm}
                    for i, r in enumerate(reports)]
            report.write_records(out_dir / "eval_records.jsonl", rows)
            report.render_accuracy_bars(rows, out_dir / "eval_accuracy.png",
                                        title=f"base-novel on {ds.name}")
            print(f"report written to {out_dir}")
        return 0

    if args.protocol == "cross":
        if args.target:
            targets = [dpfile.read_dataset(t) for t in args.target]
        else:
            targets = [make_shifted_copy(ds, cfg.seed + 100 + i, suffix=f"v2.{i}")
                       for i in range(3)]
        rows = cross_dataset_eval(pipe, ds.name, targets)
        print(f"protocol cross, source {ds.name!r}")
        print(f"{'target':<28} {'acc%':>7}")
        for name, acc in rows:
            print(f"{name:<28} {_pct(acc):>7}")
        if out_dir:
            report.write_records(out_dir / "cross_records.jsonl",
                                 [{"target": n, "accuracy": a} for n, a in rows])
            report.render_target_bars(rows, out_dir / "cross_accuracy.png",
                                      title=f"transfer from {ds.name}")
            print(f"report written to {out_dir}")
        return 0

    # ablate: fresh trainings per cell from the model's config echo
    cells = ablation_suite(cfg, ds, max_steps=args.steps)
    print(f"protocol ablate on {ds.name!r}: {len(cells)} cells")
    print(f"{'axis':<12} {'cell':<16} {'hash':<14} {'base%':>7} {'novel%':>7} {'hm%':>7}")
    for c in cells:
        print(f"{c['axis']:<12} {c['cell']:<16} {c['config_hash']:<14} "
              f"{_pct(c['acc_base']):>7} {_pct(c['acc_novel']):>7} {_pct(c['hm']):>7}")
    if out_dir:
        slim = [{k: c[k] for k in ("axis", "cell", "config_hash", "acc_base",
                                   "acc_novel", "hm", "final_loss")}
                for c in cells]
        report.write_records(out_dir / "ablation_records.jsonl", slim)
        report.render_accuracy_bars(cells, out_dir / "ablation_grid.png",
                                    title="ablation grid")
        print(f"report written to {out_dir}")
    return 0


def cmd_gradcheck(args) -> int:
    fn, named = gradcheck_problem(args.seed)
    per_tensor = finite_diff_report(fn, named, step=1e-5)
    groups: dict[str, tuple[float, str, tuple]] = {}
    for name, (err, coord) in per_tensor.items():
        group = name.split("/")[0]
        if group not in groups or err > groups[group][0]:
            groups[group] = (err, name, coord)
    worst_err, worst_name, worst_coord = 0.0, "", ()
    for group in ("t_c", "p_l", "q_t", "q_v", "projector"):
        err, name, coord = groups[group]
        print(f"{group:<12} max rel err {err:.3e}  (at {name}{list(coord)})")
        if err > worst_err:
            worst_err, worst_name, worst_coord = err, name, coord
    ok = worst_err <= GRADCHECK_TOLERANCE
    print(f"gradcheck {'PASS' if ok else 'FAIL'}: max rel err {worst_err:.3e} "
          f"(tolerance {GRADCHECK_TOLERANCE:g})")
    if not ok:
        print(f"worst coordinate: {worst_name}{list(worst_coord)}")
        raise NumericError("gradient check failed")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {"gen-data": cmd_gen_data, "train": cmd_train,
                "eval": cmd_eval, "gradcheck": cmd_gradcheck}
    try:
        return handlers[args.command](args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 1
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
