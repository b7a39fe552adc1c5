"""Command-line entry point ``lsv``.

Subcommands write CSV files into ``--out-dir`` and print a short summary.
Exit status is 0 on success, 1 on runtime or data errors (including failed
``--assert`` checks) and 2 on usage errors.
"""

import argparse
import csv
import io
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import checks, harness, optim
from .io import FormatError, atomic_write_text, read_pgm
from .losses import jaccard_grad
from .metrics import ConfusionAccumulator, dice, image_iou_per_class

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2

TOY_START = (1.0, 1.5)
TRAIN_LOSSES = ("lovasz_hinge", "hinge", "cross_entropy", "rahman_wang")


class CommandError(Exception):
    """Runtime or data error reported with exit status 1."""


def positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def nonnegative_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {value}")
    return value


def positive_float(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not (value > 0 and math.isfinite(value)):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return value


def power_of_two(text):
    value = positive_int(text)
    if value & (value - 1):
        raise argparse.ArgumentTypeError(f"expected a power of two, got {value}")
    return value


def _write(args, name, text):
    path = Path(args.out_dir) / name
    try:
        atomic_write_text(path, text)
    except OSError as exc:
        raise CommandError(f"cannot write {path}: {exc}") from exc
    return path


def _csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# -- gradcheck --------------------------------------------------------------------


def cmd_gradcheck(args):
    if args.loss in ("lovasz_softmax", "cross_entropy") and args.classes < 2:
        raise CommandError("--classes must be at least 2")
    errors = checks.gradcheck(args.loss, args.p, args.classes, args.trials, args.seed)
    path = _write(args, f"gradcheck_{args.loss}.csv", checks.gradcheck_to_csv(errors))
    worst = max(errors) if errors else 0.0
    ok = worst < args.tol
    print(f"{args.loss}: {len(errors)} trials, max abs error {worst:.3e} "
          f"({'ok' if ok else 'FAIL'}, tol {args.tol:g}) -> {path}")
    return EXIT_OK if ok else EXIT_FAILURE


# -- toy ----------------------------------------------------------------------------


def _synthetic(args):
    return harness.SyntheticConfig(
        n_images=args.n_images, height=args.size, width=args.size,
        feature_mean_gap=args.eps, noise_std=args.noise, seed=args.seed,
    )


def cmd_toy(args):
    cfg = _synthetic(args)
    data = harness.generate_circles(cfg)
    if args.bias_sweep:
        grid = np.round(np.arange(args.bias_min, args.bias_max + args.bias_step / 2, args.bias_step), 10)
        rows = harness.bias_sweep(*data, bias_grid=grid)
        path = _write(args, "bias_sweep.csv", harness.sweep_to_csv(rows))
        argmins = {name: harness.sweep_argmin(rows, name)
                   for name in ("lovasz_hinge", "hinge", "cross_entropy", "jaccard")}
        for name, b in argmins.items():
            print(f"argmin {name:>13}: {b:+.2f}")
        print(f"-> {path}")
        if args.check:
            step = args.bias_step
            checks_ = [
                ("lovasz_hinge within one step of jaccard",
                 abs(argmins["lovasz_hinge"] - argmins["jaccard"]) <= step + 1e-9),
                ("hinge more than 5 steps from jaccard",
                 abs(argmins["hinge"] - argmins["jaccard"]) > 5 * step + 1e-9),
                ("cross_entropy more than 5 steps from jaccard",
                 abs(argmins["cross_entropy"] - argmins["jaccard"]) > 5 * step + 1e-9),
            ]
            return _report_checks(checks_)
        return EXIT_OK
    tcfg = harness.TrainConfig(loss_kind=args.loss, optimizer=args.optimizer,
                               epochs=args.epochs, lr=args.lr, seed=args.seed)
    result = harness.train_linear(data, tcfg)
    path = _write(args, f"train_{args.loss}.csv", result.to_csv())
    report_path = _write(args, f"train_{args.loss}_metrics.csv", result.report.to_csv())
    print(f"{args.loss}: validation dataset-mIoU {result.report.mean_iou:.4f}, "
          f"foreground image-IoU {result.image_iou[1]:.4f} -> {path}, {report_path}")
    return EXIT_OK


def _report_checks(items):
    ok = True
    for name, passed in items:
        print(f"[{'PASS' if passed else 'FAIL'}] {name}")
        ok &= bool(passed)
    return EXIT_OK if ok else EXIT_FAILURE


# -- metrics ------------------------------------------------------------------------


def _mask_files(directory):
    d = Path(directory)
    if not d.is_dir():
        raise CommandError(f"not a directory: {d}")
    return {p.name: p for p in sorted(d.glob("*.pgm"))}


def cmd_metrics(args):
    gt_files, pred_files = _mask_files(args.gt_dir), _mask_files(args.pred_dir)
    if set(gt_files) != set(pred_files):
        only_gt = sorted(set(gt_files) - set(pred_files))
        only_pred = sorted(set(pred_files) - set(gt_files))
        raise CommandError(
            f"mask filenames differ: only in {args.gt_dir}: {only_gt or '-'}; "
            f"only in {args.pred_dir}: {only_pred or '-'}"
        )
    if not gt_files:
        raise CommandError(f"no .pgm masks found in {args.gt_dir}")
    acc = ConfusionAccumulator(args.classes)
    gts, preds = [], []
    for name in sorted(gt_files):
        try:
            g, p = read_pgm(gt_files[name]), read_pgm(pred_files[name])
        except (OSError, FormatError) as exc:
            raise CommandError(str(exc)) from exc
        if g.shape != p.shape:
            raise CommandError(f"{name}: shape {g.shape} in gt but {p.shape} in predictions")
        for label, arr in (("gt", g), ("pred", p)):
            if arr.max() >= args.classes:
                raise CommandError(
                    f"{name}: {label} label {int(arr.max())} outside class set 0..{args.classes - 1}"
                )
        acc.accumulate(g, p)
        gts.append(g.ravel())
        preds.append(p.ravel())
    report = acc.report()
    path = _write(args, "metrics.csv", report.to_csv())
    classes = range(args.classes)
    all_gt, all_pred = np.concatenate(gts), np.concatenate(preds)
    summary = [
        ["dataset_miou", f"{report.mean_iou:.6f}"],
        ["image_miou", f"{image_iou_per_class(gts, preds, classes).mean():.6f}"],
    ] + [[f"dice_{c}", f"{dice(all_gt, all_pred, c):.6f}"] for c in classes]
    summary_path = _write(args, "metrics_summary.csv", _csv(["metric", "value"], summary))
    sys.stdout.write(report.to_csv())
    for name, value in summary:
        print(f"# {name} {value}")
    print(f"-> {path}, {summary_path}")
    return EXIT_OK


# -- bench ----------------------------------------------------------------------------


def bench_jaccard_grad(ps, repeats, seed):
    """Median wall time in ns of ``jaccard_grad`` for each size in ``ps``."""
    rng = np.random.default_rng(seed)
    rows = []
    for p in ps:
        m = rng.random(p)
        delta = rng.random(p) < 0.5
        jaccard_grad(m, delta)  # warm-up
        times = []
        for _ in range(repeats):
            start = time.perf_counter_ns()
            jaccard_grad(m, delta)
            times.append(time.perf_counter_ns() - start)
        rows.append((p, int(np.median(times))))
    return rows


def loglog_slope(rows):
    p = np.log([r[0] for r in rows])
    t = np.log([r[1] for r in rows])
    return float(np.polyfit(p, t, 1)[0])


def bench_from_csv(text):
    lines = text.strip().splitlines()
    if not lines or lines[0] != "p,median_ns":
        raise ValueError("not a benchmark table")
    return [tuple(int(v) for v in line.split(",")) for line in lines[1:]]


def cmd_bench(args):
    if args.p_min > args.p_max:
        raise CommandError("--p-min must not exceed --p-max")
    ps = [1 << k for k in range(args.p_min.bit_length() - 1, args.p_max.bit_length())]
    rows = bench_jaccard_grad(ps, args.repeats, args.seed)
    path = _write(args, "bench.csv", _csv(["p", "median_ns"], rows))
    for p, ns in rows:
        print(f"p={p:>8}  {ns:>12} ns")
    if len(rows) >= 2:
        slope = loglog_slope(rows)
        print(f"log-log slope {slope:.3f} -> {path}")
        if args.check:
            return _report_checks([("slope in [1.0, 1.15]", 1.0 <= slope <= 1.15)])
    else:
        print(f"-> {path}")
    return EXIT_OK


# -- prox-demo -----------------------------------------------------------------------


def prox_demo_rows(nu, eta, alpha, steps, x0=TOY_START):
    rows = []
    for method in ("gd", "momentum", "prox"):
        traj = optim.toy_trajectory(method, x0, nu, eta, alpha, steps)
        rows.extend((method, int(s), x1, x2, obj) for s, obj, x1, x2 in traj)
    return rows


def prox_demo_to_csv(rows, steps):
    body = [(m, s, repr(float(x1)), repr(float(x2)), repr(float(o)))
            for m, s, x1, x2, o in rows if steps > 0]
    return _csv(["method", "step", "x1", "x2", "objective"], body)


def prox_demo_from_csv(text):
    reader = csv.reader(io.StringIO(text))
    if next(reader) != ["method", "step", "x1", "x2", "objective"]:
        raise ValueError("not a prox-demo table")
    return [(m, int(s), float(a), float(b), float(o)) for m, s, a, b, o in reader]


def trajectory_checks(rows):
    """Monotone prox objective and at least one momentum increase."""
    obj = {m: [o for mm, _, _, _, o in rows if mm == m] for m in ("prox", "momentum")}
    prox_monotone = bool(np.all(np.diff(obj["prox"]) <= 1e-12))
    momentum_increase = bool(np.any(np.diff(obj["momentum"]) > 0))
    return prox_monotone, momentum_increase


def cmd_prox_demo(args):
    rows = prox_demo_rows(args.nu, args.eta, args.alpha, args.steps)
    path = _write(args, "prox_demo.csv", prox_demo_to_csv(rows, args.steps))
    if args.steps > 0:
        for method in ("gd", "momentum", "prox"):
            last = [r for r in rows if r[0] == method][-1]
            print(f"{method:>8}: objective {last[4]:.6f} at ({last[2]:+.4f}, {last[3]:+.4f})")
    print(f"-> {path}")
    if args.check:
        if args.steps == 0:
            raise CommandError("--assert needs at least one step")
        prox_ok, mom_inc = trajectory_checks(rows)
        return _report_checks([
            ("prox objective monotone nonincreasing", prox_ok),
            ("momentum objective increases at least once", mom_inc),
        ])
    return EXIT_OK


# -- props ----------------------------------------------------------------------------


def cmd_props(args):
    results = checks.run_properties(args.seed, args.n)
    rows = [(r.name, int(r.passed), r.detail, f"{r.seconds:.4f}") for r in results]
    path = _write(args, "props.csv", _csv(["property", "passed", "detail", "seconds"], rows))
    for r in results:
        print(f"[{'PASS' if r.passed else 'FAIL'}] {r.name}: {r.detail}")
    print(f"-> {path}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILURE


# -- parser ------------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lsv", description="Lovász extension surrogates for the Jaccard loss."
    )
    parser.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    parser.add_argument("--out-dir", default=".", help="directory for CSV outputs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--loss", required=True, choices=checks.GRADCHECK_LOSSES)
    p.add_argument("--p", type=positive_int, default=32, help="pixels per instance")
    p.add_argument("--classes", type=positive_int, default=3)
    p.add_argument("--trials", type=positive_int, default=100)
    p.add_argument("--tol", type=positive_float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("toy", help="synthetic circle experiment")
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--bias-sweep", action="store_true")
    mode.add_argument("--train", action="store_true")
    p.add_argument("--n-images", type=positive_int, default=10)
    p.add_argument("--size", type=positive_int, default=50, help="image height and width")
    p.add_argument("--eps", type=float, default=0.5, help="feature mean offset")
    p.add_argument("--noise", type=positive_float, default=1.0)
    p.add_argument("--bias-min", type=float, default=-3.0)
    p.add_argument("--bias-max", type=float, default=3.0)
    p.add_argument("--bias-step", type=positive_float, default=0.01)
    p.add_argument("--loss", choices=TRAIN_LOSSES, default="lovasz_hinge")
    p.add_argument("--optimizer", choices=("sgd", "momentum", "prox"), default="momentum")
    p.add_argument("--epochs", type=positive_int, default=20)
    p.add_argument("--lr", type=positive_float, default=0.05)
    p.add_argument("--assert", dest="check", action="store_true",
                   help="check the argmin claims (bias sweep only)")
    p.set_defaults(func=cmd_toy)

    p = sub.add_parser("metrics", help="IoU report for directories of PGM masks")
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--classes", type=positive_int, required=True, help="number of classes")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("bench", help="time the Jaccard gradient")
    p.add_argument("--p-min", type=power_of_two, default=1 << 10)
    p.add_argument("--p-max", type=power_of_two, default=1 << 20)
    p.add_argument("--repeats", type=positive_int, default=5)
    p.add_argument("--assert", dest="check", action="store_true",
                   help="check the log-log slope lies in [1.0, 1.15]")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("prox-demo", help="toy trajectories of gd, momentum and prox")
    p.add_argument("--nu", type=positive_float, default=1.3)
    p.add_argument("--eta", type=positive_float, default=0.1)
    p.add_argument("--alpha", type=float, default=0.9)
    p.add_argument("--steps", type=nonnegative_int, default=50)
    p.add_argument("--assert", dest="check", action="store_true",
                   help="check prox monotonicity and a momentum increase")
    p.set_defaults(func=cmd_prox_demo)

    p = sub.add_parser("props", help="run the property suite")
    p.add_argument("--n", type=positive_int, default=200, help="instances per property")
    p.set_defaults(func=cmd_props)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if args.command == "toy" and args.check and not args.bias_sweep:
        parser.print_usage(sys.stderr)
        print("lsv: error: --assert is only available with --bias-sweep", file=sys.stderr)
        return EXIT_USAGE
    try:
        harness.worker_count()
    except ValueError as exc:
        print(f"lsv: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out_dir)
    if out.exists() and not out.is_dir():
        print(f"lsv: error: --out-dir {out} is not a directory", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except CommandError as exc:
        print(f"lsv: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"lsv: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
