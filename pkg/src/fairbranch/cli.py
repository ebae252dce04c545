"""Command-line front end: ``generate``, ``train``, ``evaluate`` and ``sweep``.

Exit codes are 0 on success, 2 for usage errors (bad flags, bad config,
missing baselines) and 1 for runtime failures.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import re
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint
from .data import (
    SplitSpec,
    SyntheticSpec,
    generate_synthetic,
    load_csv,
    stratified_split,
    write_csv,
    write_metadata,
)
from .errors import ConfigurationError, FairBranchError, SchemaError, SplitError
from .metrics import conflict_report, evaluate
from .network import relative_parameters
from .trainer import MODES, TrainConfig, train_fairbranch, train_stl, train_stls, train_vanilla_mtl

log = logging.getLogger("fairbranch")

TASK_PATTERN = re.compile(r"t\d+")


class UsageError(Exception):
    """Raised for problems the caller can fix by changing flags or inputs."""


# ---------------------------------------------------------------------------
# helpers


def _csv_list(raw: str, kind=str) -> list:
    try:
        return [kind(x.strip()) for x in raw.split(",") if x.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _float_list(raw: str) -> list[float]:
    return _csv_list(raw, float)


def _read_header(path) -> list[str]:
    try:
        with Path(path).open(newline="", encoding="utf-8") as fh:
            return [h.strip() for h in next(csv.reader(fh), [])]
    except FileNotFoundError:
        raise UsageError(f"data file not found: {path}") from None


def _task_columns(args, fallback: Sequence[str] | None = None) -> list[str]:
    if args.task_columns:
        return args.task_columns
    if fallback is not None:
        return list(fallback)
    found = [h for h in _read_header(args.data) if TASK_PATTERN.fullmatch(h)]
    if not found:
        raise UsageError(f"{args.data}: no task columns matching t<k>; pass --task-columns")
    return found


def _load(args, fallback=None):
    return load_csv(args.data, args.protected, _task_columns(args, fallback))


def _config(args) -> TrainConfig:
    cfg = TrainConfig.from_json(args.config) if args.config else TrainConfig()
    overrides = {
        "tau": args.tau,
        "eta": args.eta,
        "max_epochs": args.epochs,
        "seed": args.seed,
    }
    return cfg.with_(**{k: v for k, v in overrides.items() if v is not None})


def _claim_run_dir(path: Path, force: bool) -> Path:
    if path.exists() and any(path.iterdir()) and not force:
        raise UsageError(f"{path} already holds a run; pass --force to overwrite")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _invocation(args, command: str) -> dict:
    flags = {k: v for k, v in vars(args).items() if k != "func"}
    return {"command": command, "flags": flags, "argv": sys.argv[1:]}


def _split(data, cfg: TrainConfig, fraction: float):
    return stratified_split(data, SplitSpec(fraction, seed=cfg.seed))


def _stl_task(spec: str, names: Sequence[str]) -> int:
    if spec in names:
        return list(names).index(spec)
    try:
        idx = int(spec)
    except ValueError:
        raise UsageError(f"unknown task {spec!r}; known: {', '.join(names)}") from None
    if not 0 <= idx < len(names):
        raise UsageError(f"task index {idx} outside 0..{len(names) - 1}")
    return idx


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    spec = SyntheticSpec(
        n_samples=args.samples,
        n_features=args.features,
        n_tasks=args.tasks,
        n_families=args.families,
        bias_strength=args.bias,
        noise=args.noise,
        seed=args.seed,
    )
    d = generate_synthetic(spec)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(d, out / "data.csv")
    write_metadata(d, out / "meta.json")
    print(f"n={d.n_samples} m={d.n_features} T={d.n_tasks} -> {out}")
    print(f"share of s=1: {d.protected.mean():.4f}")
    for t, name in enumerate(d.task_names):
        y = d.labels[:, t]
        r0, r1 = y[d.protected == 0].mean(), y[d.protected == 1].mean()
        print(f"  {name}: P(y=1|s=0)={r0:.4f} P(y=1|s=1)={r1:.4f}")
    return 0


def _run(train, val, cfg: TrainConfig, mode: str, task: int | None):
    if mode == "fairbranch":
        return train_fairbranch(train, val, cfg)
    if mode == "vanilla":
        return train_vanilla_mtl(train, val, cfg)
    return train_stl(train, val, task, cfg)


def cmd_train(args) -> int:
    cfg = _config(args)
    if args.mode == "stl" and args.task is None:
        raise UsageError("--mode stl needs --task")
    data = _load(args)
    task = _stl_task(args.task, data.task_names) if args.mode == "stl" else None
    out = _claim_run_dir(Path(args.out), args.force)
    _dump(_invocation(args, "train"), out / "invocation.json")

    train, val = _split(data, cfg, args.train_fraction)
    report = _run(train, val, cfg, args.mode, task)

    _dump(report.to_dict(), out / "report.json")
    _dump([g.to_dict() for g in report.groups], out / "groups.json")
    checkpoint.save(report.topology, out, report.groups)
    conflict_report(report.conflicts, report.task_names, out)
    state = "converged" if report.converged else "hit the epoch cap"
    print(f"{args.mode}: {report.epochs_run} epochs ({state}), {len(report.events)} branch events -> {out}")
    return 0


def _baseline_map(dirs: Sequence[str]) -> dict:
    out = {}
    for d in dirs:
        try:
            model = checkpoint.load(d)
        except FileNotFoundError:
            raise UsageError(f"baseline directory {d} holds no checkpoint") from None
        for name in model.task_names:
            out.setdefault(name, model)
    return out


def _write_eval(result, fmt: str, stream) -> None:
    if fmt == "json":
        json.dump(result.to_dict(), stream, indent=2, sort_keys=True)
        stream.write("\n")
        return
    cols, rows = result.rows()
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(cols)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    means = [repr(float(np.mean([r[j] for r in rows]))) for j in range(1, len(cols))]
    w.writerow(["mean", *means])


def cmd_evaluate(args) -> int:
    try:
        model = checkpoint.load(args.checkpoint)
    except FileNotFoundError:
        raise UsageError(f"no checkpoint in {args.checkpoint}") from None
    data = _load(args, fallback=model.task_names)
    baselines = _baseline_map(args.baselines)
    missing = [n for n in data.task_names if n not in baselines]
    if missing:
        raise UsageError(f"no single-task baseline for task(s): {', '.join(missing)}")
    result = evaluate(model, data, baselines)
    if args.output:
        with Path(args.output).open("w", newline="") as fh:
            _write_eval(result, args.format, fh)
    else:
        _write_eval(result, args.format, sys.stdout)
    return 0


SWEEP_COLUMNS = ("tau", "ARA", "ARF_EP", "ARF_EO", "RP")


def _ratio(num: float, den: float) -> float:
    return num / den if den != 0 else float("nan")


def sweep_row(tau: float, result, top) -> dict:
    """Ablation-style row: ratios of mean MTL to mean single-task scores."""
    tasks = result.tasks
    mean = lambda attr: float(np.mean([getattr(t, attr) for t in tasks]))  # noqa: E731
    return {
        "tau": tau,
        "ARA": _ratio(mean("accuracy"), mean("stl_accuracy")),
        "ARF_EP": _ratio(mean("ep_viol"), mean("stl_ep_viol")),
        "ARF_EO": _ratio(mean("eo_viol"), mean("stl_eo_viol")),
        "RP": relative_parameters(top),
    }


def cmd_sweep(args) -> int:
    cfg = _config(args)
    for tau in args.taus:
        if not 0 < tau <= 1:
            raise UsageError(f"tau must lie in (0, 1], got {tau}")
    data = _load(args)
    out = _claim_run_dir(Path(args.out), args.force)
    _dump(_invocation(args, "sweep"), out / "invocation.json")

    train, val = _split(data, cfg, args.train_fraction)
    stl = {name: rep.topology for name, rep in train_stls(train, val, cfg).items()}
    rows = []
    for tau in args.taus:
        report = train_fairbranch(train, val, cfg.with_(tau=tau))
        rows.append(sweep_row(tau, evaluate(report.topology, val, stl), report.topology))
        log.info("tau %s done", tau)

    buf = io.StringIO()
    w = csv.DictWriter(buf, SWEEP_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows({k: repr(v) for k, v in r.items()} for r in rows)
    (out / "sweep.csv").write_text(buf.getvalue())
    print(" ".join(f"{c:>8}" for c in SWEEP_COLUMNS))
    for r in rows:
        print(" ".join(f"{r[c]:8.4f}" for c in SWEEP_COLUMNS))
    return 0


# ---------------------------------------------------------------------------
# parser


def _tau(raw: str) -> float:
    v = float(raw)
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError(f"tau must lie in (0, 1], got {v}")
    return v


def _data_flags(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--data", required=required, help="CSV with header row")
    p.add_argument("--protected", default="s", help="protected-attribute column (default: s)")
    p.add_argument("--task-columns", type=_csv_list, help="comma-separated task columns (default: t0, t1, ...)")


def _train_flags(p: argparse.ArgumentParser) -> None:
    _data_flags(p)
    p.add_argument("--config", help="TrainConfig JSON; flags below override it")
    p.add_argument("--eta", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--train-fraction", type=float, default=0.7, help="train share of the data (default: 0.7)")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--force", action="store_true", help="overwrite an existing run directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairbranch", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic multi-task dataset")
    g.add_argument("--tasks", type=int, required=True)
    g.add_argument("--families", type=int, required=True)
    g.add_argument("--samples", type=int, required=True)
    g.add_argument("--features", type=int, default=10)
    g.add_argument("--bias", type=float, default=0.0)
    g.add_argument("--noise", type=float, default=0.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("-o", "--output", required=True, help="output directory")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train one model and write a run directory")
    _train_flags(t)
    t.add_argument("--tau", type=_tau)
    t.add_argument("--mode", choices=MODES, default="fairbranch")
    t.add_argument("--task", help="task name or index for --mode stl")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a checkpoint against single-task baselines")
    _data_flags(e)
    e.add_argument("--checkpoint", required=True, help="run directory holding model.json")
    e.add_argument("--baselines", nargs="+", required=True, help="run directories of the baselines")
    e.add_argument("--format", choices=("json", "csv"), default="json")
    e.add_argument("--output", help="file to write (default: stdout)")
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", help="train over several tau values and tabulate ARA/ARF/RP")
    _train_flags(s)
    s.add_argument("--taus", type=_float_list, required=True, help="comma-separated, e.g. 0.6,0.7,0.8")
    s.set_defaults(func=cmd_sweep, tau=None)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigurationError, SchemaError, SplitError) as e:
        print(f"fairbranch {args.command}: error: {e}", file=sys.stderr)
        return 2
    except (FairBranchError, OSError) as e:
        print(f"fairbranch {args.command}: failed: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
