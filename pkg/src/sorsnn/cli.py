"""``sorsnn`` command line: train, injure, inspect, sweep.

Exit codes: 0 success, 2 bad configuration or arguments, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config, validate
from .harness import (build_tasks, compute_metrics, injury_experiment, run_sequence, sweep_rows,
                      weight_histograms)
from . import report

log = logging.getLogger("sorsnn")


class UsageError(Exception):
    """Maps to exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sorsnn", description="Self-organizing regulated spiking networks for continual learning")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="run a task sequence and write a report archive")
    t.add_argument("--config", help="JSON config (defaults apply to missing fields)")
    t.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    t.add_argument("--out", help="archive directory (overrides output_dir)")

    j = sub.add_parser("injure", help="injure task-1-unique synapses and retrain task 1")
    j.add_argument("archive")
    j.add_argument("--fraction", type=float, default=None)
    j.add_argument("--repair-epochs", type=int, default=None)
    j.add_argument("--target", type=int, default=None, help="task to injure (default: first trained)")
    j.add_argument("--out", help="where to write injury.csv (default: inside the archive)")

    i = sub.add_parser("inspect", help="summaries from an archive")
    i.add_argument("archive")
    i.add_argument("what")
    i.add_argument("--out", help="write to file instead of stdout")

    s = sub.add_parser("sweep", help="loss-coefficient sweep across seeds")
    s.add_argument("--config")
    s.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    s.add_argument("--param", required=True)
    s.add_argument("--values", required=True, help="comma separated")
    s.add_argument("--seeds", default="0", help="comma separated")
    s.add_argument("--out", help="output directory (default: output_dir)")
    return p


def _floats(text: str, what: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--{what}: expected comma separated numbers, got {text!r}") from None


# ---------------------------------------------------------------- commands

def cmd_train(args) -> int:
    cfg = load_config(args.config, args.overrides)
    result = run_sequence(cfg)
    out = report.write_archive(result, cfg, args.out)
    m = result.metrics
    bwt = "n/a" if m["BWT"] is None else f"{m['BWT']:.4f}"
    print(f"ACC {m['ACC']:.4f}  BWT {bwt}  archive {out}")
    return 0


def cmd_injure(args) -> int:
    archive = Path(args.archive)
    if not (archive / "checkpoint.bin").is_file():
        raise UsageError(f"{archive}: no checkpoint.bin in archive")
    cfg, model = report.load_archive(archive)
    fraction = cfg.injury_fraction if args.fraction is None else args.fraction
    if not 0.0 <= fraction <= 1.0:
        raise UsageError(f"--fraction must lie in [0, 1], got {fraction}")
    if args.repair_epochs is not None and args.repair_epochs < 0:
        raise UsageError("--repair-epochs must be >= 0")
    if not report.is_sorsnn(model):
        raise UsageError("injury needs a sorsnn archive")
    seq = build_tasks(cfg)
    target = model.order[0] if args.target is None else args.target
    res = injury_experiment(model, seq, target, fraction, args.repair_epochs, cfg.seed)
    tasks = list(res.pre)
    lines = ["phase," + ",".join(f"task_{t}" for t in tasks)]
    for phase, accs in (("pre", res.pre), ("post", res.post)):
        lines.append(phase + "," + ",".join(repr(float(accs[t])) for t in tasks))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        report.add_file(archive, "injury.csv", text)
    print(text, end="")
    print(f"cleared {res.cleared} synapses of task {target}")
    return 0


def _inspect_masks(cfg, model) -> str:
    tasks = list(model.order)
    counts = report.participation_counts({t: model.masks(t) for t in tasks})
    rows = ["layer,tasks_using,n_synapses"]
    for spec, c in zip(model.layers, counts):
        for k in range(len(tasks) + 1):
            rows.append(f"{spec.name},{k},{int(np.sum(c == k))}")
    return "\n".join(rows) + "\n"


def _inspect_weights(cfg, model) -> str:
    return report.hist_csv(weight_histograms(model, list(model.order)))


def _inspect_overlap(cfg, model) -> str:
    tasks = list(model.order)
    m = compute_metrics(model, np.zeros((len(tasks), len(tasks))), tasks)
    keep = ("tasks", "overlap_jaccard", "overlap_dot", "mean_overlap_dot", "active_counts",
            "active_fractions")
    return json.dumps({k: m[k] for k in keep}, indent=2, sort_keys=True) + "\n"


INSPECTORS = {"masks": _inspect_masks, "weights": _inspect_weights, "overlap": _inspect_overlap}


def cmd_inspect(args) -> int:
    if args.what not in INSPECTORS:
        raise UsageError(f"unknown inspect target {args.what!r}; choose from {sorted(INSPECTORS)}")
    archive = Path(args.archive)
    if not archive.is_dir():
        raise UsageError(f"{archive}: archive not found")
    try:
        cfg, model = report.load_archive(archive)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None
    text = INSPECTORS[args.what](cfg, model)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _run_metrics(cfg):
    return run_sequence(cfg).metrics


def _threads() -> int:
    raw = os.environ.get("SORSNN_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"SORSNN_THREADS must be an integer, got {raw!r}") from None
    return max(n, 1)


def cmd_sweep(args) -> int:
    if args.param not in ("alpha", "beta"):
        raise UsageError(f"--param must be alpha or beta, got {args.param!r}")
    values = _floats(args.values, "values")
    if not values:
        raise UsageError("--values is empty")
    seeds = [int(s) for s in _floats(args.seeds, "seeds")]
    if not seeds:
        raise UsageError("--seeds is empty")
    uniq = list(dict.fromkeys(values))
    if len(uniq) < len(values):
        log.warning("duplicate sweep values dropped: %s -> %s", values, uniq)
    seeds = list(dict.fromkeys(seeds))
    cfg = load_config(args.config, args.overrides)

    n = _threads()
    if n > 1:
        jobs = []
        for v in uniq:
            for s in seeds:
                c = copy.deepcopy(cfg)
                setattr(c.loss, args.param, float(v))
                c.seed = s
                jobs.append(validate(c))
        with ProcessPoolExecutor(max_workers=n) as ex:
            done = dict(zip([(getattr(c.loss, args.param), c.seed) for c in jobs],
                            ex.map(_run_metrics, jobs)))
        runner = lambda c: done[(getattr(c.loss, args.param), c.seed)]
    else:
        runner = _run_metrics
    rows = sweep_rows(args.param, uniq, seeds, cfg, runner)

    out_dir = Path(args.out or cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    header = [args.param, "n_seeds", "ACC_mean", "ACC_std", "BWT_mean", "BWT_std",
              "mean_overlap_dot_mean", "mean_overlap_dot_std"]
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join("" if r[h] is None else repr(r[h]) for h in header))
    path = out_dir / f"sweep_{args.param}.csv"
    report.add_file(out_dir, path.name, "\n".join(lines) + "\n")
    print(path.read_text(), end="")
    return 0


COMMANDS = {"train": cmd_train, "injure": cmd_injure, "inspect": cmd_inspect, "sweep": cmd_sweep}


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except UsageError as exc:
        print(f"sorsnn: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.cmd](args)
    except (UsageError, ConfigError) as exc:
        print(f"sorsnn: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"sorsnn: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
