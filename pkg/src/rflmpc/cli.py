"""Command line entry point: ``rflmpc <subcommand> [options]``.

Exit status: 0 on success, 1 on a usage or configuration error, 2 when the
work itself fails (missing or malformed input files, empty logs, ...).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__, experiment
from .config import ConfigError, ExperimentConfig, dumps, load
from .residual_learning import load_dataset, load_forest, save_dataset, save_forest
from .simulate import evaluate, load_log, save_log

EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid integer {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def _nonneg_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid integer {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML file with flat dotted keys")
    common.add_argument("--seed", type=_seed, help="overrides the config seed")
    common.add_argument("--out", type=Path, help="output file (directory for pipeline)")

    p = _Parser(prog="rflmpc", description="Residual-learning MPC for lateral path tracking.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    c = sub.add_parser("collect", parents=[common], help="nominal MPC on the training path -> dataset CSV")
    c.add_argument("--log", type=Path, help="also write the collection run log")
    c.add_argument("--figures", type=Path, metavar="DIR")

    t = sub.add_parser("train", parents=[common], help="fit the residual forest -> model JSON")
    t.add_argument("--data", type=Path, required=True, help="dataset CSV from collect")
    t.add_argument("--trees", type=_positive_int)
    t.add_argument("--depth", type=_nonneg_int)
    t.add_argument("--report", type=Path, help="also write the fit report JSON here")
    t.add_argument("--figures", type=Path, metavar="DIR")

    r = sub.add_parser("run", parents=[common], help="closed loop on one path -> log CSV")
    r.add_argument("--model", type=Path, help="residual model JSON (omit for the nominal MPC)")
    r.add_argument("--path", help="preset name or inline spec such as 'S20, L25:90, S20'")
    r.add_argument("--deterministic", action="store_true",
                   help="write 0 in the wall-clock column so the file depends on config and seed only")
    r.add_argument("--figures", type=Path, metavar="DIR")

    e = sub.add_parser("eval", parents=[common], help="metrics JSON of one log")
    e.add_argument("log", type=Path)
    e.add_argument("--baseline", type=Path, help="log to compute the improvement against")

    m = sub.add_parser("compare", parents=[common], help="baseline/candidate log pairs -> PE table")
    m.add_argument("logs", type=Path, nargs="+", metavar="BASELINE CANDIDATE",
                   help="one or more baseline/candidate pairs")
    m.add_argument("--figures", type=Path, metavar="DIR")

    pl = sub.add_parser("pipeline", parents=[common], help="collect, train, run and compare in one go")
    pl.add_argument("--deterministic", action="store_true")
    pl.add_argument("--figures", type=Path, metavar="DIR",
                    help="figure directory (default: <out>/figures)")
    pl.add_argument("--no-figures", action="store_true")
    return p


def _config(args) -> ExperimentConfig:
    if args.config is not None:
        if not args.config.is_file():
            raise ConfigError(f"config file not found: {args.config}")
        return load(args.config, seed=args.seed)
    cfg = ExperimentConfig()
    return replace(cfg, seed=args.seed) if args.seed is not None else cfg


def _write_text(path: Path | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False, allow_nan=True) + "\n"


def _ensure_parent(path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _cmd_collect(args, cfg):
    out = args.out or Path("dataset.csv")
    ds, log = experiment.collect(cfg)
    save_dataset(ds, _ensure_parent(out))
    if args.log:
        save_log(log, _ensure_parent(args.log), timing=False)
    if args.figures:
        from . import plotting
        path = experiment.build_path(cfg, cfg.paths.train)
        plotting.plot_trajectory(path, {"nominal": log}, args.figures / "collect_trajectory.png",
                                 title="training path")
    print(f"collected {len(ds)} samples over {len(log)} steps ({log.status}) -> {out}")


def _cmd_train(args, cfg):
    out = args.out or Path("model.json")
    ds = load_dataset(args.data)
    if ds.N != cfg.horizon.N:
        raise ValueError(f"dataset window N={ds.N} does not match horizon N={cfg.horizon.N}")
    forest, report = experiment.train(ds, cfg, n_trees=args.trees, max_depth=args.depth)
    save_forest(forest, _ensure_parent(out))
    text = _json(report)
    if args.report:
        _write_text(args.report, text)
    sys.stdout.write(text)
    if args.figures:
        from . import plotting
        te, preds = experiment.heldout_predictions(ds, cfg, forest)
        plotting.plot_residue_fit(te.Eps, preds, args.figures / "residue_fit_e1.png", channel=0)


def _cmd_run(args, cfg):
    out = args.out or Path("log.csv")
    forest = load_forest(args.model) if args.model else None
    if forest is not None and forest.N != cfg.horizon.N:
        raise ValueError(f"model window N={forest.N} does not match horizon N={cfg.horizon.N}")
    name = args.path or cfg.paths.eval[0]
    log = experiment.run(cfg, name, forest)
    save_log(log, _ensure_parent(out), timing=not args.deterministic)
    if args.figures:
        from . import plotting
        variant = "rfl" if forest is not None else "nominal"
        label = experiment.path_label(name)
        plotting.plot_trajectory(experiment.build_path(cfg, name), {variant: log},
                                 args.figures / f"{variant}_{label}_trajectory.png", title=label)
        plotting.plot_errors({variant: log}, args.figures / f"{variant}_{label}_errors.png", title=label)
    m = evaluate(log)["e1"]
    print(f"{len(log)} steps ({log.status}); e1 MAE {m['mae']:.5f} m, ME {m['me']:.5f} m -> {out}")


def _cmd_eval(args, cfg):
    log = load_log(args.log)
    base = load_log(args.baseline) if args.baseline else None
    _write_text(args.out, _json(evaluate(log, base)))


def _table(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(experiment.COMPARE_COLUMNS)
    for r in rows:
        w.writerow([r[c] if isinstance(r[c], (str, int)) else f"{r[c]:.6g}" for c in experiment.COMPARE_COLUMNS])
    return buf.getvalue()


def _cmd_compare(args, cfg):
    if len(args.logs) % 2:
        raise UsageError("compare needs baseline/candidate pairs (an even number of logs)")
    pairs = []
    for i in range(0, len(args.logs), 2):
        b, c = args.logs[i], args.logs[i + 1]
        pairs.append((c.stem, load_log(b), load_log(c)))
    rows = experiment.compare_rows(pairs)
    _write_text(args.out, _table(rows))
    if args.figures:
        from . import plotting
        plotting.plot_mae_bars(rows, args.figures / "compare_mae.png")


def _cmd_pipeline(args, cfg):
    out = args.out or Path("rflmpc_out")
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(dumps(cfg))

    ds, collect_log = experiment.collect(cfg)
    save_dataset(ds, out / "dataset.csv")
    forest, report = experiment.train(ds, cfg)
    save_forest(forest, out / "model.json")
    (out / "train_report.json").write_text(_json(report))

    logs_dir = out / "logs"
    logs_dir.mkdir(exist_ok=True)
    pairs, runs = [], {}
    for i, name in enumerate(cfg.paths.eval):
        label = experiment.path_label(name, i)
        nom = experiment.run(cfg, name)
        rfl = experiment.run(cfg, name, forest)
        save_log(nom, logs_dir / f"nominal_{label}.csv", timing=not args.deterministic)
        save_log(rfl, logs_dir / f"rfl_{label}.csv", timing=not args.deterministic)
        pairs.append((label, nom, rfl))
        runs[label] = {"nominal": {"steps": len(nom), "status": nom.status,
                                   "qp_status": experiment.status_summary(nom)},
                       "rfl": {"steps": len(rfl), "status": rfl.status,
                               "qp_status": experiment.status_summary(rfl)}}
    rows = experiment.compare_rows(pairs)
    table = _table(rows)
    (out / "compare.csv").write_text(table)
    summary = {"n_samples": len(ds), "leaf_linear_ratio_e1": experiment.leaf_linear_ratios(report),
               "pooled_pe_percent": rows[-1]["pe_percent"], "runs": runs}
    (out / "summary.json").write_text(_json(summary))

    if not args.no_figures:
        from . import plotting
        fig_dir = args.figures or out / "figures"
        plotting.plot_trajectory(experiment.build_path(cfg, cfg.paths.train), {"nominal": collect_log},
                                 fig_dir / "collect_trajectory.png", title="training path")
        te, preds = experiment.heldout_predictions(ds, cfg, forest)
        plotting.plot_residue_fit(te.Eps, preds, fig_dir / "residue_fit_e1.png")
        for i, (label, nom, rfl) in enumerate(pairs):
            path = experiment.build_path(cfg, cfg.paths.eval[i])
            plotting.plot_trajectory(path, {"nominal": nom, "rfl": rfl}, fig_dir / f"{label}_trajectory.png",
                                     title=label)
            plotting.plot_errors({"nominal": nom, "rfl": rfl}, fig_dir / f"{label}_errors.png", title=label)
        plotting.plot_mae_bars(rows, fig_dir / "compare_mae.png")
    sys.stdout.write(table)


_COMMANDS = {"collect": _cmd_collect, "train": _cmd_train, "run": _cmd_run, "eval": _cmd_eval,
             "compare": _cmd_compare, "pipeline": _cmd_pipeline}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _config(args)
        _COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"rflmpc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, RuntimeError, KeyError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"rflmpc: error: {msg}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
