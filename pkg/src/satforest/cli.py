"""Command-line interface: gen, train, eval, grid, bench.

Every command honors --seed; identical invocations produce identical
outputs.  A config file of "key = value" lines supplies defaults that
explicit command-line flags override.  Exit codes: 0 success, 1 usage
error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import evaluation
from .attention import AttentionConfig, predict_batch
from .data import DataError, Dataset, GENERATORS, load_csv, save_csv, split_train_test, make_folds
from .forest import fit_forest
from .model_io import load_model, save_model
from .optim import train

USAGE_ERROR = 1
DATA_ERROR = 2
NUMERIC_ERROR = 3


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(f"{self.prog}: {message}", USAGE_ERROR)


def _read_config_file(path: str) -> dict:
    values = {}
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise CliError(
                        f"{path}:{lineno}: expected 'key = value'", USAGE_ERROR
                    )
                key, value = line.split("=", 1)
                values[key.strip().replace("-", "_")] = value.strip()
    except OSError as exc:
        raise CliError(f"cannot read config file: {exc}", DATA_ERROR) from exc
    return values


def _apply_config(parser: _Parser, argv: list[str]) -> argparse.Namespace:
    """Parse argv, letting a --config file supply subcommand defaults."""
    probe = _Parser(add_help=False)
    probe.add_argument("--config")
    pre, rest = probe.parse_known_args(argv)
    if pre.config and rest:
        sub_action = next(
            a for a in parser._actions if isinstance(a, argparse._SubParsersAction)
        )
        subparser = sub_action.choices.get(rest[0])
        if subparser is None:
            return parser.parse_args(argv)  # let argparse report the usage error
        file_values = _read_config_file(pre.config)
        known = {a.dest: a for a in subparser._actions}
        for key, raw in file_values.items():
            if key not in known:
                raise CliError(f"unknown config key {key!r}", USAGE_ERROR)
            action = known[key]
            if isinstance(action, argparse._StoreTrueAction):
                raw = raw.lower() in ("1", "true", "yes", "on")
            elif action.type is not None:
                try:
                    raw = action.type(raw)
                except ValueError:
                    raise CliError(
                        f"bad value for config key {key!r}: {raw!r}", USAGE_ERROR
                    ) from None
            subparser.set_defaults(**{key: raw})
    return parser.parse_args(argv)


def _dump_config(args: argparse.Namespace) -> None:
    for key in sorted(vars(args)):
        if key in ("command", "dump_config", "config"):
            continue
        print(f"{key} = {getattr(args, key)}")


def _load_dataset(spec: str, target: str | None, n: int, seed: int) -> Dataset:
    if spec in GENERATORS:
        return GENERATORS[spec](n, seed)
    if not os.path.exists(spec):
        raise DataError(f"no such dataset file or generator: {spec!r}")
    return load_csv(spec, target)


def _split_csv_list(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _grid(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in _split_csv_list(text))
    except ValueError:
        raise CliError(f"bad grid {text!r}", USAGE_ERROR) from None


def _add_common(p: _Parser) -> None:
    p.add_argument("--config", help="key = value file with defaults")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dump-config", action="store_true")


def _add_forest_flags(p: _Parser) -> None:
    p.add_argument("--base", choices=("rf", "ert"), default="rf")
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--min-leaf", type=int, default=10)
    p.add_argument("--max-depth", type=int, default=None)


def _add_attention_flags(p: _Parser) -> None:
    p.add_argument("--variant", choices=("y", "x", "yx"), default="y")
    p.add_argument("--loss", choices=("l2", "l1"), default="l2")
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--kappa", type=float, default=1.0)


def build_parser() -> _Parser:
    parser = _Parser(prog="satforest", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a synthetic dataset as CSV")
    p.add_argument("generator", help=f"one of {', '.join(sorted(GENERATORS))}")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--out", default=None)
    _add_common(p)

    p = sub.add_parser("train", help="fit a forest and its weight vectors")
    p.add_argument("--data", required=True, help="CSV path or generator name")
    p.add_argument("--target", default=None)
    p.add_argument("--gen-n", type=int, default=100)
    _add_forest_flags(p)
    _add_attention_flags(p)
    p.add_argument("--epsilon", type=float, default=0.25)
    p.add_argument("--gamma", type=float, default=0.25)
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--out", default="model.json")
    _add_common(p)

    p = sub.add_parser("eval", help="score a saved model on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--target", default=None)
    p.add_argument("--gen-n", type=int, default=100)
    p.add_argument("--out", default=None, help="optional TSV output path")
    _add_common(p)

    p = sub.add_parser("grid", help="cross-validated (epsilon, gamma) search")
    p.add_argument("--data", required=True)
    p.add_argument("--target", default=None)
    p.add_argument("--gen-n", type=int, default=100)
    _add_forest_flags(p)
    _add_attention_flags(p)
    p.add_argument("--grid-eps", type=_grid, default=evaluation.DEFAULT_GRID)
    p.add_argument("--grid-gamma", type=_grid, default=evaluation.DEFAULT_GRID)
    p.add_argument("--folds", type=int, default=3)
    p.add_argument("--repeats", type=int, default=10)
    _add_common(p)

    p = sub.add_parser("bench", help="full comparison protocol")
    p.add_argument("--datasets", required=True, help="comma list of paths/generators")
    p.add_argument("--gen-n", type=int, default=100)
    p.add_argument("--bases", default="rf", help="comma list from rf,ert")
    p.add_argument("--variants", default="y", help="comma list from y,x,yx")
    p.add_argument("--loss", choices=("l2", "l1"), default="l2")
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--min-leaf", type=int, default=10)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--kappa", type=float, default=1.0)
    p.add_argument("--grid-eps", type=_grid, default=evaluation.DEFAULT_GRID)
    p.add_argument("--grid-gamma", type=_grid, default=evaluation.DEFAULT_GRID)
    p.add_argument("--folds", type=int, default=3)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--heads", type=int, default=0)
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--sweep", choices=("attention", "selfattention"), default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default=None, help="output path prefix")
    p.add_argument("--format", choices=("tsv", "md", "both"), default="both")
    _add_common(p)

    return parser


def cmd_gen(args) -> int:
    if args.generator not in GENERATORS:
        raise CliError(
            f"unknown generator {args.generator!r}; "
            f"choose from {', '.join(sorted(GENERATORS))}",
            USAGE_ERROR,
        )
    ds = GENERATORS[args.generator](args.n, args.seed)
    out = args.out or f"{args.generator}.csv"
    save_csv(ds, out)
    print(f"wrote {out}: n={ds.n} m={ds.m}")
    return 0


def cmd_train(args) -> int:
    raw = _load_dataset(args.data, args.target, args.gen_n, args.seed)
    ds, loc, scale = raw, None, None
    if args.standardize:
        loc = raw.features.mean(axis=0)
        scale = raw.features.std(axis=0)
        scale[scale == 0.0] = 1.0
        ds = Dataset(
            (raw.features - loc) / scale, raw.targets, list(raw.feature_names), raw.name
        )
    cfg = AttentionConfig(
        epsilon=args.epsilon, gamma=args.gamma, tau=args.tau, kappa=args.kappa,
        variant=args.variant, loss=args.loss,
    )
    forest = fit_forest(
        ds, kind=args.base, n_trees=args.trees, min_leaf=args.min_leaf,
        max_depth=args.max_depth, seed=args.seed,
    )
    model = train(forest, ds, cfg)
    model.feature_loc = loc
    model.feature_scale = scale
    save_model(model, args.out)
    pred = predict_batch(model, raw.features)
    res = raw.targets - pred
    loss_val = float(np.abs(res).sum()) if cfg.loss == "l1" else float(res @ res)
    note = " (trainable weights inactive)" if cfg.epsilon == 0 and cfg.gamma == 0 else ""
    print(
        f"wrote {args.out}: kind={args.base} trees={forest.n_trees} "
        f"variant={cfg.variant} loss={cfg.loss} training_{cfg.loss}_loss={loss_val:.6g}{note}"
    )
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.model)
    ds = _load_dataset(args.data, args.target, args.gen_n, args.seed)
    pred = predict_batch(model, ds.features)
    rows = [
        {
            "dataset": ds.name,
            "r2": evaluation.r2(ds.targets, pred),
            "mae": evaluation.mae(ds.targets, pred),
        }
    ]
    text = evaluation.rows_to_tsv(rows)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    print(text, end="")
    return 0


def cmd_grid(args) -> int:
    ds = _load_dataset(args.data, args.target, args.gen_n, args.seed)
    train_ds, _ = split_train_test(ds, args.seed)
    plan = make_folds(train_ds.n, args.folds, args.repeats, args.seed + 1)
    best, table = evaluation.grid_search(
        train_ds,
        {"kind": args.base, "n_trees": args.trees, "min_leaf": args.min_leaf},
        args.variant,
        args.loss,
        args.grid_eps,
        args.grid_gamma,
        plan,
        tau=args.tau,
        kappa=args.kappa,
        seed=args.seed + 2,
    )
    print(evaluation.rows_to_tsv(table), end="")
    print(f"best: epsilon={best.epsilon} gamma={best.gamma}")
    return 0


def cmd_bench(args) -> int:
    specs = _split_csv_list(args.datasets)
    datasets = []
    for i, spec in enumerate(specs):
        datasets.append(_load_dataset(spec, None, args.gen_n, args.seed + 1000 + i))
    if args.sweep:
        all_rows = []
        for ds in datasets:
            train_ds, _ = split_train_test(ds, args.seed)
            rows = evaluation.sweep(
                train_ds,
                _split_csv_list(args.bases)[0],
                _split_csv_list(args.variants)[0],
                args.loss,
                args.sweep,
                seed=args.seed,
                folds=args.folds,
                repeats=args.repeats,
                n_trees=args.trees,
                min_leaf=args.min_leaf,
            )
            for row in rows:
                row["dataset"] = ds.name
            all_rows.extend(rows)
        _emit(all_rows, args, suffix="sweep")
        return 0
    rows = evaluation.benchmark(
        datasets,
        variants=_split_csv_list(args.variants),
        base_kinds=_split_csv_list(args.bases),
        seed=args.seed,
        grid_eps=args.grid_eps,
        grid_gamma=args.grid_gamma,
        folds=args.folds,
        repeats=args.repeats,
        n_trees=args.trees,
        min_leaf=args.min_leaf,
        loss=args.loss,
        tau=args.tau,
        kappa=args.kappa,
        n_heads=args.heads,
        standardize=args.standardize,
        jobs=args.jobs,
    )
    _emit(rows, args, suffix="bench")
    return 0


def _emit(rows: list[dict], args, suffix: str) -> None:
    tsv = evaluation.rows_to_tsv(rows)
    md = evaluation.rows_to_markdown(rows)
    if args.out:
        if args.format in ("tsv", "both"):
            with open(f"{args.out}.{suffix}.tsv", "w") as fh:
                fh.write(tsv)
        if args.format in ("md", "both"):
            with open(f"{args.out}.{suffix}.md", "w") as fh:
                fh.write(md)
    print(md if args.format != "tsv" else tsv, end="")


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "grid": cmd_grid,
    "bench": cmd_bench,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        if getattr(args, "dump_config", False):
            _dump_config(args)
            return 0
        return COMMANDS[args.command](args)
    except CliError as exc:
        print(str(exc), file=sys.stderr)
        return exc.code
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return DATA_ERROR
    except (
        RuntimeError,
        FloatingPointError,
        np.linalg.LinAlgError,
        ValueError,
    ) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return NUMERIC_ERROR


if __name__ == "__main__":
    sys.exit(main())
