"""Command-line entry point: ``selfboost <subcommand> [options]``.

Every subcommand writes fixed file names into ``--output`` (default ``.``).
Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

import argparse
import logging
import os
import sys

from . import experiment as ex
from . import synth
from .core import read_series_csv, write_series_csv
from .eemd import eemd
from .errors import ConfigInvalid, SelfBoostError
from .forecaster import VARIANTS, fit, load_checkpoint, predict, prepare_data
from .metrics import compute_metrics, imf_importance_sweep
from .selection import FeatureGrouping, group_features, similarity_report

log = logging.getLogger("selfboost")


def _common_parser(suppress=False):
    # Sub-parsers suppress defaults so flags given before the subcommand survive.
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=d(None), help="experiment JSON config")
    p.add_argument("--seed", type=int, default=d(None),
                   help="overrides decomposition and training seeds")
    p.add_argument("--output", default=d(None), help="output directory")
    p.add_argument("--interpolate-missing", action="store_true", default=d(False),
                   help="linearly fill interior gaps in the input series")
    p.add_argument("-v", "--verbose", action="count", default=d(0))
    return p


def build_parser():
    parser = argparse.ArgumentParser(prog="selfboost", parents=[_common_parser()],
                                     description="Self-boosted EEMD multi-task forecasting.")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common_parser(suppress=True)

    def add(name, help_text):
        return sub.add_parser(name, parents=[common], help=help_text, description=help_text)

    p = add("decompose", "EEMD of a series CSV")
    p.add_argument("input")

    p = add("select", "group components by correlation with the original")
    p.add_argument("input")
    p.add_argument("--decomposition", required=True)

    p = add("train", "train one forecaster variant")
    p.add_argument("input")
    p.add_argument("--decomposition")
    p.add_argument("--grouping")
    p.add_argument("--auto", action="store_true", help="decompose and select inline")
    p.add_argument("--variant", choices=VARIANTS, default=None)
    p.add_argument("--lag", type=int)
    p.add_argument("--horizon", type=int)

    p = add("predict", "forecast every window of a series with a checkpoint")
    p.add_argument("input")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--decomposition", help="defaults to decomposing the input inline")

    p = add("evaluate", "metrics of a predictions CSV")
    p.add_argument("predictions")

    p = add("baseline", "persistence or autoregressive forecasts")
    p.add_argument("input")
    p.add_argument("--method", choices=("persistence", "ar"), required=True)
    p.add_argument("--order", type=int)
    p.add_argument("--lag", type=int)
    p.add_argument("--horizon", type=int)

    p = add("importance", "RMSE sweep over growing component prefixes")
    p.add_argument("input")
    p.add_argument("--decomposition")
    p.add_argument("--lag", type=int)

    p = add("synth", "generate a synthetic benchmark series")
    p.add_argument("--kind", choices=synth.KINDS, default="two_tone_trend")
    p.add_argument("--length", type=int, default=1000)

    p = add("run", "end-to-end experiment over every lag")
    p.add_argument("input", nargs="?")
    return parser


def _config(args):
    cfg = ex.load_config(args.config)
    changes = {}
    if args.output is not None:
        changes["output_dir"] = args.output
    if args.interpolate_missing:
        changes["interpolate_missing"] = True
    if getattr(args, "input", None) and args.command == "run":
        changes["input_csv"] = args.input
    if changes:
        cfg = ex._replace(cfg, **changes)
    seed = args.seed if args.seed is not None else cfg.seed
    return cfg.with_seed(seed)


def _out_dir(cfg):
    os.makedirs(cfg.output_dir, exist_ok=True)
    return cfg.output_dir


def _arch(cfg, args):
    arch = cfg.architecture
    lag = args.lag if getattr(args, "lag", None) is not None else arch.lag
    arch = arch.fitted_to_lag(lag)
    if getattr(args, "horizon", None) is not None:
        arch = arch.replace(horizon=args.horizon)
    if getattr(args, "variant", None):
        arch = arch.replace(variant=args.variant)
    return arch


def _series(cfg, path):
    return read_series_csv(path, cfg.interpolate_missing).series


def _components(cfg, series, path):
    return ex.read_decomposition(path) if path else eemd(series, cfg.decomposition)


def cmd_decompose(args, cfg):
    series = _series(cfg, args.input)
    imfset = eemd(series, cfg.decomposition)
    path = ex.write_decomposition(_out_dir(cfg), imfset, cfg.decomposition)
    log.info("%d IMFs + residual written to %s", len(imfset.imfs), path)


def cmd_select(args, cfg):
    series = _series(cfg, args.input)
    imfset = ex.read_decomposition(args.decomposition)
    sel = cfg.selection
    report = similarity_report(series, imfset, sel.fold_negative_correlation)
    grouping = group_features(report, sel.num_clusters, sel.drop_least_related)
    ex.write_json(os.path.join(_out_dir(cfg), "grouping.json"), ex.grouping_document(report, grouping))


def cmd_train(args, cfg):
    series = _series(cfg, args.input)
    if args.auto:
        imfset, _, grouping = ex.decompose_and_select(series, cfg)
    else:
        if not (args.decomposition and args.grouping):
            raise ConfigInvalid("train", "give --decomposition and --grouping, or --auto")
        imfset = ex.read_decomposition(args.decomposition)
        grouping = FeatureGrouping.from_dict(ex.read_json(args.grouping))
    result = fit(series, imfset, grouping, _arch(cfg, args), cfg.training, cfg.split)
    ex.write_fit_outputs(_out_dir(cfg), result, cfg.training)
    metrics = compute_metrics(result.main_actuals("test"), result.main_predictions("test"))
    log.info("test rmse %.6g", metrics.rmse)


def cmd_predict(args, cfg):
    series = _series(cfg, args.input)
    model, _, _ = load_checkpoint(args.checkpoint)
    imfset = _components(cfg, series, args.decomposition)
    if imfset.num_components != model.grouping.num_components:
        raise ConfigInvalid(
            "decomposition",
            f"checkpoint expects {model.grouping.num_components} components, got {imfset.num_components}",
        )
    arch = model.config
    data = prepare_data(series, imfset, arch.lag, arch.horizon, cfg.split)
    pred = predict(model, data.dataset)[0]
    rows = ex.prediction_rows(data.dataset, data.dataset.targets[:, 0, :], pred)
    ex.write_rows(os.path.join(_out_dir(cfg), "predictions.csv"), rows)


def cmd_evaluate(args, cfg):
    actual, predicted = ex.read_predictions(args.predictions)
    report = compute_metrics(actual, predicted)
    ex.write_json(os.path.join(_out_dir(cfg), "metrics.json"), report.to_dict())


def cmd_baseline(args, cfg):
    series = _series(cfg, args.input)
    arch = cfg.architecture
    lag = args.lag if args.lag is not None else arch.lag
    horizon = args.horizon if args.horizon is not None else arch.horizon
    order = args.order if args.order is not None else cfg.baseline.ar_order
    if args.method == "ar" and args.order is not None and order > lag:
        raise ConfigInvalid("--order", f"must not exceed the lag ({lag})")
    parts, preds = ex.baseline_predictions(series, args.method, lag, horizon, cfg.split, order)
    out = _out_dir(cfg)
    for name, ds, p in zip(("train", "val", "test"), parts, preds):
        ex.write_rows(os.path.join(out, f"predictions_{name}.csv"),
                      ex.prediction_rows(ds, ds.targets[:, 0, :], p))


def cmd_importance(args, cfg):
    series = _series(cfg, args.input)
    imfset = _components(cfg, series, args.decomposition)
    sel = cfg.selection
    rep = imf_importance_sweep(series, imfset, _arch(cfg, args), cfg.training, cfg.split,
                               sel.num_clusters, sel.fold_negative_correlation)
    rows = [["num_imfs", "rmse", "coefficient", "phase"]]
    for k, (r, c, ph) in enumerate(zip(rep.rmse_per_run, rep.coefficients, rep.phases), start=1):
        rows.append([k, r, c, ph])
    ex.write_rows(os.path.join(_out_dir(cfg), "importance.csv"), rows)


def cmd_synth(args, cfg):
    seed = args.seed if args.seed is not None else 0
    series = synth.generate(args.kind, args.length, seed)
    write_series_csv(os.path.join(_out_dir(cfg), "series.csv"), series.values)


def cmd_run(args, cfg):
    if not cfg.input_csv:
        raise ConfigInvalid("input_csv", "no input series given")
    ex.run_experiment(cfg)


COMMANDS = {
    "decompose": cmd_decompose,
    "select": cmd_select,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "baseline": cmd_baseline,
    "importance": cmd_importance,
    "synth": cmd_synth,
    "run": cmd_run,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        if args.output is None and args.command != "run":
            cfg = ex._replace(cfg, output_dir=".")
        COMMANDS[args.command](args, cfg)
    except SelfBoostError as exc:
        where = getattr(exc, "stage", None)
        prefix = f"[{where}] " if where else ""
        print(f"error: {prefix}{type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
