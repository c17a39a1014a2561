"""Experiment configuration, artifact I/O, and the end-to-end runner."""

import csv
import json
import logging
import os
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import baselines
from .core import SplitSpec, build_windows, chronological_split, read_series_csv
from .eemd import DecompositionConfig, ImfSet, eemd, imf_statistics
from .errors import ConfigInvalid, DataError, SelfBoostError
from .forecaster import VARIANTS, ArchitectureConfig, TrainConfig, fit, save_checkpoint
from .metrics import compute_metrics, min_max_normalize
from .selection import FeatureGrouping, group_features, similarity_report

log = logging.getLogger(__name__)

METHODS = VARIANTS + ("persistence", "ar")
METRIC_NAMES = ("rmse", "mae", "mape", "r2")


@dataclass(frozen=True)
class SelectionConfig:
    num_clusters: int = 2
    drop_least_related: bool = False
    fold_negative_correlation: bool = False


@dataclass(frozen=True)
class BaselineConfig:
    ar_order: int = 12


@dataclass(frozen=True)
class ExperimentConfig:
    input_csv: str = ""
    decomposition: DecompositionConfig = DecompositionConfig()
    selection: SelectionConfig = SelectionConfig()
    architecture: ArchitectureConfig = ArchitectureConfig()
    training: TrainConfig = TrainConfig()
    split: SplitSpec = SplitSpec()
    baseline: BaselineConfig = BaselineConfig()
    lags: tuple = (1, 3, 6, 12)
    output_dir: str = "output"
    seed: int = None
    interpolate_missing: bool = False

    def __post_init__(self):
        object.__setattr__(self, "lags", tuple(int(q) for q in self.lags))
        if not self.lags or any(q < 1 for q in self.lags):
            raise ConfigInvalid("lags", "must be a non-empty list of positive integers")

    def with_seed(self, seed):
        """Apply a global seed to both the decomposition and the training."""
        if seed is None:
            return self
        return _replace(
            self,
            seed=int(seed),
            decomposition=_replace(self.decomposition, rng_seed=int(seed)),
            training=_replace(self.training, seed=int(seed)),
        )

    def to_dict(self):
        return {
            "input_csv": self.input_csv,
            "decomposition": self.decomposition.to_dict(),
            "selection": asdict(self.selection),
            "architecture": self.architecture.to_dict(),
            "training": self.training.to_dict(),
            "split": asdict(self.split),
            "baseline": asdict(self.baseline),
            "lags": list(self.lags),
            "output_dir": self.output_dir,
            "seed": self.seed,
            "interpolate_missing": self.interpolate_missing,
        }


def _replace(obj, **changes):
    d = {f.name: getattr(obj, f.name) for f in fields(obj)}
    d.update(changes)
    return type(obj)(**d)


_SECTIONS = {
    "decomposition": DecompositionConfig,
    "selection": SelectionConfig,
    "architecture": ArchitectureConfig,
    "training": TrainConfig,
    "split": SplitSpec,
    "baseline": BaselineConfig,
}


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigInvalid(path, "expected an object")
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigInvalid(f"{path}.{key}", "unknown field")
    try:
        return cls(**data)
    except ConfigInvalid:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(path, str(exc)) from None


def config_from_dict(data):
    if not isinstance(data, dict):
        raise ConfigInvalid("<root>", "expected a JSON object")
    top = {f.name for f in fields(ExperimentConfig)}
    kwargs = {}
    for key, value in data.items():
        if key not in top:
            raise ConfigInvalid(key, "unknown field")
        if key in _SECTIONS:
            kwargs[key] = _build(_SECTIONS[key], value, key)
        else:
            kwargs[key] = value
    try:
        return ExperimentConfig(**kwargs)
    except ConfigInvalid:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid("<root>", str(exc)) from None


def load_config(path):
    if path is None:
        return ExperimentConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigInvalid("--config", f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigInvalid("--config", f"invalid JSON: {exc}") from None
    return config_from_dict(data)


# ---------------------------------------------------------------------------
# Artifact I/O


def write_json(path, doc):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_rows(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_decomposition(out_dir, imfset, config):
    csv_path = os.path.join(out_dir, "decomposition.csv")
    names = imfset.component_names()
    arr = imfset.as_array()
    write_rows(csv_path, [names] + [list(arr[:, t]) for t in range(arr.shape[1])])
    write_json(
        os.path.join(out_dir, "decomposition.json"),
        {
            "config": config.to_dict(),
            "seed": config.rng_seed,
            "num_imfs": len(imfset.imfs),
            "components": names,
            "sift_counts": imfset.sift_counts,
            "converged": imfset.converged,
            "component_statistics": imf_statistics(imfset),
        },
    )
    return csv_path


def read_decomposition(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise DataError(f"{path}: decomposition file has no samples")
    names = rows[0]
    if names[-1] != "residual":
        raise DataError(f"{path}: last column must be 'residual'")
    arr = np.array([[float(v) for v in r] for r in rows[1:] if r]).T
    return ImfSet.from_array(arr, names)


def grouping_document(report, grouping):
    return {
        "components": list(report.names),
        "correlations": list(report.correlations),
        "distances": list(report.distances),
        "task_indices": list(grouping.task_indices),
        "view_indices": list(grouping.view_indices),
        "dropped_indices": list(grouping.dropped_indices),
        "num_clusters": grouping.num_clusters,
    }


def prediction_rows(dataset, actual, predicted):
    pos = dataset.target_positions()
    H = dataset.horizon
    if H == 1:
        rows = [["index", "actual", "predicted"]]
        rows += [[int(p), float(a), float(q)] for p, a, q in zip(pos, actual[:, 0], predicted[:, 0])]
        return rows
    rows = [["index", "step", "actual", "predicted"]]
    for i, p in enumerate(pos):
        for h in range(H):
            rows.append([int(p) + h, h + 1, float(actual[i, h]), float(predicted[i, h])])
    return rows


def read_predictions(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"actual", "predicted"} <= set(reader.fieldnames):
            raise DataError(f"{path}: expected 'actual' and 'predicted' columns")
        actual, predicted = [], []
        for row in reader:
            actual.append(float(row["actual"]))
            predicted.append(float(row["predicted"]))
    return np.array(actual), np.array(predicted)


def training_log_rows(tlog):
    return tlog.to_rows()


def write_fit_outputs(out_dir, result, train_config):
    os.makedirs(out_dir, exist_ok=True)
    save_checkpoint(os.path.join(out_dir, "checkpoint.json"), result.model, result.state, train_config)
    write_rows(os.path.join(out_dir, "training_log.csv"), training_log_rows(result.log))
    for split in ("train", "val", "test"):
        ds = getattr(result.data, split)
        write_rows(
            os.path.join(out_dir, f"predictions_{split}.csv"),
            prediction_rows(ds, result.main_actuals(split), result.main_predictions(split)),
        )


def baseline_predictions(series, method, lag, horizon, split, order=None):
    """(train, val, test) datasets and persistence/AR predictions for each."""
    ds = build_windows([series], [0], lag, horizon)
    parts = chronological_split(ds, split)
    if method == "persistence":
        preds = [baselines.persistence_forecast(p) for p in parts]
    elif method == "ar":
        model = baselines.fit_ar(parts[0], min(order or lag, lag))
        preds = [model.predict(p) for p in parts]
    else:
        raise ConfigInvalid("method", f"must be 'persistence' or 'ar', got {method!r}")
    return parts, preds


# ---------------------------------------------------------------------------
# Runner


@contextmanager
def stage(name):
    try:
        yield
    except SelfBoostError as exc:
        exc.stage = name
        log.error("stage %s failed: %s", name, exc)
        raise


def decompose_and_select(series, config):
    imfset = eemd(series, config.decomposition)
    report = similarity_report(series, imfset, config.selection.fold_negative_correlation)
    grouping = group_features(
        report, config.selection.num_clusters, config.selection.drop_least_related
    )
    return imfset, report, grouping


@dataclass
class ExperimentReport:
    output_dir: str
    metrics: dict = field(default_factory=dict)  # (method, lag) -> MetricReport
    grouping: FeatureGrouping = None

    def rmse(self, method, lag):
        return self.metrics[(method, lag)].rmse


def results_table_rows(metrics, lags):
    header = ["method"] + [f"{m}_lag{q}" for m in METRIC_NAMES for q in lags]
    rows = [header]
    for method in METHODS:
        row = [method]
        for m in METRIC_NAMES:
            for q in lags:
                row.append(getattr(metrics[(method, q)], m))
        rows.append(row)
    return rows


def normalized_rmse_rows(metrics, lags):
    """Raw and min-max normalised RMSE per lag across methods."""
    rows = [["method", "lag", "rmse", "normalized_rmse"]]
    for q in lags:
        raw = [metrics[(m, q)].rmse for m in METHODS]
        for m, r, nr in zip(METHODS, raw, min_max_normalize(raw)):
            rows.append([m, q, r, float(nr)])
    return rows


def run_experiment(config):
    """Decompose, select, train every variant and baseline per lag, and tabulate."""
    if config.seed is not None:
        config = config.with_seed(config.seed)
    out = config.output_dir
    os.makedirs(out, exist_ok=True)
    # output_dir is left out so identical runs in different folders match byte for byte
    doc = config.to_dict()
    del doc["output_dir"]
    write_json(os.path.join(out, "config.json"), doc)
    with stage("load"):
        series = read_series_csv(config.input_csv, config.interpolate_missing).series
    with stage("decompose"):
        imfset = eemd(series, config.decomposition)
        write_decomposition(out, imfset, config.decomposition)
    with stage("select"):
        report = similarity_report(series, imfset, config.selection.fold_negative_correlation)
        grouping = group_features(
            report, config.selection.num_clusters, config.selection.drop_least_related
        )
        write_json(os.path.join(out, "grouping.json"), grouping_document(report, grouping))

    result = ExperimentReport(out, grouping=grouping)
    for lag in config.lags:
        arch = config.architecture.fitted_to_lag(lag)
        if arch != config.architecture.replace(lag=lag):
            log.info("lag %d: conv widths %s, pool %d", lag, arch.conv_layers, arch.pool_width)
        lag_dir = os.path.join(out, f"lag_{lag}")
        for variant in VARIANTS:
            with stage(f"train[{variant}, lag={lag}]"):
                fitted = fit(series, imfset, grouping, arch.replace(variant=variant), config.training, config.split)
                write_fit_outputs(os.path.join(lag_dir, variant), fitted, config.training)
                result.metrics[(variant, lag)] = compute_metrics(
                    fitted.main_actuals("test"), fitted.main_predictions("test")
                )
        for method in ("persistence", "ar"):
            with stage(f"baseline[{method}, lag={lag}]"):
                parts, preds = baseline_predictions(
                    series, method, lag, arch.horizon, config.split, config.baseline.ar_order
                )
                method_dir = os.path.join(lag_dir, method)
                os.makedirs(method_dir, exist_ok=True)
                for name, ds, p in zip(("train", "val", "test"), parts, preds):
                    write_rows(
                        os.path.join(method_dir, f"predictions_{name}.csv"),
                        prediction_rows(ds, ds.targets[:, 0, :], p),
                    )
                result.metrics[(method, lag)] = compute_metrics(parts[2].targets[:, 0, :], preds[2])
    with stage("report"):
        write_rows(os.path.join(out, "results.csv"), results_table_rows(result.metrics, config.lags))
        write_rows(
            os.path.join(out, "results_normalized_rmse.csv"),
            normalized_rmse_rows(result.metrics, config.lags),
        )
    return result

