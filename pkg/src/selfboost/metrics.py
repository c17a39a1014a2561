"""Forecast error metrics and the IMF-inclusion importance sweep."""

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .core import SplitSpec
from .errors import AllActualsZero, LengthMismatch, NonPositiveRmse, TooFewPoints
from .forecaster import fit, prepare_data
from .selection import FeatureGrouping, group_features, similarity_report

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MetricReport:
    """RMSE, MAE, MAPE (percent, over non-zero actuals) and R^2.

    ``mape`` is None when every actual is zero; ``mape_excluded`` counts the
    zero actuals left out of the MAPE average. ``r2`` is NaN when the actuals
    are constant and the prediction is not exact.
    """

    rmse: float
    mae: float
    mape: float
    r2: float
    n: int
    mape_excluded: int = 0

    def to_dict(self):
        return asdict(self)


def mape(actual, predicted):
    actual = np.asarray(actual, dtype=np.float64).ravel()
    predicted = np.asarray(predicted, dtype=np.float64).ravel()
    keep = actual != 0.0
    if not keep.any():
        raise AllActualsZero("MAPE is undefined when every actual is zero")
    return float(100.0 * np.mean(np.abs(actual[keep] - predicted[keep]) / np.abs(actual[keep])))


def compute_metrics(actual, predicted):
    actual = np.asarray(actual, dtype=np.float64).ravel()
    predicted = np.asarray(predicted, dtype=np.float64).ravel()
    if actual.shape != predicted.shape or actual.size == 0:
        raise LengthMismatch(f"actual {actual.shape} vs predicted {predicted.shape}")
    err = actual - predicted
    rmse = math.sqrt(float(np.mean(err * err)))
    mae = float(np.mean(np.abs(err)))
    try:
        mape_value = mape(actual, predicted)
    except AllActualsZero:
        mape_value = None
    ss_res = float(np.sum(err * err))
    ss_tot = float(np.sum((actual - actual.mean()) ** 2))
    if ss_tot > 0:
        r2 = 1.0 - ss_res / ss_tot
    else:
        r2 = 1.0 if ss_res == 0 else float("nan")
    return MetricReport(rmse, mae, mape_value, r2, int(actual.size), int(np.sum(actual == 0.0)))


@dataclass(frozen=True)
class RmseCoefficientReport:
    rmse_per_run: tuple
    coefficients: tuple
    phases: tuple = ()
    component_order: tuple = ()


def rmse_coefficients(rmses):
    """Each run's RMSE divided by the total; lower means more useful."""
    r = np.asarray(rmses, dtype=np.float64)
    if r.size == 0:
        raise NonPositiveRmse("no RMSE values given")
    if np.any(~np.isfinite(r)) or np.any(r <= 0):
        raise NonPositiveRmse(f"RMSEs must be positive and finite, got {r.tolist()}")
    total = math.fsum(r.tolist())
    return RmseCoefficientReport(tuple(r.tolist()), tuple(float(v / total) for v in r))


def min_max_normalize(values):
    v = np.asarray(values, dtype=np.float64)
    span = v.max() - v.min()
    return np.zeros_like(v) if span == 0 else (v - v.min()) / span


def imf_importance_sweep(original, imfs, arch, cfg, split=SplitSpec(), num_clusters=2, fold_negative=False):
    """Train one model per prefix of the components sorted by similarity.

    Components are ordered by descending correlation with the original. The
    k-means grouping of the full set fixes the boundary: the first runs put
    the prefix into the task group; once the prefix passes the boundary the
    extra components join the view group. Every run uses ``cfg.seed``.
    """
    report = similarity_report(original, imfs, fold_negative=fold_negative)
    n = imfs.num_components
    if n < 2:
        raise TooFewPoints("the sweep needs at least two components")
    key = np.abs(report.correlations) if fold_negative else np.asarray(report.correlations)
    order = [int(i) for i in np.argsort(-key, kind="stable")]
    grouping = group_features(report, num_clusters)
    boundary = len(grouping.task_indices)
    data = prepare_data(original, imfs, arch.lag, arch.horizon, split)

    rmses, phases = [], []
    for k in range(1, n + 1):
        prefix = order[:k]
        tasks = tuple(prefix[:boundary])
        views = tuple(prefix[boundary:])
        rest = tuple(i for i in range(n) if i not in prefix)
        run_grouping = FeatureGrouping(tasks, views, rest, num_clusters)
        result = fit(original, imfs, run_grouping, arch, cfg, split, data=data)
        pred = result.main_predictions("test")
        act = result.main_actuals("test")
        rmses.append(compute_metrics(act, pred).rmse)
        phases.append("task" if k <= boundary else "view")
        log.info("importance run %d/%d (%s): rmse %.6g", k, n, phases[-1], rmses[-1])
    coeffs = rmse_coefficients(rmses)
    return RmseCoefficientReport(coeffs.rmse_per_run, coeffs.coefficients, tuple(phases), tuple(order))
