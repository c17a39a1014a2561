"""Similarity scoring of decomposed components and k-means grouping."""

from dataclasses import asdict, dataclass

import numpy as np

from .core import TimeSeries
from .errors import ConfigInvalid, LengthMismatch, TooFewPoints, ZeroVariance

CONSTANT_COMPONENT_DISTANCE = 2.0


@dataclass(frozen=True)
class SimilarityReport:
    correlations: tuple
    distances: tuple
    names: tuple = ()


@dataclass(frozen=True)
class FeatureGrouping:
    task_indices: tuple
    view_indices: tuple
    dropped_indices: tuple
    num_clusters: int

    def __post_init__(self):
        if not self.task_indices:
            raise ConfigInvalid("grouping.task_indices", "must not be empty")
        for name in ("task_indices", "view_indices", "dropped_indices"):
            object.__setattr__(self, name, tuple(int(i) for i in getattr(self, name)))
        everything = self.task_indices + self.view_indices + self.dropped_indices
        if len(set(everything)) != len(everything):
            raise ConfigInvalid("grouping", "component indices must appear exactly once")

    @property
    def num_components(self):
        return len(self.task_indices) + len(self.view_indices) + len(self.dropped_indices)

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        return cls(
            tuple(d["task_indices"]),
            tuple(d.get("view_indices", ())),
            tuple(d.get("dropped_indices", ())),
            int(d.get("num_clusters", 2)),
        )


def _as_array(x):
    return x.values if isinstance(x, TimeSeries) else np.asarray(x, dtype=np.float64)


def pearson(x, y):
    """Pearson correlation coefficient, clipped to [-1, 1]."""
    x = _as_array(x)
    y = _as_array(y)
    if x.shape != y.shape or x.size < 2:
        raise LengthMismatch(f"need equal lengths >= 2, got {x.size} and {y.size}")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = np.sqrt(np.sum(dx * dx))
    sy = np.sqrt(np.sum(dy * dy))
    # relative to the data scale so that float noise on a constant is caught
    if sx <= 1e-12 * max(1.0, np.abs(x).max()) or sy <= 1e-12 * max(1.0, np.abs(y).max()):
        raise ZeroVariance("correlation with a constant series is undefined")
    r = float(np.sum(dx * dy) / (sx * sy))
    return min(1.0, max(-1.0, r))


def similarity_report(original, imfs, fold_negative=False):
    """Correlate every IMF and the residual with the original series.

    The distance of a component is ``1 - corr`` (``1 - |corr|`` with
    ``fold_negative``). Constant components get correlation 0 and the
    maximum distance 2.
    """
    corrs, dists = [], []
    for comp in imfs.components():
        try:
            r = pearson(comp, original)
        except ZeroVariance:
            corrs.append(0.0)
            dists.append(CONSTANT_COMPONENT_DISTANCE)
            continue
        corrs.append(r)
        dists.append(1.0 - abs(r) if fold_negative else 1.0 - r)
    return SimilarityReport(tuple(corrs), tuple(dists), tuple(imfs.component_names()))


def _lloyd(d, centroids, max_iterations):
    labels = np.full(d.size, -1)
    for _ in range(max_iterations):
        # argmin breaks ties toward the lower-indexed centroid
        new = np.argmin(np.abs(d[:, None] - centroids[None, :]), axis=1)
        if np.array_equal(new, labels):
            break
        labels = new
        for j in range(centroids.size):
            members = d[labels == j]
            if members.size:
                centroids[j] = members.mean()
    return labels, centroids


def kmeans_1d(distances, k, seed=0, max_iterations=300, restarts=20):
    """Lloyd's algorithm on scalars.

    The first start places centroids at the (i + 0.5) / k quantiles; then
    ``restarts`` more starts pick k distinct data values with a generator
    seeded by ``seed``. The run with the smallest within-cluster sum of
    squares wins (earliest on ties), so the result is deterministic.

    Labels are renumbered so that cluster 0 has the smallest centroid; empty
    clusters are removed, so fewer than ``k`` labels may come back (all
    identical points give a single cluster 0).
    """
    d = np.asarray(distances, dtype=np.float64)
    if k < 2:
        raise ConfigInvalid("num_clusters", f"k must be >= 2, got {k}")
    if d.size < k:
        raise TooFewPoints(f"{d.size} points cannot form {k} clusters")
    starts = [np.quantile(d, (np.arange(k) + 0.5) / k)]
    distinct = np.unique(d)
    if distinct.size >= k:
        rng = np.random.default_rng(seed)
        starts += [np.sort(rng.choice(distinct, k, replace=False)) for _ in range(restarts)]
    best = None
    for init in starts:
        labels, centroids = _lloyd(d, init.astype(np.float64), max_iterations)
        wss = within_cluster_ss(d, labels)
        if best is None or wss < best[0]:
            best = (wss, labels, centroids)
    _, labels, centroids = best
    used = np.unique(labels)
    order = used[np.argsort(centroids[used], kind="stable")]
    remap = {int(old): new for new, old in enumerate(order)}
    return [remap[int(lab)] for lab in labels]


def cluster_centroids(distances, labels):
    d = np.asarray(distances, dtype=np.float64)
    labels = np.asarray(labels)
    return [float(d[labels == j].mean()) for j in range(int(labels.max()) + 1)]


def within_cluster_ss(distances, labels):
    d = np.asarray(distances, dtype=np.float64)
    labels = np.asarray(labels)
    total = 0.0
    for j in np.unique(labels):
        members = d[labels == j]
        total += float(np.sum((members - members.mean()) ** 2))
    return total


def group_features(report, num_clusters=2, drop_least_related=False, seed=0):
    """Split components into task, view and dropped groups by their distances.

    The lowest-centroid cluster feeds the auxiliary tasks. With more than two
    clusters the highest-centroid one is dropped when ``drop_least_related``
    is set; every other cluster becomes a view.
    """
    labels = kmeans_1d(report.distances, num_clusters, seed)
    m = max(labels) + 1
    task, view, dropped = [], [], []
    for i, lab in enumerate(labels):
        if lab == 0:
            task.append(i)
        elif drop_least_related and m > 2 and lab == m - 1:
            dropped.append(i)
        else:
            view.append(i)
    return FeatureGrouping(tuple(task), tuple(view), tuple(dropped), num_clusters)
