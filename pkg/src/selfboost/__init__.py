"""Self-boosted time series forecasting.

EEMD splits a series into intrinsic mode functions, the components are
grouped by correlation with the original, and a multi-task multi-view
network forecasts the original while predicting the related components as
auxiliary tasks and reading the unrelated ones as extra views.
"""

from .core import SplitSpec, TimeSeries, WindowedDataset, build_windows, chronological_split
from .eemd import DecompositionConfig, ImfSet, eemd, emd
from .errors import ConfigInvalid, DataError, NumericalError, SelfBoostError
from .forecaster import ArchitectureConfig, TrainConfig, build_model, fit, predict, train
from .metrics import compute_metrics, rmse_coefficients
from .selection import FeatureGrouping, group_features, similarity_report

__version__ = "0.1.0"
