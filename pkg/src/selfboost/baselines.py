"""Reference forecasters: persistence and least-squares autoregression."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigInvalid, SingularSystem

RIDGE = 1e-8
_COND_LIMIT = 1e12


def _target_channel(dataset, task=0):
    return dataset.task_channels[task]


def persistence_forecast(dataset, task=0):
    """Repeat the last observed value of the task's channel over the horizon."""
    last = dataset.inputs[:, -1, _target_channel(dataset, task)]
    return np.repeat(last[:, None], dataset.horizon, axis=1)


@dataclass
class ArModel:
    """Direct AR forecaster: row ``h`` of ``coefficients`` predicts step ``h + 1``.

    ``coefficients[h][i]`` multiplies the value ``i + 1`` steps back.
    """

    order: int
    coefficients: np.ndarray  # [horizon, order]
    intercept: np.ndarray  # [horizon]
    channel: int = 0

    def predict(self, dataset):
        lags = dataset.inputs[:, -self.order:, self.channel][:, ::-1]
        return lags @ self.coefficients.T + self.intercept


def _solve_normal_equations(X, y):
    A = X.T @ X
    b = X.T @ y
    if not np.all(np.isfinite(A)) or np.linalg.cond(A) > _COND_LIMIT:
        A = A + RIDGE * np.eye(A.shape[0])
    try:
        sol = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(f"normal equations are singular: {exc}") from None
    if not np.all(np.isfinite(sol)):
        raise SingularSystem("normal equations produced non-finite coefficients")
    return sol


def fit_ar(train, order, task=0):
    """Least-squares AR(order) with intercept, one direct fit per horizon step."""
    if not 1 <= order <= train.lag:
        raise ConfigInvalid("order", f"must lie in [1, lag={train.lag}], got {order}")
    channel = _target_channel(train, task)
    lags = train.inputs[:, -order:, channel][:, ::-1]
    X = np.hstack([lags, np.ones((lags.shape[0], 1))])
    coefs, intercepts = [], []
    for h in range(train.horizon):
        sol = _solve_normal_equations(X, train.targets[:, task, h])
        coefs.append(sol[:-1])
        intercepts.append(sol[-1])
    return ArModel(order, np.array(coefs), np.array(intercepts), channel)
