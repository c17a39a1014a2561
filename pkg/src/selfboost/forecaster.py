"""Multi-task, multi-view forecaster built on decomposed components.

Dataset channel layout used throughout: channel 0 is the original series and
channel ``1 + i`` is decomposition component ``i`` (IMFs first, residual
last). Component indices in a :class:`FeatureGrouping` refer to ``i``.

Shared trunk: three ReLU convolutions over the original plus the related
components, max pooling, two stacked GRUs, and a ReLU dense layer. Each task
gets a two-layer dense head; the main head additionally sees the lag windows
of the less related components, concatenated onto the shared representation.
"""

import base64
import copy
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .core import (
    IDENTITY_STATS,
    NormStats,
    SplitSpec,
    build_windows,
    chronological_split,
    series_stats,
    split_sizes,
    training_segment_length,
)
from .errors import ConfigInvalid, NaNLoss, ShapeInfeasible, ShapeMismatch
from .selection import FeatureGrouping

log = logging.getLogger(__name__)

VARIANTS = ("self_boosted", "mtl_only", "mtv_only")
CHECKPOINT_FORMAT = "selfboost-checkpoint/1"


@dataclass(frozen=True)
class ArchitectureConfig:
    conv_layers: tuple = ((32, 3), (32, 3), (32, 3))
    pool_width: int = 2
    gru_hidden: tuple = (64, 32)
    shared_dense: int = 32
    branch_dense: int = 16
    lag: int = 12
    horizon: int = 1
    include_original_as_channel: bool = True
    variant: str = "self_boosted"
    view_encoding: str = "raw"
    view_projection: int = 8

    def __post_init__(self):
        object.__setattr__(self, "conv_layers", tuple(tuple(int(v) for v in c) for c in self.conv_layers))
        object.__setattr__(self, "gru_hidden", tuple(int(h) for h in self.gru_hidden))
        if self.variant not in VARIANTS:
            raise ConfigInvalid("architecture.variant", f"must be one of {VARIANTS}")
        if self.view_encoding not in ("raw", "projection"):
            raise ConfigInvalid("architecture.view_encoding", "must be 'raw' or 'projection'")
        sizes = [v for c in self.conv_layers for v in c] + list(self.gru_hidden)
        sizes += [self.pool_width, self.shared_dense, self.branch_dense, self.lag, self.horizon]
        if not self.gru_hidden or any(s < 1 for s in sizes):
            raise ConfigInvalid("architecture", "all sizes must be positive")

    def pooled_length(self):
        length = self.lag
        for _, width in self.conv_layers:
            length -= width - 1
        return length // self.pool_width if length >= self.pool_width else 0

    def fitted_to_lag(self, lag):
        """Copy with this lag, shrinking kernel widths and pooling until it fits."""
        convs = [list(c) for c in self.conv_layers]
        pool = self.pool_width
        cfg = self.replace(lag=lag)
        while cfg.pooled_length() < 1:
            widest = max(range(len(convs)), key=lambda i: (convs[i][1], -i))
            if convs[widest][1] > 1:
                convs[widest][1] -= 1
            elif pool > 1:
                pool -= 1
            else:  # pragma: no cover - width 1 and pool 1 always fit lag >= 1
                break
            cfg = self.replace(lag=lag, conv_layers=tuple(map(tuple, convs)), pool_width=pool)
        return cfg

    def replace(self, **changes):
        d = asdict(self)
        d.update(changes)
        return ArchitectureConfig(**d)

    def to_dict(self):
        d = asdict(self)
        d["conv_layers"] = [list(c) for c in self.conv_layers]
        d["gru_hidden"] = list(self.gru_hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    main_task_weight: float = 2.0
    aux_task_weight: float = 1.0
    early_stop_patience: int = 20
    seed: int = 0
    shuffle: bool = True
    grad_clip: float = 5.0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigInvalid("training.epochs", "must be >= 1")
        if self.batch_size < 1:
            raise ConfigInvalid("training.batch_size", "must be >= 1")
        if self.main_task_weight <= 0 or self.aux_task_weight <= 0:
            raise ConfigInvalid("training.weights", "task weights must be > 0")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class Branch:
    hidden: nn.DenseLayer
    out: nn.DenseLayer

    def parameters(self):
        return self.hidden.parameters() + self.out.parameters()


@dataclass
class ForecastModel:
    config: ArchitectureConfig
    grouping: FeatureGrouping
    convs: list
    grus: list
    shared: nn.DenseLayer
    branches: list
    view_projections: list
    trunk_channels: tuple
    view_channels: tuple
    task_channels: tuple
    norm_stats: list = field(default_factory=list)
    channel_names: tuple = ()

    @property
    def num_channels(self):
        return 1 + self.grouping.num_components

    @property
    def main_input_width(self):
        return self.branches[0].hidden.weights.value.shape[1]

    def task_weights(self, cfg):
        return [cfg.main_task_weight] + [cfg.aux_task_weight] * (len(self.branches) - 1)

    def parameters(self):
        params = []
        for layer in self.convs + self.grus:
            params += layer.parameters()
        params += self.shared.parameters()
        for branch in self.branches:
            params += branch.parameters()
        for proj in self.view_projections:
            params += proj.parameters()
        return params

    def state_dict(self):
        return {p.name: p.value.copy() for p in self.parameters()}

    def load_state_dict(self, state):
        for p in self.parameters():
            if state[p.name].shape != p.value.shape:
                raise ShapeMismatch(f"{p.name}: {state[p.name].shape} vs {p.value.shape}")
            p.value = np.array(state[p.name], dtype=np.float64)

    def normalize_inputs(self, inputs):
        means = np.array([s.mean for s in self.norm_stats])
        stds = np.array([s.std for s in self.norm_stats])
        return (inputs - means) / stds

    def normalize_targets(self, targets):
        """All-channel targets [S, C, H] -> this model's tasks, normalized."""
        out = targets[:, list(self.task_channels), :]
        means = np.array([self.norm_stats[c].mean for c in self.task_channels])
        stds = np.array([self.norm_stats[c].std for c in self.task_channels])
        return (out - means[None, :, None]) / stds[None, :, None]


def build_model(arch, grouping, seed=0, norm_stats=None, channel_names=None):
    """Initialise a model for ``grouping``; weights are Glorot-uniform from ``seed``."""
    if arch.pooled_length() < 1:
        raise ShapeInfeasible(
            f"lag {arch.lag} is too short for conv widths "
            f"{[w for _, w in arch.conv_layers]} and pool {arch.pool_width}"
        )
    rng = np.random.default_rng(seed)
    trunk = [1 + i for i in grouping.task_indices]
    if arch.include_original_as_channel:
        trunk = [0] + trunk
    views = [] if arch.variant == "mtl_only" else [1 + i for i in grouping.view_indices]
    tasks = [0] if arch.variant == "mtv_only" else [0] + [1 + i for i in grouping.task_indices]

    convs = []
    in_ch = len(trunk)
    for j, (filters, width) in enumerate(arch.conv_layers):
        convs.append(nn.Conv1dLayer.init(rng, in_ch, filters, width, name=f"conv{j}"))
        in_ch = filters
    grus = []
    for j, hidden in enumerate(arch.gru_hidden):
        grus.append(nn.GruLayer.init(rng, in_ch, hidden, name=f"gru{j}"))
        in_ch = hidden
    shared = nn.DenseLayer.init(rng, in_ch, arch.shared_dense, name="shared")

    projections = []
    if views and arch.view_encoding == "projection":
        for c in views:
            projections.append(nn.DenseLayer.init(rng, arch.lag, arch.view_projection, name=f"view{c}"))
        view_width = len(views) * arch.view_projection
    else:
        view_width = len(views) * arch.lag

    branches = []
    for j, c in enumerate(tasks):
        width = arch.shared_dense + (view_width if j == 0 else 0)
        tag = "main" if j == 0 else f"aux{c}"
        branches.append(
            Branch(
                nn.DenseLayer.init(rng, width, arch.branch_dense, name=f"{tag}.hidden"),
                nn.DenseLayer.init(rng, arch.branch_dense, arch.horizon, name=f"{tag}.out"),
            )
        )
    n_channels = 1 + grouping.num_components
    if norm_stats is None:
        norm_stats = [IDENTITY_STATS] * n_channels
    if len(norm_stats) != n_channels:
        raise ShapeMismatch(f"{len(norm_stats)} norm stats for {n_channels} channels")
    names = tuple(channel_names) if channel_names else ("original",) + tuple(
        f"component_{i}" for i in range(grouping.num_components)
    )
    return ForecastModel(
        config=arch,
        grouping=grouping,
        convs=convs,
        grus=grus,
        shared=shared,
        branches=branches,
        view_projections=projections,
        trunk_channels=tuple(trunk),
        view_channels=tuple(views),
        task_channels=tuple(tasks),
        norm_stats=list(norm_stats),
        channel_names=names,
    )


def forward(model, inputs, tape=None):
    """Per-task outputs [batch, horizon] from normalized inputs [batch, lag, channels]."""
    if inputs.shape[2] != model.num_channels or inputs.shape[1] != model.config.lag:
        raise ShapeMismatch(
            f"inputs {inputs.shape} do not match lag {model.config.lag} "
            f"and {model.num_channels} channels"
        )
    h = nn.Node(inputs[:, :, list(model.trunk_channels)])
    for conv in model.convs:
        h = nn.conv1d(conv, h, tape=tape)
    h = nn.maxpool1d(h, model.config.pool_width, tape=tape)
    for gru in model.grus:
        h = nn.gru_sequence(gru, h, tape=tape)
    h = nn.last_step(h, tape=tape)
    shared = nn.relu(nn.dense(model.shared, h, tape=tape), tape=tape)

    outputs = []
    for j, branch in enumerate(model.branches):
        x = shared
        if j == 0 and model.view_channels:
            views = []
            for k, c in enumerate(model.view_channels):
                v = nn.Node(inputs[:, :, c])
                if model.view_projections:
                    v = nn.dense(model.view_projections[k], v, tape=tape)
                views.append(v)
            x = nn.concat([shared] + views, axis=-1, tape=tape)
        z = nn.relu(nn.dense(branch.hidden, x, tape=tape), tape=tape)
        outputs.append(nn.dense(branch.out, z, tape=tape))
    return outputs


def joint_loss_node(predictions, targets, weights, tape=None):
    if not (len(predictions) == len(targets) == len(weights)):
        raise ShapeMismatch(
            f"{len(predictions)} predictions, {len(targets)} targets, {len(weights)} weights"
        )
    losses = [nn.mse(p, t, tape=tape) for p, t in zip(predictions, targets)]
    return nn.weighted_mean(losses, weights, tape=tape), losses


def joint_loss(predictions, targets, weights):
    """Average over tasks of the weighted per-task mean squared error."""
    total, _ = joint_loss_node(predictions, targets, weights)
    return float(total.value)


# ---------------------------------------------------------------------------
# Training


@dataclass
class EpochRecord:
    epoch: int
    train_losses: list
    val_losses: list
    train_joint: float
    val_joint: float


@dataclass
class TrainingLog:
    task_names: list
    epochs: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    def to_rows(self):
        header = ["epoch"] + [f"train_{n}" for n in self.task_names] + [
            f"val_{n}" for n in self.task_names
        ] + ["train_joint", "val_joint"]
        rows = [header]
        for r in self.epochs:
            rows.append([r.epoch] + list(r.train_losses) + list(r.val_losses) + [r.train_joint, r.val_joint])
        return rows

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(
            task_names=list(d["task_names"]),
            epochs=[EpochRecord(**e) for e in d["epochs"]],
            best_epoch=d["best_epoch"],
            stopped_early=d["stopped_early"],
        )


@dataclass
class TrainerState:
    """Everything needed to continue a run bit-for-bit."""

    epoch: int
    adam: nn.AdamState
    rng_state: dict
    best_val: float
    best_params: dict
    bad_epochs: int
    log: TrainingLog
    finished: bool = False


def _evaluate(model, inputs, targets, weights):
    preds = forward(model, inputs)
    total, losses = joint_loss_node(preds, [targets[:, j, :] for j in range(targets.shape[1])], weights)
    return float(total.value), [float(l.value) for l in losses]


def task_names(model):
    return [model.channel_names[c] for c in model.task_channels]


def new_trainer_state(model, cfg):
    return TrainerState(
        epoch=0,
        adam=nn.AdamState(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon),
        rng_state=np.random.default_rng(cfg.seed).bit_generator.state,
        best_val=float("inf"),
        best_params=model.state_dict(),
        bad_epochs=0,
        log=TrainingLog(task_names(model)),
    )


def train(model, train_data, val_data, cfg=TrainConfig(), state=None, max_epochs=None):
    """Mini-batch Adam on the joint loss with early stopping on validation loss.

    Datasets are raw scale with all channels as tasks (see :func:`make_dataset`);
    the model's norm stats are applied here. When training ends the best
    validation parameters are restored. ``state`` resumes an earlier run and
    ``max_epochs`` pauses after that many epochs (state is returned unfinished).
    Returns ``(model, log, state)``.
    """
    if state is None:
        state = new_trainer_state(model, cfg)
    x_train = model.normalize_inputs(train_data.inputs)
    y_train = model.normalize_targets(train_data.targets)
    x_val = model.normalize_inputs(val_data.inputs)
    y_val = model.normalize_targets(val_data.targets)
    weights = model.task_weights(cfg)
    params = model.parameters()
    n = x_train.shape[0]
    n_tasks = len(model.branches)
    rng = np.random.default_rng()
    rng.bit_generator.state = state.rng_state
    epochs_run = 0

    while not state.finished and state.epoch < cfg.epochs:
        if max_epochs is not None and epochs_run >= max_epochs:
            break
        epoch = state.epoch
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        task_sums = np.zeros(n_tasks)
        for b, lo in enumerate(range(0, n, cfg.batch_size)):
            idx = order[lo:lo + cfg.batch_size]
            xb = x_train[idx]
            yb = y_train[idx]
            for p in params:
                p.zero_grad()
            tape = nn.Tape()
            preds = forward(model, xb, tape=tape)
            total, losses = joint_loss_node(preds, [yb[:, j, :] for j in range(n_tasks)], weights, tape=tape)
            value = float(total.value)
            if not np.isfinite(value):
                raise NaNLoss(epoch, b, value)
            tape.backward(total)
            nn.clip_grad_norm(params, cfg.grad_clip)
            nn.adam_step(state.adam, params)
            task_sums += np.array([float(l.value) for l in losses]) * len(idx)
        train_losses = list(task_sums / n)
        train_joint = float(np.dot(weights, task_sums / n) / n_tasks)
        val_joint, val_losses = _evaluate(model, x_val, y_val, weights)
        if not np.isfinite(val_joint):
            raise NaNLoss(epoch, -1, val_joint)
        state.log.epochs.append(EpochRecord(epoch, train_losses, val_losses, train_joint, val_joint))
        if val_joint < state.best_val:
            state.best_val = val_joint
            state.best_params = model.state_dict()
            state.log.best_epoch = epoch
            state.bad_epochs = 0
        else:
            state.bad_epochs += 1
        state.epoch += 1
        epochs_run += 1
        log.debug("epoch %d train %.6g val %.6g", epoch, train_joint, val_joint)
        if state.bad_epochs >= cfg.early_stop_patience:
            state.log.stopped_early = True
            state.finished = True
    state.rng_state = rng.bit_generator.state
    if state.epoch >= cfg.epochs:
        state.finished = True
    if state.finished:
        model.load_state_dict(state.best_params)
    return model, state.log, state


def predict(model, dataset):
    """Per-task forecasts [num_samples, horizon] on the original scale."""
    outputs = forward(model, model.normalize_inputs(dataset.inputs))
    return [
        model.norm_stats[c].invert(o.value) for c, o in zip(model.task_channels, outputs)
    ]


# ---------------------------------------------------------------------------
# Data preparation


def channel_series(original, imfset):
    comps = imfset.components()
    return [original.renamed("original")] + list(comps)


def make_dataset(original, imfset, lag, horizon):
    """All channels as inputs and as targets (channel 0 = original)."""
    series = channel_series(original, imfset)
    return build_windows(series, list(range(len(series))), lag, horizon)


def training_norm_stats(series_list, num_train_windows, lag, horizon):
    """Per-channel centring and scaling from the samples the training windows touch.

    Channel 0 (the original) uses its own mean and std. Components are centred
    on their own mean but share the original's std: they are additive parts of
    one signal, and a per-component std would blow up slow modes that are
    nearly flat over the training segment. A constant original keeps std 1.
    """
    end = training_segment_length(num_train_windows, lag, horizon)
    base = series_stats(series_list[0].values[:end])
    scale = base.std if base.std >= 1e-12 else 1.0
    stats = [NormStats(base.mean, scale)]
    for s in series_list[1:]:
        stats.append(NormStats(series_stats(s.values[:end]).mean, scale))
    return stats


@dataclass
class PreparedData:
    dataset: object
    train: object
    val: object
    test: object
    norm_stats: list
    channel_names: tuple


def prepare_data(original, imfset, lag, horizon, split=SplitSpec()):
    series = channel_series(original, imfset)
    ds = build_windows(series, list(range(len(series))), lag, horizon)
    n_train, _, _ = split_sizes(len(ds), split)
    train_ds, val_ds, test_ds = chronological_split(ds, split)
    stats = training_norm_stats(series, n_train, lag, horizon)
    return PreparedData(ds, train_ds, val_ds, test_ds, stats, tuple(s.name for s in series))


@dataclass
class FitResult:
    model: ForecastModel
    log: TrainingLog
    state: TrainerState
    data: PreparedData

    def main_predictions(self, split):
        ds = getattr(self.data, split)
        return predict(self.model, ds)[0]

    def main_actuals(self, split):
        return getattr(self.data, split).targets[:, 0, :]


def fit(original, imfset, grouping, arch, cfg, split=SplitSpec(), data=None):
    """Prepare windows, build the model from ``cfg.seed`` and train it."""
    data = data or prepare_data(original, imfset, arch.lag, arch.horizon, split)
    model = build_model(arch, grouping, seed=cfg.seed, norm_stats=data.norm_stats, channel_names=data.channel_names)
    model, tlog, state = train(model, data.train, data.val, cfg)
    return FitResult(model, tlog, state, data)


# ---------------------------------------------------------------------------
# Checkpoints


def _encode(a):
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode(d):
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(d["shape"]).copy()


def _encode_params(params):
    return {name: _encode(v) for name, v in params.items()}


def checkpoint_dict(model, state=None, train_config=None):
    doc = {
        "format": CHECKPOINT_FORMAT,
        "architecture": model.config.to_dict(),
        "grouping": model.grouping.to_dict(),
        "channel_names": list(model.channel_names),
        "norm_stats": [s.to_dict() for s in model.norm_stats],
        "parameters": _encode_params(model.state_dict()),
    }
    if train_config is not None:
        doc["training"] = train_config.to_dict()
    if state is not None:
        doc["trainer"] = {
            "epoch": state.epoch,
            "finished": state.finished,
            "best_val": state.best_val,
            "bad_epochs": state.bad_epochs,
            "rng_state": state.rng_state,
            "best_parameters": _encode_params(state.best_params),
            "optimizer": {
                **state.adam.hyperparameters(),
                "step_count": state.adam.step_count,
                "first_moment": _encode_params(state.adam.first_moment),
                "second_moment": _encode_params(state.adam.second_moment),
            },
            "log": state.log.to_dict(),
        }
    return doc


def save_checkpoint(path, model, state=None, train_config=None):
    doc = checkpoint_dict(model, state, train_config)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path_or_doc):
    """Return ``(model, state_or_None, train_config_or_None)``."""
    if isinstance(path_or_doc, dict):
        doc = path_or_doc
    else:
        with open(path_or_doc, encoding="utf-8") as fh:
            doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ConfigInvalid("checkpoint.format", f"unsupported format {doc.get('format')!r}")
    arch = ArchitectureConfig.from_dict(doc["architecture"])
    grouping = FeatureGrouping.from_dict(doc["grouping"])
    stats = [NormStats(s["mean"], s["std"]) for s in doc["norm_stats"]]
    model = build_model(arch, grouping, seed=0, norm_stats=stats, channel_names=doc["channel_names"])
    model.load_state_dict({k: _decode(v) for k, v in doc["parameters"].items()})
    cfg = TrainConfig.from_dict(doc["training"]) if "training" in doc else None
    state = None
    if "trainer" in doc:
        t = doc["trainer"]
        opt = t["optimizer"]
        adam = nn.AdamState(
            opt["learning_rate"],
            opt["beta1"],
            opt["beta2"],
            opt["epsilon"],
            opt["step_count"],
            {k: _decode(v) for k, v in opt["first_moment"].items()},
            {k: _decode(v) for k, v in opt["second_moment"].items()},
        )
        state = TrainerState(
            epoch=t["epoch"],
            adam=adam,
            rng_state=t["rng_state"],
            best_val=t["best_val"],
            best_params={k: _decode(v) for k, v in t["best_parameters"].items()},
            bad_epochs=t["bad_epochs"],
            log=TrainingLog.from_dict(t["log"]),
            finished=t["finished"],
        )
    return model, state, cfg


def clone_model(model):
    return copy.deepcopy(model)

