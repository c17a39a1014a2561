import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import gradcheck
from selfboost import baselines, nn
from selfboost.core import TimeSeries, build_windows, chronological_split
from selfboost.eemd import DecompositionConfig, ImfSet, eemd
from selfboost.errors import ConfigInvalid, NaNLoss, ShapeInfeasible, ShapeMismatch
from selfboost.forecaster import (
    ArchitectureConfig,
    TrainConfig,
    build_model,
    checkpoint_dict,
    fit,
    forward,
    joint_loss,
    load_checkpoint,
    make_dataset,
    new_trainer_state,
    predict,
    prepare_data,
    save_checkpoint,
    train,
    training_norm_stats,
)
from selfboost.metrics import compute_metrics
from selfboost.selection import FeatureGrouping, group_features, similarity_report
from selfboost.synth import generate

SMALL = ArchitectureConfig(
    conv_layers=((4, 3), (4, 3), (4, 3)), gru_hidden=(6, 4), shared_dense=8, branch_dense=4, lag=12
)


def toy_components(n=120, seed=0):
    """Original = sum of four hand-made components, so the ImfSet is exact."""
    t = np.arange(n)
    rng = np.random.default_rng(seed)
    comps = np.stack([
        np.sin(2 * np.pi * t / 6),
        0.5 * np.sin(2 * np.pi * t / 20),
        0.1 * rng.standard_normal(n),
        0.01 * t,
    ])
    return TimeSeries("y", comps.sum(axis=0)), ImfSet.from_array(comps)


class TestBuild:
    grouping = FeatureGrouping((0, 1), (2, 3, 4), (), 2)

    def test_self_boosted(self):
        m = build_model(SMALL, self.grouping)
        assert len(m.branches) == 3
        assert m.main_input_width == SMALL.shared_dense + 3 * SMALL.lag
        assert m.trunk_channels == (0, 1, 2)
        assert m.view_channels == (3, 4, 5)
        assert m.convs[0].kernels.value.shape == (4, 3, 3)

    def test_mtv_only(self):
        m = build_model(SMALL.replace(variant="mtv_only"), self.grouping)
        assert len(m.branches) == 1
        assert m.main_input_width == SMALL.shared_dense + 3 * SMALL.lag

    def test_mtl_only(self):
        m = build_model(SMALL.replace(variant="mtl_only"), self.grouping)
        assert len(m.branches) == 3
        assert m.main_input_width == SMALL.shared_dense

    def test_literal_trunk_without_original(self):
        m = build_model(SMALL.replace(include_original_as_channel=False), self.grouping)
        assert m.trunk_channels == (1, 2)

    def test_projection_views(self):
        m = build_model(SMALL.replace(view_encoding="projection", view_projection=5), self.grouping)
        assert m.main_input_width == SMALL.shared_dense + 3 * 5

    def test_too_short_lag(self):
        with pytest.raises(ShapeInfeasible):
            build_model(SMALL.replace(lag=6), self.grouping)

    @pytest.mark.parametrize("lag", [1, 2, 3, 6, 7, 12])
    def test_fitted_to_lag_is_feasible(self, lag):
        arch = SMALL.fitted_to_lag(lag)
        assert arch.lag == lag and arch.pooled_length() >= 1
        build_model(arch, self.grouping)
        if lag >= 8:
            assert arch.conv_layers == SMALL.conv_layers and arch.pool_width == 2

    def test_seeded_init_is_reproducible(self):
        a = build_model(SMALL, self.grouping, seed=3).state_dict()
        b = build_model(SMALL, self.grouping, seed=3).state_dict()
        assert all(np.array_equal(a[k], b[k]) for k in a)
        assert all(np.all(v == 0) for k, v in a.items() if "bias" in k)

    def test_bad_variant(self):
        with pytest.raises(ConfigInvalid):
            SMALL.replace(variant="both")


class TestJointLoss:
    def test_perfect(self):
        p = [np.ones((3, 1)), np.zeros((3, 1))]
        assert joint_loss(p, p, [2.0, 1.0]) == 0.0

    def test_two_tasks(self):
        preds = [np.ones((4, 1)), np.ones((4, 1))]
        targets = [np.zeros((4, 1)), np.full((4, 1), 2.0)]
        assert joint_loss(preds, targets, [2.0, 1.0]) == 1.5

    def test_single_task(self):
        assert joint_loss([np.array([[3.0]])], [np.array([[1.0]])], [2.0]) == 8.0

    def test_default_main_weight(self):
        assert TrainConfig().main_task_weight == 2.0
        assert TrainConfig().aux_task_weight == 1.0

    @given(st.integers(1, 5), st.integers(0, 2**31 - 1))
    def test_auxiliary_order_does_not_matter(self, n_aux, seed):
        rng = np.random.default_rng(seed)
        preds = [rng.standard_normal((5, 2)) for _ in range(n_aux + 1)]
        targets = [rng.standard_normal((5, 2)) for _ in range(n_aux + 1)]
        weights = list(rng.uniform(0.5, 3.0, n_aux + 1))
        perm = [0] + list(1 + rng.permutation(n_aux))
        a = joint_loss(preds, targets, weights)
        b = joint_loss([preds[i] for i in perm], [targets[i] for i in perm], [weights[i] for i in perm])
        assert abs(a - b) <= 1e-12 * max(1.0, abs(a))

    def test_mismatched_lengths(self):
        with pytest.raises(ShapeMismatch):
            joint_loss([np.zeros(1)], [np.zeros(1), np.zeros(1)], [1.0])


class TestForward:
    def test_hand_set_weights_output_bias(self):
        grouping = FeatureGrouping((0,), (1,), (), 2)
        m = build_model(SMALL, grouping)
        for p in m.parameters():
            p.value[...] = 0.0
        m.branches[0].out.bias.value[:] = 0.75
        m.branches[1].out.bias.value[:] = -2.0
        x = np.random.default_rng(0).standard_normal((5, SMALL.lag, 3))
        out = forward(m, x)
        assert np.all(out[0].value == 0.75)
        assert np.all(out[1].value == -2.0)

    def test_mtl_equals_self_boosted_with_silent_views(self):
        grouping = FeatureGrouping((0, 1), (2, 3), (), 2)
        sb = build_model(SMALL, grouping, seed=1)
        mtl = build_model(SMALL.replace(variant="mtl_only"), grouping, seed=2)
        # copy everything mtl has from sb; the main hidden layer keeps its shared columns
        sb_state = sb.state_dict()
        state = {}
        for name, v in mtl.state_dict().items():
            src = sb_state[name]
            state[name] = src[:, : SMALL.shared_dense] if src.shape != v.shape else src
        mtl.load_state_dict(state)
        sb.branches[0].hidden.weights.value[:, SMALL.shared_dense:] = 0.0
        rng = np.random.default_rng(3)
        x = rng.standard_normal((4, SMALL.lag, 5))
        a = forward(sb, x)
        x_zero_views = x.copy()
        x_zero_views[:, :, [3, 4]] = 0.0
        b = forward(mtl, x_zero_views)
        # zero columns change the BLAS summation order, so compare to rounding
        assert np.allclose(a[0].value, b[0].value, rtol=0, atol=1e-14)
        assert all(np.allclose(p.value, q.value, rtol=0, atol=1e-14) for p, q in zip(a[1:], b[1:]))

    def test_wrong_shape(self):
        m = build_model(SMALL, FeatureGrouping((0,), (), (), 2))
        with pytest.raises(ShapeMismatch):
            forward(m, np.zeros((2, SMALL.lag, 5)))

    def test_full_model_gradients(self):
        grouping = FeatureGrouping((0, 1), (2, 3), (), 2)
        m = build_model(SMALL, grouping, seed=0)
        rng = np.random.default_rng(1)
        for p in m.parameters():
            p.value += rng.uniform(-0.05, 0.05, p.value.shape)
        x = rng.standard_normal((6, SMALL.lag, 5))
        y = rng.standard_normal((6, 3, 1))

        def loss(tape):
            preds = forward(m, x, tape)
            total, _ = _joint(preds, y, tape)
            return total

        assert gradcheck.check(loss, m.parameters(), count=50, seed=2) < 1e-4


def _joint(preds, y, tape):
    from selfboost.forecaster import joint_loss_node

    return joint_loss_node(preds, [y[:, j, :] for j in range(y.shape[1])], [2.0] + [1.0] * (y.shape[1] - 1), tape)


class TestNormalization:
    def test_components_share_the_original_scale(self):
        y, imfs = toy_components()
        series = [y] + imfs.components()
        stats = training_norm_stats(series, 50, 12, 1)
        end = 50 + 12
        assert stats[0].mean == pytest.approx(y.values[:end].mean(), abs=1e-15)
        assert stats[0].std == pytest.approx(y.values[:end].std(), abs=1e-15)
        for s, comp in zip(stats[1:], imfs.components()):
            assert s.std == stats[0].std
            assert s.mean == pytest.approx(comp.values[:end].mean(), abs=1e-15)

    def test_constant_original_uses_unit_scale(self):
        c = TimeSeries("c", np.full(40, 3.0))
        stats = training_norm_stats([c, c], 20, 4, 1)
        assert stats[0].mean == 3.0 and stats[0].std == 1.0

    def test_no_leakage_from_later_samples(self):
        y, imfs = toy_components()
        data = prepare_data(y, imfs, SMALL.lag, 1)
        m = build_model(SMALL, FeatureGrouping((0, 1), (2, 3), (), 2), seed=0, norm_stats=data.norm_stats)
        base = predict(m, data.dataset)[0]
        arr = np.vstack([y.values, imfs.as_array()])
        t = 70
        arr[:, t + 1:] += 100.0
        ds = build_windows([TimeSeries(str(i), a) for i, a in enumerate(arr)], list(range(5)), SMALL.lag, 1)
        moved = predict(m, ds)[0]
        last = t - SMALL.lag + 1  # window ending at t
        assert np.array_equal(base[: last + 1], moved[: last + 1])
        assert not np.array_equal(base[last + 1:], moved[last + 1:])


class TestTraining:
    def test_constant_series_is_learned(self):
        c = TimeSeries("c", np.full(200, 4.0))
        imfs = eemd(c, DecompositionConfig(ensemble_size=1, noise_amplitude_ratio=0.0))
        assert imfs.num_components == 1
        cfg = TrainConfig(epochs=50, early_stop_patience=50, learning_rate=1e-2, seed=0)
        result = fit(c, imfs, FeatureGrouping((0,), (), (), 2), SMALL, cfg)
        val_main = min(e.val_losses[0] for e in result.log.epochs)
        assert val_main < 1e-4
        assert np.allclose(result.main_predictions("train"), 4.0, atol=1e-2)

    def test_deterministic(self):
        y, imfs = toy_components()
        cfg = TrainConfig(epochs=3, seed=4)
        grouping = FeatureGrouping((0, 1), (2, 3), (), 2)
        a = fit(y, imfs, grouping, SMALL, cfg)
        b = fit(y, imfs, grouping, SMALL, cfg)
        assert a.log.to_dict() == b.log.to_dict()
        assert json.dumps(checkpoint_dict(a.model, a.state, cfg)) == json.dumps(checkpoint_dict(b.model, b.state, cfg))
        assert np.array_equal(predict(a.model, a.data.test)[0], predict(a.model, a.data.test)[0])

    def test_log_has_every_task(self):
        y, imfs = toy_components()
        r = fit(y, imfs, FeatureGrouping((0, 1), (2, 3), (), 2), SMALL, TrainConfig(epochs=2))
        header = r.log.to_rows()[0]
        assert header == ["epoch", "train_original", "train_imf_1", "train_imf_2",
                          "val_original", "val_imf_1", "val_imf_2", "train_joint", "val_joint"]
        assert len(r.log.epochs) == 2

    def test_early_stopping_restores_best(self):
        y, imfs = toy_components()
        cfg = TrainConfig(epochs=40, early_stop_patience=2, learning_rate=0.05, seed=1)
        r = fit(y, imfs, FeatureGrouping((0, 1), (2, 3), (), 2), SMALL, cfg)
        assert r.state.finished
        best = r.log.epochs[r.log.best_epoch].val_joint
        assert best == min(e.val_joint for e in r.log.epochs)
        data = r.data
        x = r.model.normalize_inputs(data.val.inputs)
        yv = r.model.normalize_targets(data.val.targets)
        total, _ = _joint(forward(r.model, x), yv, None)
        assert float(total.value) == pytest.approx(best, rel=1e-12)

    def test_nan_loss_aborts(self):
        y, imfs = toy_components()
        data = prepare_data(y, imfs, SMALL.lag, 1)
        m = build_model(SMALL, FeatureGrouping((0, 1), (2, 3), (), 2), norm_stats=data.norm_stats)
        m.shared.bias.value[0] = np.nan
        with pytest.raises(NaNLoss) as err:
            train(m, data.train, data.val, TrainConfig(epochs=1))
        assert err.value.epoch == 0 and err.value.batch == 0

    def test_resume_is_bit_exact(self, tmp_path):
        y, imfs = toy_components()
        data = prepare_data(y, imfs, SMALL.lag, 1)
        grouping = FeatureGrouping((0, 1), (2, 3), (), 2)
        cfg = TrainConfig(epochs=4, seed=9, early_stop_patience=10)

        def fresh():
            return build_model(SMALL, grouping, seed=cfg.seed, norm_stats=data.norm_stats,
                               channel_names=data.channel_names)

        straight, log_a, _ = train(fresh(), data.train, data.val, cfg)
        half, _, state = train(fresh(), data.train, data.val, cfg, max_epochs=2)
        assert not state.finished
        path = tmp_path / "ckpt.json"
        save_checkpoint(path, half, state, cfg)
        model, state2, cfg2 = load_checkpoint(path)
        assert cfg2 == cfg
        resumed, log_b, _ = train(model, data.train, data.val, cfg2, state=state2)
        assert log_a.to_dict() == log_b.to_dict()
        a, b = straight.state_dict(), resumed.state_dict()
        assert all(np.array_equal(a[k], b[k]) for k in a)

    def test_checkpoint_round_trip(self, tmp_path):
        y, imfs = toy_components()
        r = fit(y, imfs, FeatureGrouping((0, 1), (2, 3), (), 2), SMALL, TrainConfig(epochs=1))
        save_checkpoint(tmp_path / "c.json", r.model, r.state, TrainConfig(epochs=1))
        model, _, _ = load_checkpoint(tmp_path / "c.json")
        assert np.array_equal(predict(model, r.data.test)[0], r.main_predictions("test"))
        assert model.norm_stats == r.model.norm_stats
        assert model.channel_names == r.model.channel_names

    def test_beats_persistence_on_short_synthetic(self):
        y = generate("two_tone_trend", 512, seed=0)
        imfs = eemd(y, DecompositionConfig(ensemble_size=20, rng_seed=0))
        grouping = group_features(similarity_report(y, imfs))
        r = fit(y, imfs, grouping, ArchitectureConfig(lag=12), TrainConfig(epochs=60, seed=0))
        model_rmse = compute_metrics(r.main_actuals("test"), r.main_predictions("test")).rmse
        test = chronological_split(build_windows([y], [0], 12, 1))[2]
        persistence = compute_metrics(test.targets[:, 0], baselines.persistence_forecast(test)).rmse
        assert model_rmse < persistence


class TestConfig:
    def test_train_config_validation(self):
        with pytest.raises(ConfigInvalid):
            TrainConfig(epochs=0)
        with pytest.raises(ConfigInvalid):
            TrainConfig(main_task_weight=0.0)

    def test_architecture_round_trip(self):
        arch = SMALL.replace(variant="mtv_only", horizon=3)
        assert ArchitectureConfig.from_dict(json.loads(json.dumps(arch.to_dict()))) == arch

    def test_multi_horizon_shapes(self):
        y, imfs = toy_components()
        r = fit(y, imfs, FeatureGrouping((0,), (1,), (2, 3), 2), SMALL.replace(horizon=3), TrainConfig(epochs=1))
        assert r.main_predictions("test").shape == (len(r.data.test), 3)
