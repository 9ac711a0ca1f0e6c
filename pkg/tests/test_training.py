import numpy as np
import pytest

from ratlab.autograd import Tensor
from ratlab.config import parse_config_text
from ratlab.models import MlpModel
from ratlab.training import (
    AdamState,
    TrainingDiverged,
    adam_init,
    adam_step,
    evaluate,
    export_boundary,
    lr_schedule,
    run_trials,
    train,
    trial_summary,
)

MOONS_SUPERVISED = """
[dataset]
kind = moons
[method]
name = supervised
[training]
iterations = 60
[trials]
seeds = 0, 1
"""


def _params(*arrays):
    return [Tensor(np.asarray(a, dtype=np.float64), requires_grad=True) for a in arrays]


class TestAdam:
    def test_zero_gradient_leaves_params_unchanged(self):
        params = _params([1.0, -2.0], [[3.0]])
        state = adam_init(params)
        arrays, state = adam_step(state, params, [np.zeros(2), np.zeros((1, 1))], 0.1)
        assert np.array_equal(arrays[0], [1.0, -2.0])
        assert np.array_equal(arrays[1], [[3.0]])

    def test_first_step_hand_trace(self):
        # f(w) = w^2 at w=1: g=2, m_hat=2, v_hat=4, step ~ lr
        params = _params([1.0])
        state = adam_init(params)
        arrays, _ = adam_step(state, params, [np.array([2.0])], 0.001)
        assert abs(arrays[0][0] - 0.999) <= 1e-8

    def test_deterministic(self):
        grads = [np.array([0.3, -1.2])]
        a1, _ = adam_step(adam_init(_params([1.0, 2.0])), _params([1.0, 2.0]), grads, 0.01)
        a2, _ = adam_step(adam_init(_params([1.0, 2.0])), _params([1.0, 2.0]), grads, 0.01)
        assert np.array_equal(a1[0], a2[0])

    def test_shape_mismatch_rejected(self):
        params = _params([1.0, 2.0])
        with pytest.raises(ValueError):
            adam_step(adam_init(params), params, [np.zeros(3)], 0.01)

    def test_loss_scaling_leaves_update_signs_unchanged(self):
        # moment normalization: scaling gradients by c > 0 keeps directions
        rng = np.random.default_rng(0)
        g = rng.normal(size=(4, 3))
        params = _params(rng.normal(size=(4, 3)))
        base, _ = adam_step(adam_init(params), params, [g.copy()], 0.01)
        scaled, _ = adam_step(adam_init(params), params, [100.0 * g], 0.01)
        d1 = base[0] - params[0].data
        d2 = scaled[0] - params[0].data
        assert np.array_equal(np.sign(d1), np.sign(d2))


class TestLrSchedule:
    def test_endpoints(self):
        assert lr_schedule(0.003, 0, 500) == 0.003
        assert lr_schedule(0.003, 500, 500) == 0.003 * 0.2

    def test_desk_scale_proportional_decay_point(self):
        assert lr_schedule(1.0, 399, 500) == 1.0
        assert lr_schedule(1.0, 400, 500) == 0.2


class TestEvaluate:
    def test_perfect_model_is_zero(self):
        model = MlpModel(2, 2, rng=0)
        x = np.array([[0.0, 0.0], [1.0, 1.0]])
        y = model.predict(x)
        assert evaluate(model, x, y) == 0.0

    def test_constant_prediction_on_balanced_set(self):
        model = MlpModel(2, 2, rng=0)
        model = model.with_params([np.zeros_like(p.data) for p in model.params])
        x = np.random.default_rng(0).normal(size=(10, 2))
        y = np.array([0] * 5 + [1] * 5)
        assert evaluate(model, x, y) == 0.5

    def test_matches_hand_count_on_fixture(self):
        model = MlpModel(2, 2, rng=1)
        x = np.random.default_rng(2).normal(size=(10, 2))
        preds = model.predict(x)
        y = preds.copy()
        y[[1, 4, 7]] = 1 - y[[1, 4, 7]]  # flip three labels
        assert evaluate(model, x, y) == 0.3

    def test_empty_split_rejected(self):
        with pytest.raises(ValueError):
            evaluate(MlpModel(2, 2, rng=0), np.zeros((0, 2)), np.zeros(0))


class TestExportBoundary:
    def test_uniform_model_has_half_confidence(self):
        model = MlpModel(2, 2, rng=0)
        model = model.with_params([np.zeros_like(p.data) for p in model.params])
        rows = export_boundary(model, (-1, 1, -1, 1), 5)
        assert rows.shape == (25, 4)
        assert np.allclose(rows[:, 3], 0.5, atol=1e-12)

    def test_row_count_matches_resolution(self):
        model = MlpModel(2, 2, rng=0)
        assert export_boundary(model, (0, 1, 0, 1), 7).shape == (49, 4)

    def test_non_2d_model_rejected(self):
        with pytest.raises(ValueError):
            export_boundary(MlpModel(3, 2, rng=0), (0, 1, 0, 1), 4)


class TestTrainLoop:
    def test_supervised_fits_fully_labeled_moons(self):
        config = parse_config_text(
            """
[dataset]
kind = moons
n_labeled_per_class = 40
n_unlabeled_per_class = 5
[method]
name = supervised
[trials]
seeds = 0
"""
        )
        metrics = train(config, 0)
        from ratlab.data import make_moons

        split = make_moons(40, 5, geometry=config.dataset.geometry(), seed=0,
                           n_validation_per_class=100, n_test_per_class=1000)
        model = MlpModel.from_arrays(metrics.selected_params)
        train_error = evaluate(model, split.labeled_x, split.labeled_y)
        assert train_error <= 0.05

    def test_identical_config_and_seed_reproduce_metrics(self):
        config = parse_config_text(MOONS_SUPERVISED)
        a = train(config, 0)
        b = train(config, 0)
        assert a.points == b.points
        assert a.selected_iteration == b.selected_iteration
        assert a.selected_test_error == b.selected_test_error
        for pa, pb in zip(a.selected_params, b.selected_params):
            assert np.array_equal(pa, pb)

    def test_metrics_ordered_and_regularizer_nonnegative(self):
        config = parse_config_text(
            MOONS_SUPERVISED.replace("supervised", "vat") + "\n"
        )
        metrics = train(config, 0)
        iterations = [p.iteration for p in metrics.points]
        assert iterations == sorted(iterations)
        assert all(p.reg_value >= -1e-12 for p in metrics.points)

    def test_selection_is_min_validation_earliest(self):
        config = parse_config_text(MOONS_SUPERVISED)
        metrics = train(config, 1)
        best = min(p.val_error for p in metrics.points)
        assert metrics.selected_val_error == best
        first = next(p for p in metrics.points if p.val_error == best)
        assert metrics.selected_iteration == first.iteration

    def test_divergence_aborts(self):
        config = parse_config_text(
            """
[dataset]
kind = moons
[method]
name = supervised
[training]
iterations = 50
base_lr = 1e200
[trials]
seeds = 0
"""
        )
        with pytest.raises(TrainingDiverged):
            train(config, 0)

    def test_mean_teacher_smoke(self):
        config = parse_config_text(
            """
[dataset]
kind = moons
[method]
name = mean_teacher
[training]
iterations = 40
[trials]
seeds = 0
"""
        )
        metrics = train(config, 0)
        assert len(metrics.points) >= 1

    def test_rotation_requires_full_batch(self):
        config = parse_config_text(
            """
[dataset]
kind = moons
[method]
name = rat
[training]
iterations = 10
batch_unlabeled = 16
[trials]
seeds = 0
"""
        )
        with pytest.raises(ValueError):
            train(config, 0)


class TestTrialRunner:
    def test_summary_is_deterministic(self):
        config = parse_config_text(MOONS_SUPERVISED)
        lines_a = trial_summary(config, run_trials(config))
        lines_b = trial_summary(config, run_trials(config))
        assert lines_a == lines_b

    def test_threaded_matches_sequential(self, monkeypatch):
        config = parse_config_text(MOONS_SUPERVISED)
        sequential = run_trials(config)
        monkeypatch.setenv("RAT_LAB_THREADS", "2")
        threaded = run_trials(config)
        for a, b in zip(sequential, threaded):
            assert a.points == b.points
            assert a.selected_test_error == b.selected_test_error
