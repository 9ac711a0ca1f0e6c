import math

import numpy as np
import pytest

from ratlab.adversarial import AdvConfig, RampSchedule, random_transform_params
from ratlab.autograd import Tensor, grad
from ratlab.models import MlpModel
from ratlab.objectives import (
    MethodConfig,
    entropy_term,
    lambda_schedule,
    mean_teacher_step,
    pi_model_loss,
    probability_mse,
    pseudo_label_loss,
    rat_objective,
    supervised_loss,
    vat_objective,
)
from ratlab.transforms import TransformSpec, identity_params, param_norm


class StubModel:
    """Fixed log-probability table, independent of the input."""

    def __init__(self, log_probs):
        self.table = np.asarray(log_probs, dtype=np.float64)

    def log_prob(self, x):
        return Tensor(self.table)


def _log_probs(rows):
    return np.log(np.asarray(rows, dtype=np.float64))


class TestMethodConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            MethodConfig(method="mixmatch")
        with pytest.raises(ValueError):
            MethodConfig(lambda_max=-1.0)
        with pytest.raises(ValueError):
            MethodConfig(pseudo_label_threshold=1.5)
        with pytest.raises(ValueError):
            MethodConfig(ema_decay=1.0)


class TestSupervisedLoss:
    def test_confident_correct_prediction_is_near_zero(self):
        model = StubModel(_log_probs([[0.9999, 0.0001]]))
        assert supervised_loss(model, np.zeros((1, 2)), [0]).item() <= 1e-3

    def test_uniform_prediction_is_log_k(self):
        model = StubModel(np.full((4, 10), -math.log(10.0)))
        loss = supervised_loss(model, np.zeros((4, 2)), [0, 3, 5, 9])
        assert abs(loss.item() - math.log(10.0)) <= 1e-12

    def test_matches_definition(self):
        table = _log_probs([[0.2, 0.8], [0.6, 0.4], [0.5, 0.5]])
        y = np.array([1, 0, 1])
        model = StubModel(table)
        expected = -np.mean(table[np.arange(3), y])
        assert abs(supervised_loss(model, np.zeros((3, 2)), y).item() - expected) == 0

    def test_label_out_of_range(self):
        model = StubModel(_log_probs([[0.5, 0.5]]))
        with pytest.raises(ValueError):
            supervised_loss(model, np.zeros((1, 2)), [2])


class TestEntropy:
    def test_uniform_is_log_k(self):
        model = StubModel(np.full((3, 10), -math.log(10.0)))
        assert abs(entropy_term(model, np.zeros((3, 2))).item() - math.log(10)) <= 1e-12

    def test_near_one_hot_is_near_zero(self):
        model = StubModel(_log_probs([[1 - 1e-12, 1e-12]]))
        assert entropy_term(model, np.zeros((1, 2))).item() <= 1e-9

    @pytest.mark.parametrize("seed", range(5))
    def test_bounds(self, seed):
        rng = np.random.default_rng(seed)
        logits = rng.normal(size=(6, 7)) * 3
        p = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        model = StubModel(np.log(p))
        value = entropy_term(model, np.zeros((6, 2))).item()
        assert -1e-12 <= value <= math.log(7.0) + 1e-12


class TestLambdaSchedule:
    def test_endpoints(self):
        cfg = MethodConfig(method="vat", lambda_max=0.3, lambda_rampup_horizon=200)
        assert lambda_schedule(cfg, 200) == 0.3
        assert lambda_schedule(cfg, 10**6) == 0.3
        assert abs(lambda_schedule(cfg, 0) - 0.3 * math.exp(-5)) <= 1e-15

    def test_monotone(self):
        cfg = MethodConfig(method="vat", lambda_max=1.0, lambda_rampup_horizon=77)
        values = [lambda_schedule(cfg, t) for t in range(200)]
        assert (np.diff(values) >= -1e-15).all()


class TestVatObjective:
    def _setup(self, seed=0):
        rng = np.random.default_rng(seed)
        model = MlpModel(2, 2, rng=seed)
        x_l = rng.normal(size=(6, 2))
        y = rng.integers(0, 2, size=6)
        x_u = rng.normal(size=(10, 2))
        return model, x_l, y, x_u

    def test_lambda_zero_reduces_to_supervised(self):
        model, x_l, y, x_u = self._setup()
        cfg = MethodConfig(method="vat", lambda_max=0.0, entropy_weight=0.0)
        loss, _ = vat_objective(model, x_l, y, x_u, 1.0, 0, cfg, AdvConfig(),
                                np.random.default_rng(0))
        assert loss.item() == supervised_loss(model, x_l, y).item()

    def test_regularizer_nonnegative(self):
        model, x_l, y, x_u = self._setup(1)
        cfg = MethodConfig(method="vat", lambda_max=0.3)
        _, reg = vat_objective(model, x_l, y, x_u, 1.0, 0, cfg, AdvConfig(),
                               np.random.default_rng(1))
        assert reg.item() >= -1e-12

    def test_equals_rat_with_noise_composite(self):
        model, x_l, y, x_u = self._setup(2)
        cfg = MethodConfig(method="vat", lambda_max=0.3, entropy_weight=0.06,
                           lambda_rampup_horizon=10)
        spec = TransformSpec("noise", 0.7, (2,))
        schedule = RampSchedule(0.7, 0)
        vat_loss, vat_reg = vat_objective(
            model, x_l, y, x_u, 0.7, 3, cfg, AdvConfig(), np.random.default_rng(5)
        )
        rat_loss, rat_reg = rat_objective(
            model, x_l, y, x_u, [spec], [schedule], 3, cfg, AdvConfig(),
            np.random.default_rng(5),
        )
        assert vat_reg.item() == rat_reg.item()
        assert vat_loss.item() == rat_loss.item()

    def test_theta_gradients_flow(self):
        model, x_l, y, x_u = self._setup(3)
        cfg = MethodConfig(method="vat", lambda_max=0.3, entropy_weight=0.06)
        loss, _ = vat_objective(model, x_l, y, x_u, 0.5, 0, cfg, AdvConfig(),
                                np.random.default_rng(2))
        gs = grad(loss, model.params)
        assert all(np.isfinite(g).all() for g in gs)
        assert any(np.abs(g).max() > 0 for g in gs)


class TestRatObjective:
    def test_identity_params_contribute_zero(self):
        rng = np.random.default_rng(4)
        model = MlpModel(2, 2, rng=4)
        x_l, y = rng.normal(size=(4, 2)), np.array([0, 1, 0, 1])
        x_u = rng.normal(size=(6, 2))
        spec = TransformSpec("noise", 1.0, (2,))
        cfg = MethodConfig(method="rat", lambda_max=0.3, entropy_weight=0.0)
        loss, reg = rat_objective(
            model, x_l, y, x_u, [spec], [RampSchedule(1.0, 0)], 0, cfg, AdvConfig(),
            np.random.default_rng(0), params=[identity_params(spec, 6)],
        )
        assert reg.item() == 0.0
        assert loss.item() == supervised_loss(model, x_l, y).item()

    def test_stored_params_receive_no_theta_gradient(self):
        # generated parameters are plain arrays: not recorded on the tape
        rng = np.random.default_rng(5)
        model = MlpModel(2, 2, rng=5)
        x_u = rng.normal(size=(5, 2))
        spec = TransformSpec("noise", 1.0, (2,))
        cfg = MethodConfig(method="rat", lambda_max=0.3)
        loss, _ = rat_objective(
            model, rng.normal(size=(4, 2)), [0, 1, 0, 1], x_u,
            [spec], [RampSchedule(1.0, 0)], 0, cfg, AdvConfig(),
            np.random.default_rng(1),
        )
        grad(loss, model.params)  # succeeds: only theta leaves are recorded


class TestPiModel:
    def test_degenerate_augmentation_gives_zero(self):
        model = MlpModel(2, 2, rng=0)
        x_u = np.random.default_rng(0).normal(size=(5, 2))
        loss = pi_model_loss(model, x_u, lambda x, rng: x, np.random.default_rng(0))
        assert loss.item() == 0.0

    def test_constant_model_gives_zero(self):
        model = StubModel(_log_probs([[0.4, 0.6]] * 5))
        augment = lambda x, rng: x + rng.normal(size=x.shape)
        loss = pi_model_loss(model, np.zeros((5, 2)), augment,
                             np.random.default_rng(1))
        assert loss.item() == 0.0

    def test_nonnegative(self):
        model = MlpModel(2, 2, rng=1)
        x_u = np.random.default_rng(2).normal(size=(8, 2))
        augment = lambda x, rng: x + 0.3 * rng.normal(size=x.shape)
        loss = pi_model_loss(model, x_u, augment, np.random.default_rng(3))
        assert loss.item() >= 0.0


class TestPseudoLabel:
    def test_all_below_threshold_gives_zero(self):
        model = StubModel(_log_probs([[0.6, 0.4], [0.5, 0.5]]))
        assert pseudo_label_loss(model, np.zeros((2, 2)), 0.95).item() == 0.0

    def test_fully_confident_sample_contributes_near_zero(self):
        model = StubModel(_log_probs([[1.0 - 1e-15, 1e-15]]))
        assert pseudo_label_loss(model, np.zeros((1, 2)), 0.95).item() <= 1e-12

    def test_masked_mean_matches_hand_computation(self):
        probs = np.array(
            [[0.97, 0.03], [0.40, 0.60], [0.10, 0.90], [0.96, 0.04]]
        )
        model = StubModel(np.log(probs))
        # samples 0, 3 pass a 0.95 threshold; 2 fails it; mean over all 4
        expected = -(math.log(0.97) + math.log(0.96)) / 4.0
        got = pseudo_label_loss(model, np.zeros((4, 2)), 0.95).item()
        assert abs(got - expected) <= 1e-12

    def test_threshold_validation(self):
        model = StubModel(_log_probs([[0.5, 0.5]]))
        with pytest.raises(ValueError):
            pseudo_label_loss(model, np.zeros((1, 2)), 1.5)


class TestMeanTeacher:
    def test_zero_decay_copies_student(self):
        student = MlpModel(2, 2, rng=0)
        teacher = MlpModel(2, 2, rng=1)
        _, updated = mean_teacher_step(student, teacher, np.zeros((2, 2)), 0.0)
        for sp, up in zip(student.params, updated.params):
            assert np.array_equal(sp.data, up.data)

    def test_equal_models_have_zero_consistency(self):
        student = MlpModel(2, 2, rng=0)
        teacher = student.with_params(student.param_arrays())
        consistency, _ = mean_teacher_step(
            student, teacher, np.random.default_rng(0).normal(size=(4, 2)), 0.95
        )
        assert consistency.item() == 0.0

    def test_frozen_student_geometric_convergence(self):
        student = MlpModel(2, 2, rng=2)
        teacher = MlpModel(2, 2, rng=3)
        decay = 0.9
        gap0 = max(
            np.abs(tp.data - sp.data).max()
            for sp, tp in zip(student.params, teacher.params)
        )
        for k in range(5):
            _, teacher = mean_teacher_step(student, teacher, np.zeros((1, 2)), decay)
        gap = max(
            np.abs(tp.data - sp.data).max()
            for sp, tp in zip(student.params, teacher.params)
        )
        assert gap <= decay**5 * gap0 * (1 + 1e-9)

    def test_structure_mismatch_rejected(self):
        with pytest.raises(ValueError):
            mean_teacher_step(MlpModel(2, 2, rng=0), MlpModel(3, 2, rng=0),
                              np.zeros((1, 2)), 0.5)


class TestRandomTransformBaseline:
    def test_same_norms_as_adversarial(self):
        specs = [TransformSpec("noise", 0.3, (2,))]
        schedules = [RampSchedule(0.3, 100)]
        t = 40
        params = random_transform_params(specs, schedules, t, 9,
                                         np.random.default_rng(0))
        from ratlab.adversarial import rampup_value

        eps = rampup_value(schedules[0], t)
        assert np.abs(param_norm(specs[0], params[0]) - eps).max() <= 1e-9 * eps


class TestProbabilityMse:
    def test_symmetric_zero(self):
        p = Tensor(_log_probs([[0.3, 0.7]]))
        assert probability_mse(p, p).item() == 0.0

    def test_hand_value(self):
        p = Tensor(_log_probs([[1.0, 0.0 + 1e-300]]))
        q = Tensor(_log_probs([[0.5, 0.5]]))
        assert abs(probability_mse(p, q).item() - 0.25) <= 1e-12
