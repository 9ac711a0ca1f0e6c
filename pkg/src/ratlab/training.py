"""Adam optimization, schedules, the training loop and evaluation."""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .autograd import NonFiniteError, Tensor, grad
from .adversarial import RampSchedule, random_transform_params
from .data import load_image_dataset, make_moons
from .models import MlpModel
from .objectives import (
    MethodConfig,
    entropy_term,
    lambda_schedule,
    mean_teacher_step,
    pi_model_loss,
    pseudo_label_loss,
    rat_objective,
    supervised_loss,
    vat_objective,
)
from .preprocessing import augment, gcn, zca_apply, zca_fit
from .tensor_io import read_tensors
from .transforms import bind_rotation_centers

__all__ = [
    "AdamState",
    "adam_init",
    "adam_step",
    "lr_schedule",
    "MetricPoint",
    "RunMetrics",
    "TrainingDiverged",
    "train",
    "run_trials",
    "evaluate",
    "export_boundary",
    "trial_summary",
]

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """The loss went non-finite; the run is aborted, never clamped."""


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    stability: float = 1e-8


def adam_init(params):
    return AdamState(
        m=[np.zeros_like(p.data) for p in params],
        v=[np.zeros_like(p.data) for p in params],
    )


def adam_step(state, params, grads, lr):
    """Bias-corrected Adam update; returns (new parameter arrays, new state)."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("parameter/gradient structure mismatch")
    step = state.step + 1
    new_m, new_v, out = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.data.shape != g.shape:
            raise ValueError("parameter/gradient shape mismatch")
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        m_hat = m / (1.0 - state.beta1**step)
        v_hat = v / (1.0 - state.beta2**step)
        out.append(p.data - lr * m_hat / (np.sqrt(v_hat) + state.stability))
        new_m.append(m)
        new_v.append(v)
    return out, AdamState(new_m, new_v, step, state.beta1, state.beta2,
                          state.stability)


def lr_schedule(base_lr, t, total, factor=0.2, fraction=0.8):
    """Constant learning rate, decayed once by ``factor`` at fraction of total."""
    if t < 0:
        raise ValueError("iteration must be nonnegative")
    return base_lr if t < fraction * total else base_lr * factor


def evaluate(model, x, y):
    """Fraction of argmax mispredictions."""
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("cannot evaluate an empty split")
    return float(np.mean(model.predict(x) != y))


def export_boundary(model, bounds, resolution):
    """Confidence map of a 2-D model on a grid.

    Returns (resolution^2, 4) rows of (x1, x2, argmax class, max probability),
    row-major over the grid.
    """
    if model.in_dim != 2:
        raise ValueError("boundary export needs a 2-D input model")
    x_min, x_max, y_min, y_max = bounds
    xs = np.linspace(x_min, x_max, resolution)
    ys = np.linspace(y_min, y_max, resolution)
    rows = []
    for y in ys:
        points = np.stack([xs, np.full(resolution, y)], axis=1)
        probs = model.predict_proba(points)
        rows.append(
            np.stack(
                [xs, np.full(resolution, y), probs.argmax(axis=1).astype(np.float64),
                 probs.max(axis=1)],
                axis=1,
            )
        )
    return np.concatenate(rows, axis=0)


@dataclass
class MetricPoint:
    iteration: int
    train_loss: float
    reg_value: float
    val_error: float
    test_error: float


@dataclass
class RunMetrics:
    seed: int
    points: list
    selected_iteration: int
    selected_val_error: float
    selected_test_error: float
    selected_params: list
    wall_clock_seconds: float = field(default=0.0, compare=False)


def _load_dataset(cfg, seed):
    if cfg.kind == "moons":
        return make_moons(
            cfg.n_labeled_per_class,
            cfg.n_unlabeled_per_class,
            geometry=cfg.geometry(),
            seed=seed,
            n_validation_per_class=cfg.n_validation_per_class,
            n_test_per_class=cfg.n_test_per_class,
        )
    arrays = read_tensors(cfg.x_path)
    if len(arrays) != 1:
        raise ValueError(f"{cfg.x_path}: expected one image tensor")
    labels = read_tensors(cfg.y_path)
    if len(labels) != 1:
        raise ValueError(f"{cfg.y_path}: expected one label tensor")
    x = arrays[0]
    if x.shape[1:] != cfg.input_shape:
        raise ValueError(
            f"image tensor shape {x.shape[1:]} does not match configured "
            f"{cfg.input_shape}"
        )
    split = load_image_dataset(
        x, labels[0].astype(np.int64), cfg.n_labeled, cfg.n_validation,
        cfg.n_test, seed,
    )
    if "gcn" in cfg.preprocessing:
        for name in ("labeled_x", "unlabeled_x", "validation_x", "test_x"):
            setattr(split, name, gcn(getattr(split, name)))
    if "zca" in cfg.preprocessing:
        fit_pool = np.concatenate([split.labeled_x, split.unlabeled_x])
        state = zca_fit(fit_pool)
        for name in ("labeled_x", "unlabeled_x", "validation_x", "test_x"):
            setattr(split, name, zca_apply(state, getattr(split, name)))
    return split


def _flatten_images(x):
    return x.reshape(len(x), -1)


class _Trial:
    """One training run: binds the dataset, model, method and schedules."""

    def __init__(self, config, seed, split=None):
        self.config = config
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.split = split if split is not None else _load_dataset(config.dataset, seed)
        self.is_image = config.dataset.kind == "image"
        self.n_classes = self.split.n_classes
        in_dim = int(np.prod(self.split.input_shape))
        self.model = MlpModel(in_dim, self.n_classes, rng=self.rng)
        self.teacher = (
            self.model.with_params(self.model.param_arrays())
            if config.method.method == "mean_teacher"
            else None
        )
        self.composite = tuple(
            bind_rotation_centers(spec, self.split.unlabeled_y)
            if spec.family == "rotation"
            else spec
            for spec in config.transforms
        )
        horizon = config.adversarial.rampup_horizon
        self.schedules = [
            RampSchedule(spec.epsilon_max, horizon) for spec in self.composite
        ]
        if config.method.method in ("rat", "random_transform", "vat"):
            if not self.composite:
                raise ValueError(f"{config.method.method} needs transform sections")
        if any(s.family == "rotation" for s in self.composite) and (
            config.training.batch_unlabeled
        ):
            raise ValueError(
                "the class-wise rotation transform requires full-batch unlabeled "
                "training (per-sample centers are bound to the unlabeled set)"
            )

    def _batch(self, x, y, size):
        if size <= 0 or size >= len(x):
            return x, y
        idx = self.rng.integers(0, len(x), size=size)
        return x[idx], None if y is None else y[idx]

    def _stochastic_augment(self):
        policy = self.config.dataset.augment_policy
        if self.is_image and policy != "none":
            return lambda x, rng: augment(x, policy, rng)
        sigma = self.config.dataset.augment_sigma
        return lambda x, rng: x + sigma * rng.standard_normal(x.shape)

    def _model_input(self, x):
        return _flatten_images(x) if self.is_image else x

    def _apply_policy(self, x):
        if self.is_image and self.config.dataset.augment_policy != "none":
            return augment(x, self.config.dataset.augment_policy, self.rng)
        return x

    def _step_loss(self, t, x_l, y_l, x_u):
        cfg = self.config
        mcfg = cfg.method
        method = mcfg.method
        model = self.model
        x_l_in = self._model_input(x_l)
        x_u_in = self._model_input(x_u)

        if method == "supervised":
            loss = supervised_loss(model, x_l_in, y_l)
            if mcfg.entropy_weight:
                loss = loss + mcfg.entropy_weight * entropy_term(model, x_u_in)
            return loss, 0.0

        if method == "vat":
            eps_schedule = self.schedules[0]
            loss, reg = vat_objective(
                model, x_l_in, y_l, x_u_in, eps_schedule.max_value, t, mcfg,
                cfg.adversarial, self.rng, eps_schedule=eps_schedule,
            )
            return loss, reg.item()

        if method in ("rat", "random_transform"):
            # transforms act on the natural shape; the MLP sees flat inputs,
            # so wrap the model when images are in play
            target = model if not self.is_image else _FlatteningModel(model)
            params = None
            if method == "random_transform":
                params = random_transform_params(
                    self.composite, self.schedules, t, len(x_u), self.rng
                )
            loss, reg = rat_objective(
                target, x_l if self.is_image else x_l_in, y_l,
                x_u if self.is_image else x_u_in,
                list(self.composite), self.schedules, t, mcfg, cfg.adversarial,
                self.rng, params=params,
            )
            return loss, reg.item()

        if method == "pi_model":
            consistency = pi_model_loss(
                _FlatteningModel(model) if self.is_image else model,
                x_u, self._stochastic_augment(), self.rng,
            )
            loss = supervised_loss(model, x_l_in, y_l)
            loss = loss + lambda_schedule(mcfg, t) * consistency
            return loss, consistency.item()

        if method == "pseudo_label":
            consistency = pseudo_label_loss(model, x_u_in, mcfg.pseudo_label_threshold)
            loss = supervised_loss(model, x_l_in, y_l)
            loss = loss + lambda_schedule(mcfg, t) * consistency
            return loss, consistency.item()

        if method == "mean_teacher":
            consistency, self.teacher = mean_teacher_step(
                model, self.teacher, x_u_in, mcfg.ema_decay
            )
            loss = supervised_loss(model, x_l_in, y_l)
            loss = loss + lambda_schedule(mcfg, t) * consistency
            return loss, consistency.item()

        raise ValueError(f"unknown method '{method}'")

    def run(self):
        cfg = self.config
        total = cfg.training.iterations
        cadence = cfg.training.eval_every or max(total // 20, 1)
        opt = adam_init(self.model.params)
        points = []
        best = None  # (val_error, iteration, test_error, params)
        started = time.perf_counter()

        val_x = self._model_input(self.split.validation_x)
        test_x = self._model_input(self.split.test_x)

        for t in range(total):
            x_l, y_l = self._batch(
                self.split.labeled_x, self.split.labeled_y,
                cfg.training.batch_labeled,
            )
            x_u, _ = self._batch(
                self.split.unlabeled_x, None, cfg.training.batch_unlabeled
            )
            x_l = self._apply_policy(x_l)
            x_u = self._apply_policy(x_u)
            try:
                loss, reg_value = self._step_loss(t, x_l, y_l, x_u)
                grads = grad(loss, self.model.params)
            except NonFiniteError as exc:
                raise TrainingDiverged(
                    f"non-finite loss at iteration {t} (seed {self.seed}): {exc}"
                ) from exc
            lr = lr_schedule(
                cfg.training.base_lr, t, total,
                cfg.training.lr_decay_factor, cfg.training.lr_decay_fraction,
            )
            arrays, opt = adam_step(opt, self.model.params, grads, lr)
            self.model = self.model.with_params(arrays)

            if (t + 1) % cadence == 0 or t + 1 == total:
                val_error = evaluate(self.model, val_x, self.split.validation_y)
                test_error = evaluate(self.model, test_x, self.split.test_y)
                points.append(
                    MetricPoint(t + 1, loss.item(), reg_value, val_error, test_error)
                )
                if best is None or val_error < best[0]:
                    best = (val_error, t + 1, test_error, self.model.param_arrays())

        return RunMetrics(
            seed=self.seed,
            points=points,
            selected_iteration=best[1],
            selected_val_error=best[0],
            selected_test_error=best[2],
            selected_params=best[3],
            wall_clock_seconds=time.perf_counter() - started,
        )


class _FlatteningModel:
    """Adapter feeding image-shaped tensors to the flat-input MLP."""

    def __init__(self, model):
        self.model = model

    def log_prob(self, x):
        xt = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
        return self.model.log_prob(xt.reshape(xt.data.shape[0], -1))


def train(config, seed, split=None):
    """Run one trial; deterministic for a given (config, seed).

    ``split`` overrides the configured dataset with a pre-built DatasetSplit.
    """
    return _Trial(config, seed, split=split).run()


def _thread_count(n_trials):
    raw = os.environ.get("RAT_LAB_THREADS", "1")
    try:
        threads = max(int(raw), 1)
    except ValueError:
        log.warning("ignoring invalid RAT_LAB_THREADS=%r", raw)
        threads = 1
    return min(threads, n_trials)


def run_trials(config):
    """Run every configured seed; returns the RunMetrics list, seed-ordered."""
    seeds = list(config.seeds)
    threads = _thread_count(len(seeds))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda s: train(config, s), seeds))
    return [train(config, s) for s in seeds]


def trial_summary(config, runs):
    """Deterministic key/value summary: mean and std of error over trials."""
    test_errors = np.array([r.selected_test_error for r in runs])
    val_errors = np.array([r.selected_val_error for r in runs])
    lines = [
        ("method", config.method.method),
        ("dataset", config.dataset.kind),
        ("trials", len(runs)),
        ("seeds", ",".join(str(r.seed) for r in runs)),
        ("mean_test_error", repr(float(test_errors.mean()))),
        ("std_test_error", repr(float(test_errors.std()))),
        ("mean_val_error", repr(float(val_errors.mean()))),
        ("std_val_error", repr(float(val_errors.std()))),
    ]
    for run in runs:
        lines.append((f"trial_seed_{run.seed}_test_error",
                      repr(run.selected_test_error)))
        lines.append((f"trial_seed_{run.seed}_val_error",
                      repr(run.selected_val_error)))
        lines.append((f"trial_seed_{run.seed}_selected_iteration",
                      run.selected_iteration))
    return lines
