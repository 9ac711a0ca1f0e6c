"""Loss assembly for the consistency-regularized methods and baselines."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, gather_rows, kl_categorical
from .adversarial import (
    lds_t,
    rampup_value,
    sigmoid_rampup,
    tadv_params,
    vadv_perturbation,
)

__all__ = [
    "MethodConfig",
    "METHODS",
    "supervised_loss",
    "entropy_term",
    "lambda_schedule",
    "vat_objective",
    "rat_objective",
    "pi_model_loss",
    "pseudo_label_loss",
    "mean_teacher_step",
    "probability_mse",
]

METHODS = (
    "supervised",
    "pi_model",
    "pseudo_label",
    "mean_teacher",
    "vat",
    "rat",
    "random_transform",
)


@dataclass(frozen=True)
class MethodConfig:
    """Method selector plus the coefficients shared across methods."""

    method: str = "rat"
    lambda_max: float = 0.3
    lambda_rampup_horizon: int = 0
    entropy_weight: float = 0.0
    pseudo_label_threshold: float = 0.95
    ema_decay: float = 0.95

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method '{self.method}'")
        if self.lambda_max < 0:
            raise ValueError("lambda_max must be nonnegative")
        if not 0.0 <= self.pseudo_label_threshold <= 1.0:
            raise ValueError("pseudo_label_threshold must lie in [0, 1]")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie in [0, 1)")


def lambda_schedule(cfg, t):
    """Consistency coefficient at iteration t (sigmoid rampup to lambda_max)."""
    if t < 0:
        raise ValueError("iteration must be nonnegative")
    return cfg.lambda_max * sigmoid_rampup(t, cfg.lambda_rampup_horizon)


def supervised_loss(model, x_l, y):
    """Mean cross-entropy of labeled data."""
    y = np.asarray(y, dtype=np.int64)
    log_probs = model.log_prob(x_l)
    if y.min(initial=0) < 0 or y.max(initial=-1) >= log_probs.data.shape[1]:
        raise ValueError("label out of range")
    return -gather_rows(log_probs, y).mean()


def entropy_term(model, x_u):
    """Mean prediction entropy -sum_k p log p over the batch."""
    log_probs = model.log_prob(x_u)
    return -(log_probs.exp() * log_probs).sum(axis=1).mean()


def probability_mse(p_log, q_log):
    """Mean squared difference between probability vectors (all entries)."""
    diff = p_log.exp() - q_log.exp()
    return (diff * diff).mean()


def vat_objective(model, x_l, y, x_u, eps, t, method_cfg, adv_cfg, rng,
                  eps_schedule=None, stop_gradient_p=True):
    """Supervised loss plus the virtual adversarial consistency term.

    The perturbation is generated with the current parameter snapshot and
    then held fixed while the theta gradient is taken. Returns
    (objective, regularizer) as graph tensors.
    """
    if eps_schedule is not None:
        eps = rampup_value(eps_schedule, t)
    r = vadv_perturbation(model, x_u, eps, adv_cfg, rng)
    reg = kl_categorical(
        model.log_prob(x_u),
        model.log_prob(np.asarray(x_u) + r),
        stop_gradient_p=stop_gradient_p,
    )
    loss = supervised_loss(model, x_l, y) + lambda_schedule(method_cfg, t) * reg
    if method_cfg.entropy_weight:
        loss = loss + method_cfg.entropy_weight * entropy_term(model, x_u)
    return loss, reg


def rat_objective(model, x_l, y, x_u, composite, schedules, t, method_cfg,
                  adv_cfg, rng, params=None, stop_gradient_p=True):
    """Supervised loss plus the adversarial-transformation consistency term.

    ``composite`` is the ordered TransformSpec list; fresh adversarial
    parameters are generated unless ``params`` pins them (the random-
    transformation baseline passes its own). Returns (objective, regularizer).
    """
    if params is None:
        params = tadv_params(model, x_u, composite, schedules, adv_cfg, t, rng)
    reg = lds_t(model, x_u, list(zip(composite, params)),
                stop_gradient_p=stop_gradient_p)
    loss = supervised_loss(model, x_l, y) + lambda_schedule(method_cfg, t) * reg
    if method_cfg.entropy_weight:
        loss = loss + method_cfg.entropy_weight * entropy_term(model, x_u)
    return loss, reg


def pi_model_loss(model, x_u, stochastic_augment, rng):
    """Consistency between two stochastic augmentations of the same batch.

    The first branch's probabilities act as the target (constant), matching
    the usual one-sided treatment.
    """
    x_u = np.asarray(x_u, dtype=np.float64)
    a = stochastic_augment(x_u, rng)
    b = stochastic_augment(x_u, rng)
    target = Tensor(model.log_prob(a).data)
    return probability_mse(target, model.log_prob(b))


def pseudo_label_loss(model, x_u, threshold):
    """Confidence-masked self-labeling cross-entropy, averaged over the batch.

    The model's own argmax prediction is the (constant) target; samples whose
    max probability falls below the threshold contribute zero, and the mean
    runs over the full batch so the term's scale is mask-independent.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    log_probs = model.log_prob(x_u)
    probs = np.exp(log_probs.data)
    confidence = probs.max(axis=1)
    labels = probs.argmax(axis=1)
    mask = (confidence >= threshold).astype(np.float64)
    picked = gather_rows(log_probs, labels)
    return -(picked * mask).mean()


def mean_teacher_step(student, teacher, x_u, decay):
    """Consistency against the teacher plus the teacher's EMA update.

    Returns (consistency, updated_teacher) where updated_teacher holds
    decay * teacher + (1 - decay) * student per parameter tensor. The
    consistency target is the incoming teacher's prediction (constant).
    """
    if not 0.0 <= decay < 1.0:
        raise ValueError("decay must lie in [0, 1)")
    if len(student.params) != len(teacher.params):
        raise ValueError("student and teacher structures differ")
    target = Tensor(teacher.log_prob(x_u).data)
    consistency = probability_mse(target, student.log_prob(x_u))
    new_arrays = []
    for sp, tp in zip(student.params, teacher.params):
        if sp.data.shape != tp.data.shape:
            raise ValueError("student and teacher structures differ")
        new_arrays.append(decay * tp.data + (1.0 - decay) * sp.data)
    return consistency, teacher.with_params(new_arrays)
