"""Generation of adversarial perturbations and transformation parameters.

Both generators follow the same recipe: sample a random unit direction in
parameter space, displace the identity parameters by xi times the direction,
take the gradient of the KL divergence between the clean and displaced
predictions (a finite-difference Hessian-vector product, since the gradient
at the identity is analytically zero), optionally iterate, and normalize the
final gradient so the deviation norm equals the (possibly ramped) epsilon.

The dedicated additive-noise path (virtual adversarial perturbations) and
the transformation path coincide bit-for-bit on a noise-only composite; the
test suite checks this equality explicitly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, grad, kl_categorical
from .transforms import (
    TransformParams,
    apply,
    identity_params,
    param_norm,
    scale_rows_to,
)

__all__ = [
    "AdvConfig",
    "RampSchedule",
    "rampup_value",
    "sigmoid_rampup",
    "vadv_perturbation",
    "tadv_params",
    "random_transform_params",
    "lds_t",
    "identity_gradient_norm",
]

log = logging.getLogger(__name__)

_RESAMPLE_ATTEMPTS = 3


@dataclass(frozen=True)
class AdvConfig:
    """Knobs of the generator: finite-difference step, iterations, rampup."""

    xi: float = 1e-6
    power_iterations: int = 1
    rampup_horizon: int = 0  # iterations; 0 disables ramping

    def __post_init__(self):
        if not self.xi > 0:
            raise ValueError("xi must be positive")
        if self.power_iterations < 1:
            raise ValueError("power_iterations must be at least 1")
        if self.rampup_horizon < 0:
            raise ValueError("rampup_horizon must be nonnegative")


@dataclass(frozen=True)
class RampSchedule:
    """Epsilon schedule: 0 -> max_value along a sigmoid-shaped curve."""

    max_value: float
    horizon: int = 0


def sigmoid_rampup(t, horizon):
    """The Mean-Teacher ramp shape exp(-5 (1-x)^2) with x = min(t/horizon, 1)."""
    if horizon <= 0:
        return 1.0
    x = min(float(t) / float(horizon), 1.0)
    return math.exp(-5.0 * (1.0 - x) ** 2)


def rampup_value(schedule, t):
    """Current epsilon; exactly max_value for t >= horizon."""
    if t < 0:
        raise ValueError("iteration must be nonnegative")
    return schedule.max_value * sigmoid_rampup(t, schedule.horizon)


def _l2_normalize_rows(values):
    norms = np.sqrt((values * values).sum(axis=1))
    return values / norms[:, None], norms


def _sample_unit_directions(spec, batch, rng):
    """Gaussian directions normalized to unit family norm, one per sample."""
    values = rng.standard_normal((batch, spec.param_dim))
    norms = param_norm(spec, values)
    return values / norms[:, None]


def _replace_dead_rows(grads, fallback, norms, context):
    """Rows with an exactly zero gradient keep their random direction."""
    dead = norms == 0.0
    if dead.any():
        log.warning(
            "%s: zero KL gradient for %d/%d sample(s); keeping random direction",
            context,
            int(dead.sum()),
            len(norms),
        )
        grads = grads.copy()
        grads[dead] = fallback[dead]
    return grads


def _power_iterate(grad_rows, dirs, iterations, normalize_rows, resample_rows, context):
    """Shared refinement loop: dirs <- normalize(gradient at xi * dirs).

    ``grad_rows`` maps a direction matrix to the KL gradient rows;
    ``normalize_rows`` returns (unit_rows, norms) under the family norm;
    ``resample_rows`` draws fresh random unit rows for dead samples.
    Returns the final raw gradient rows (dead rows replaced by directions).
    """
    raw = dirs
    for _ in range(iterations):
        raw = grad_rows(dirs)
        norms = normalize_rows(raw)[1]
        for _ in range(_RESAMPLE_ATTEMPTS - 1):
            if not (norms == 0.0).any():
                break
            dead = norms == 0.0
            dirs = dirs.copy()
            dirs[dead] = resample_rows()[dead]
            raw = grad_rows(dirs)
            norms = normalize_rows(raw)[1]
        raw = _replace_dead_rows(raw, dirs, norms, context)
        dirs = normalize_rows(raw)[0]
    return raw


def vadv_perturbation(model, x, eps, cfg, rng):
    """Virtual adversarial perturbation: the additive-noise special case.

    Power iteration with the finite-difference Hessian-vector product; the
    returned array r has per-sample L2 norm eps.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=np.float64)
    batch = x.shape[0]
    dim = int(np.prod(x.shape[1:]))
    p_log = Tensor(model.log_prob(x).data)

    def grad_rows(dirs):
        v = Tensor(dirs, requires_grad=True)
        x_hat = Tensor(x) + (v * cfg.xi).reshape(x.shape)
        kl = kl_categorical(p_log, model.log_prob(x_hat))
        return grad(kl, [v])[0]

    def normalize_rows(values):
        norms = np.sqrt((values * values).sum(axis=1))
        with np.errstate(divide="ignore", invalid="ignore"):
            unit = np.where(norms[:, None] > 0, values / norms[:, None], values)
        return unit, norms

    def resample_rows():
        d = rng.standard_normal((batch, dim))
        return normalize_rows(d)[0]

    dirs = resample_rows()
    raw = _power_iterate(
        grad_rows, dirs, cfg.power_iterations, normalize_rows, resample_rows,
        "vadv_perturbation",
    )
    norms = np.sqrt((raw * raw).sum(axis=1))
    return scale_rows_to(raw, norms, eps).reshape(x.shape)


def tadv_params(model, x, composite, schedules, cfg, t, rng):
    """Adversarial parameters for a composite transformation.

    ``composite`` is an ordered list of TransformSpecs (applied in list
    order); ``schedules`` gives one RampSchedule per component. One KL
    evaluation per power iteration provides the joint gradient for every
    component; each returned deviation is normalized to its component's
    current epsilon. Returns a list of TransformParams.
    """
    if not composite:
        raise ValueError("composite must contain at least one transform")
    if len(schedules) != len(composite):
        raise ValueError("one schedule per composite component")
    x = np.asarray(x, dtype=np.float64)
    batch = x.shape[0]
    p_log = Tensor(model.log_prob(x).data)

    def grad_rows_joint(dir_list):
        leaves = [Tensor(d, requires_grad=True) for d in dir_list]
        x_hat = Tensor(x)
        for spec, v in zip(composite, leaves):
            x_hat = apply(spec, v * cfg.xi, x_hat)
        kl = kl_categorical(p_log, model.log_prob(x_hat))
        return grad(kl, leaves)

    def sample_all():
        return [_sample_unit_directions(spec, batch, rng) for spec in composite]

    dir_list = sample_all()
    raws = dir_list
    for _ in range(cfg.power_iterations):
        raws = grad_rows_joint(dir_list)
        norm_list = [param_norm(spec, r) for spec, r in zip(composite, raws)]
        for _ in range(_RESAMPLE_ATTEMPTS - 1):
            if not any((n == 0.0).any() for n in norm_list):
                break
            fresh = sample_all()
            for i, norms in enumerate(norm_list):
                dead = norms == 0.0
                if dead.any():
                    dir_list[i] = dir_list[i].copy()
                    dir_list[i][dead] = fresh[i][dead]
            raws = grad_rows_joint(dir_list)
            norm_list = [param_norm(spec, r) for spec, r in zip(composite, raws)]
        raws = [
            _replace_dead_rows(r, d, n, f"tadv_params[{spec.family}]")
            for r, d, n, spec in zip(raws, dir_list, norm_list, composite)
        ]
        norm_list = [param_norm(spec, r) for spec, r in zip(composite, raws)]
        dir_list = [r / n[:, None] for r, n in zip(raws, norm_list)]

    out = []
    for spec, schedule, raw in zip(composite, schedules, raws):
        eps = rampup_value(schedule, t)
        norms = param_norm(spec, raw)
        out.append(TransformParams(spec.family, scale_rows_to(raw, norms, eps)))
    return out


def random_transform_params(composite, schedules, t, batch, rng):
    """The non-adversarial counterpart: random directions at the same norms.

    Reuses the adversarial sampling path but skips the gradient refinement,
    so each component's deviation norm still equals its ramped epsilon.
    """
    out = []
    for spec, schedule in zip(composite, schedules):
        dirs = _sample_unit_directions(spec, batch, rng)
        eps = rampup_value(schedule, t)
        norms = param_norm(spec, dirs)
        out.append(TransformParams(spec.family, scale_rows_to(dirs, norms, eps)))
    return out


def lds_t(model, x, composite_with_params, stop_gradient_p=True):
    """KL divergence between predictions on x and on its transformed copy.

    This is the positive quantity maximized by the generator; the objective
    subtracts it via the consistency coefficient. The generated parameters
    are plain arrays, so no gradient can flow into them.
    """
    x = np.asarray(x, dtype=np.float64)
    x_hat = Tensor(x)
    for spec, params in composite_with_params:
        x_hat = apply(spec, params, x_hat)
    return kl_categorical(
        model.log_prob(x), model.log_prob(x_hat), stop_gradient_p=stop_gradient_p
    )


def identity_gradient_norm(model, x, composite, xi=1e-6):
    """Max row norm of the KL gradient at the identity parameters.

    Analytically zero (the KL has its minimum there); this debug check
    verifies the numerical realization stays tiny on real batches.
    """
    x = np.asarray(x, dtype=np.float64)
    batch = x.shape[0]
    p_log = Tensor(model.log_prob(x).data)
    leaves = [
        Tensor(identity_params(spec, batch).values, requires_grad=True)
        for spec in composite
    ]
    x_hat = Tensor(x)
    for spec, v in zip(composite, leaves):
        x_hat = apply(spec, v, x_hat)
    kl = kl_categorical(p_log, model.log_prob(x_hat))
    gs = grad(kl, leaves)
    return max(float(np.abs(g).max(initial=0.0)) for g in gs)
