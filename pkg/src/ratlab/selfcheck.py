"""Built-in invariant suites behind the ``selfcheck`` CLI subcommand."""

from __future__ import annotations

import math

import numpy as np

from .adversarial import AdvConfig, RampSchedule, rampup_value, tadv_params, vadv_perturbation
from .autograd import Tensor, grad, kl_categorical, log_softmax
from .models import MlpModel
from .transforms import (
    TransformSpec,
    apply,
    bind_rotation_centers,
    identity_params,
)

__all__ = ["run_selfcheck", "SUITES"]


def _fd_gradient(f, x, h=1e-5):
    g = np.zeros_like(x)
    flat, gflat = x.ravel(), g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


def _grad_close(build, x0, rtol=1e-4):
    leaf = Tensor(x0, requires_grad=True)
    analytic = grad(build(leaf), [leaf])[0]
    numeric = _fd_gradient(lambda arr: build(Tensor(arr)).item(), x0.copy())
    scale = max(np.abs(numeric).max(), 1e-12)
    return np.abs(analytic - numeric).max() / scale <= rtol


def _check_gradients():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4, 3))
    w = rng.normal(size=(3, 5))
    ok = _grad_close(lambda t: ((t @ Tensor(w)).relu() * 0.7).sum(), x)
    logits = rng.normal(size=(4, 5))
    other = rng.normal(size=(4, 5))
    ok &= _grad_close(
        lambda t: kl_categorical(log_softmax(Tensor(logits)), log_softmax(t)), other
    )
    specs = [
        TransformSpec("noise", 1.0, (2, 5, 6)),
        TransformSpec("affine", 1.0, (2, 5, 6)),
        TransformSpec("channel", 1.0, (2, 5, 6)),
    ]
    for spec in specs:
        img = rng.uniform(size=(2,) + spec.shape)
        weights = rng.uniform(-1, 1, size=img.shape)
        p0 = 0.02 * rng.normal(size=(2, spec.param_dim))
        if spec.family == "affine":
            p0[:, 4:] += 1.0 / 6.0  # half-pixel offset away from cell kinks
        ok &= _grad_close(lambda p, s=spec, i=img, w2=weights:
                          (apply(s, p, Tensor(i)) * w2).sum(), p0)
    return ok, "analytic vs central finite differences (rel err 1e-4)"


def _check_vat_rat_equality():
    model = MlpModel(2, 2, rng=5)
    x = np.random.default_rng(1).normal(size=(8, 2))
    spec = TransformSpec("noise", 1.0, (2,))
    cfg = AdvConfig()
    r = vadv_perturbation(model, x, 0.5, cfg, np.random.default_rng(11))
    params = tadv_params(model, x, [spec], [RampSchedule(0.5, 0)], cfg, 0,
                         np.random.default_rng(11))
    return np.array_equal(params[0].values, r), "noise-only composite is bit-identical"


def _check_rampup():
    s = RampSchedule(max_value=2.0, horizon=100)
    ok = rampup_value(s, 100) == 2.0
    ok &= rampup_value(s, 10**9) == 2.0
    ok &= abs(rampup_value(s, 0) - 2.0 * math.exp(-5)) <= 1e-12
    values = [rampup_value(s, t) for t in range(150)]
    ok &= bool((np.diff(values) >= -1e-15).all())
    ok &= rampup_value(RampSchedule(3.0, 0), 7) == 3.0
    return ok, "endpoints exact, monotone, horizon 0 disables"


def _check_transform_identities():
    rng = np.random.default_rng(2)
    specs = [
        TransformSpec("noise", 1.0, (2, 5, 6)),
        TransformSpec("affine", 1.0, (2, 5, 6)),
        TransformSpec("tps", 1.0, (2, 5, 6)),
        TransformSpec("flow", 1.0, (2, 5, 6)),
        TransformSpec("channel", 1.0, (2, 5, 6)),
        bind_rotation_centers(
            TransformSpec("rotation", 10.0, (2,), class_centers=((0, 0), (1, 0.5))),
            [0, 1, 1],
        ),
    ]
    ok = True
    for spec in specs:
        batch = 3
        x = rng.uniform(-1, 2, size=(batch,) + spec.shape)
        out = apply(spec, identity_params(spec, batch), x)
        ok &= np.array_equal(out.data, x)
    return ok, "identity parameters reproduce inputs bit-exactly"


def _check_power_iteration():
    rng = np.random.default_rng(3)
    w = rng.normal(size=(2, 6))
    x = rng.normal(size=(1, 6))
    model_w = w

    class _Linear:
        def log_prob(self, inp):
            t = inp if isinstance(inp, Tensor) else Tensor(inp)
            return log_softmax(t @ Tensor(model_w.T))

    logits = w @ x[0]
    p = np.exp(logits - logits.max())
    p /= p.sum()
    hess = w.T @ (np.diag(p) - np.outer(p, p)) @ w
    dominant = np.linalg.eigh(hess)[1][:, -1]
    model = _Linear()
    r = vadv_perturbation(model, x, 1.0, AdvConfig(power_iterations=50),
                          np.random.default_rng(4))
    direction = r[0] / np.linalg.norm(r[0])
    ok = abs(direction @ dominant) >= 0.999

    d = rng.normal(size=6)
    d /= np.linalg.norm(d)
    xi = 1e-6
    p_log = Tensor(model.log_prob(x).data)
    phi = Tensor((xi * d)[None], requires_grad=True)
    kl = kl_categorical(p_log, model.log_prob(Tensor(x) + phi))
    fd_hv = grad(kl, [phi])[0][0] / xi
    analytic = hess @ d
    ok &= np.abs(fd_hv - analytic).max() / np.abs(analytic).max() <= 1e-6
    return ok, "dominant-eigenvector alignment and finite-difference HVP"


SUITES = [
    ("gradient-checks", _check_gradients),
    ("vat-rat-equality", _check_vat_rat_equality),
    ("rampup-endpoints", _check_rampup),
    ("transform-identities", _check_transform_identities),
    ("power-iteration-oracle", _check_power_iteration),
]


def run_selfcheck(stream=None):
    """Run every invariant suite. Returns the number of failures."""
    import sys

    out = stream or sys.stdout
    failures = 0
    for name, check in SUITES:
        try:
            ok, detail = check()
        except Exception as exc:  # a crash is a failure with context
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        status = "PASS" if ok else "FAIL"
        failures += 0 if ok else 1
        print(f"{status} {name}: {detail}", file=out)
    return failures
