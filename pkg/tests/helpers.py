"""Shared test oracles: central finite differences and gradient comparison."""

import numpy as np

from ratlab.autograd import Tensor, grad


def finite_difference(f, x, h=1e-5):
    """Central-difference gradient of scalar f at ndarray x (64-bit)."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def rel_error(analytic, numeric):
    """Max-norm relative error between two gradient arrays."""
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    scale = max(np.abs(numeric).max(), np.abs(analytic).max(), 1e-12)
    return np.abs(analytic - numeric).max() / scale


def check_gradient(build_loss, x0, rtol=1e-4, h=1e-5):
    """Compare autodiff against finite differences for loss(x) built by ``build_loss``.

    ``build_loss`` maps a leaf Tensor to a scalar Tensor; the finite-difference
    oracle re-evaluates the same function at displaced inputs, independent of
    the backward pass under test.
    """
    leaf = Tensor(x0, requires_grad=True)
    analytic = grad(build_loss(leaf), [leaf])[0]
    numeric = finite_difference(lambda arr: build_loss(Tensor(arr)).item(), x0, h=h)
    err = rel_error(analytic, numeric)
    assert err <= rtol, f"gradient mismatch: rel err {err:.3e} > {rtol}"
    return err
