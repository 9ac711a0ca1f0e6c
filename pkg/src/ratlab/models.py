"""Small MLP classifier used for all desk-scale experiments."""

from __future__ import annotations

import numpy as np

from .autograd import Tensor, log_softmax

__all__ = ["MlpModel", "mlp_forward"]


class MlpModel:
    """Three affine layers with ReLU between, 128-unit hidden width by default.

    Parameters are leaf tensors; every update swaps in fresh leaves rather
    than mutating, so snapshots and teacher copies can share arrays safely.
    """

    def __init__(self, in_dim, n_classes, hidden=128, rng=None):
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        self.in_dim = int(in_dim)
        self.n_classes = int(n_classes)
        self.hidden = int(hidden)
        sizes = [self.in_dim, self.hidden, self.hidden, self.n_classes]
        params = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            params.append(Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)),
                                 requires_grad=True))
            params.append(Tensor(np.zeros(fan_out), requires_grad=True))
        self.params = params

    @classmethod
    def from_arrays(cls, arrays):
        """Rebuild a model from its six parameter arrays (W1,b1,W2,b2,W3,b3)."""
        arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
        if len(arrays) != 6 or any(a.ndim != d for a, d in zip(arrays, [2, 1] * 3)):
            raise ValueError("expected six parameter arrays: W1,b1,W2,b2,W3,b3")
        model = cls.__new__(cls)
        model.in_dim = arrays[0].shape[0]
        model.hidden = arrays[0].shape[1]
        model.n_classes = arrays[4].shape[1]
        model.params = [Tensor(a, requires_grad=True) for a in arrays]
        return model

    def with_params(self, arrays):
        """A new model sharing architecture but holding fresh leaf parameters."""
        return MlpModel.from_arrays(arrays)

    def param_arrays(self):
        return [p.data.copy() for p in self.params]

    def logits(self, x):
        xt = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
        if xt.data.ndim != 2 or xt.data.shape[1] != self.in_dim:
            raise ValueError(
                f"expected input (batch, {self.in_dim}), got {xt.data.shape}"
            )
        w1, b1, w2, b2, w3, b3 = self.params
        h = (xt @ w1 + b1).relu()
        h = (h @ w2 + b2).relu()
        return h @ w3 + b3

    def log_prob(self, x):
        return log_softmax(self.logits(x))

    def predict_proba(self, x):
        return np.exp(self.log_prob(x).data)

    def predict(self, x):
        return np.argmax(self.logits(x).data, axis=1)


def mlp_forward(model, x):
    """Logits of the classifier; batch x classes."""
    return model.logits(x)
