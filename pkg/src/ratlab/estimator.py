"""Scikit-learn estimator wrapping the semi-supervised trainer.

Follows the sklearn semi-supervised convention: samples labeled -1 in ``y``
are treated as unlabeled. The tabular surface uses the additive-noise
transformation family (the virtual-adversarial special case and its
adversarial-transformation twin); the full transformation zoo is available
through the library API and the experiment CLI.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .adversarial import AdvConfig
from .config import DatasetConfig, ExperimentConfig, TrainingConfig
from .data import DatasetSplit
from .models import MlpModel
from .objectives import METHODS, MethodConfig
from .training import train
from .transforms import TransformSpec

__all__ = ["RatClassifier"]


class RatClassifier(BaseEstimator, ClassifierMixin):
    """Semi-supervised MLP classifier with consistency regularization.

    Parameters
    ----------
    method : one of {"supervised", "pi_model", "pseudo_label", "mean_teacher",
        "vat", "rat", "random_transform"}.
    epsilon : norm bound of the additive-noise transformation.
    lambda_max : maximum consistency coefficient (sigmoid rampup).
    lambda_rampup_fraction : fraction of iterations to ramp the coefficient.
    entropy_weight : weight of the entropy regularizer (vat/rat lineage).
    epsilon_rampup : ramp epsilon from ~0 over 0.8 * iterations.
    xi, power_iterations : finite-difference step and iteration count of the
        adversarial generator.
    iterations, base_lr : optimization budget (the network itself is the
        fixed 128-unit three-layer MLP).
    augment_sigma : Gaussian jitter used as the stochastic augmentation.
    pseudo_label_threshold, ema_decay : baseline-specific coefficients.
    random_state : seed; fitting is deterministic given it.

    Unlabeled samples carry label -1 in ``y`` (sklearn convention). With no
    unlabeled samples, consistency terms run over the labeled inputs.
    """

    def __init__(
        self,
        method="vat",
        epsilon=1.0,
        lambda_max=0.3,
        lambda_rampup_fraction=0.4,
        entropy_weight=0.06,
        epsilon_rampup=False,
        xi=1e-6,
        power_iterations=1,
        iterations=500,
        base_lr=0.003,
        augment_sigma=0.1,
        pseudo_label_threshold=0.95,
        ema_decay=0.95,
        random_state=0,
    ):
        self.method = method
        self.epsilon = epsilon
        self.lambda_max = lambda_max
        self.lambda_rampup_fraction = lambda_rampup_fraction
        self.entropy_weight = entropy_weight
        self.epsilon_rampup = epsilon_rampup
        self.xi = xi
        self.power_iterations = power_iterations
        self.iterations = iterations
        self.base_lr = base_lr
        self.augment_sigma = augment_sigma
        self.pseudo_label_threshold = pseudo_label_threshold
        self.ema_decay = ema_decay
        self.random_state = random_state

    def _build_config(self, n_features):
        if self.method not in METHODS:
            raise ValueError(f"unknown method '{self.method}'")
        needs_transform = self.method in ("vat", "rat", "random_transform")
        transforms = (
            (TransformSpec("noise", self.epsilon, (n_features,)),)
            if needs_transform
            else ()
        )
        entropy = self.entropy_weight if needs_transform else 0.0
        return ExperimentConfig(
            dataset=DatasetConfig(kind="moons", augment_sigma=self.augment_sigma),
            method=MethodConfig(
                method=self.method,
                lambda_max=self.lambda_max,
                lambda_rampup_horizon=round(
                    self.lambda_rampup_fraction * self.iterations
                ),
                entropy_weight=entropy,
                pseudo_label_threshold=self.pseudo_label_threshold,
                ema_decay=self.ema_decay,
            ),
            adversarial=AdvConfig(
                xi=self.xi,
                power_iterations=self.power_iterations,
                rampup_horizon=round(0.8 * self.iterations)
                if self.epsilon_rampup
                else 0,
            ),
            transforms=transforms,
            training=TrainingConfig(
                iterations=self.iterations, base_lr=self.base_lr
            ),
            seeds=(self.random_state,),
        )

    def fit(self, X, y):
        """Fit on labeled rows (y >= 0) and unlabeled rows (y == -1)."""
        X, y = check_X_y(X, y, dtype=np.float64)
        y = y.astype(np.int64)
        labeled = y != -1
        if not labeled.any():
            raise ValueError("need at least one labeled sample (y != -1)")
        self.classes_ = np.unique(y[labeled])
        if len(self.classes_) < 2:
            raise ValueError("need at least two labeled classes")
        encoded = np.searchsorted(self.classes_, y[labeled])
        self.n_features_in_ = X.shape[1]

        x_l = X[labeled]
        x_u = X[~labeled] if (~labeled).any() else X
        split = DatasetSplit(
            labeled_x=x_l,
            labeled_y=encoded,
            unlabeled_x=x_u,
            unlabeled_y=np.full(len(x_u), -1),
            validation_x=x_l,
            validation_y=encoded,
            test_x=x_l,
            test_y=encoded,
            seed=self.random_state,
        )
        config = self._build_config(X.shape[1])
        metrics = train(config, self.random_state, split=split)
        self.model_ = MlpModel.from_arrays(metrics.selected_params)
        self.metrics_ = metrics
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features; expected {self.n_features_in_}"
            )
        return self.model_.predict_proba(X)

    def predict(self, X):
        probs = self.predict_proba(X)
        return self.classes_[np.argmax(probs, axis=1)]
