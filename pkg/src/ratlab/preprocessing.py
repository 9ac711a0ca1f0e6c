"""Image preprocessing (GCN, ZCA whitening) and stochastic augmentation."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

__all__ = ["gcn", "ZcaState", "zca_fit", "zca_apply", "augment", "AUGMENT_POLICIES"]

log = logging.getLogger(__name__)

AUGMENT_POLICIES = ("none", "cifar_like", "svhn_like")

_GCN_STD_FLOOR = 1e-8


def gcn(images):
    """Global contrast normalization: per-image zero mean, unit std.

    Accepts a single image or a batch (leading axis). Constant images map to
    zeros (the std floor guards the division) and emit a diagnostic.
    """
    images = np.asarray(images, dtype=np.float64)
    squeeze = images.ndim < 4  # anything below (B, C, H, W) is one image
    batch = images[None] if squeeze else images
    flat = batch.reshape(len(batch), -1)
    mean = flat.mean(axis=1, keepdims=True)
    std = flat.std(axis=1, keepdims=True)
    degenerate = std < _GCN_STD_FLOOR
    if degenerate.any():
        log.warning("gcn: %d constant image(s) mapped to zeros", int(degenerate.sum()))
    out = (flat - mean) / np.maximum(std, _GCN_STD_FLOOR)
    out = out.reshape(batch.shape)
    return out[0] if squeeze else out


@dataclass(frozen=True)
class ZcaState:
    mean: np.ndarray
    whitener: np.ndarray


def zca_fit(images, zeta_fraction=1e-5):
    """Fit ZCA whitening on a flattened image set.

    Eigenvalues are regularized by ``zeta_fraction`` of their mean before
    inversion so near-singular covariances stay invertible.
    """
    images = np.asarray(images, dtype=np.float64)
    flat = images.reshape(len(images), -1)
    if len(flat) < 2:
        raise ValueError("need at least two images to fit ZCA")
    mean = flat.mean(axis=0)
    centered = flat - mean
    cov = centered.T @ centered / len(flat)
    eigvals, eigvecs = np.linalg.eigh(cov)
    zeta = zeta_fraction * eigvals.mean()
    if zeta <= 0:
        raise ValueError("degenerate covariance: all eigenvalues are zero")
    whitener = (eigvecs / np.sqrt(eigvals + zeta)) @ eigvecs.T
    return ZcaState(mean=mean, whitener=whitener)


def zca_apply(state, images):
    """Whiten one image or a batch with a fitted ZCA state."""
    images = np.asarray(images, dtype=np.float64)
    dim = state.mean.size
    if images.size == dim:
        flat = images.reshape(1, dim)
    elif images.ndim >= 2 and images[0].size == dim:
        flat = images.reshape(len(images), dim)
    else:
        raise ValueError(f"image size does not match fitted dimension {dim}")
    out = (flat - state.mean) @ state.whitener
    return out.reshape(images.shape)


def _translate(image, du, dv):
    # integer-pixel shift with border replication; (C, H, W)
    if du == 0 and dv == 0:
        return image
    c, h, w = image.shape
    padded = np.pad(image, ((0, 0), (2, 2), (2, 2)), mode="edge")
    return padded[:, 2 + dv : 2 + dv + h, 2 + du : 2 + du + w]


def augment(images, policy, rng):
    """Stochastic augmentation of a (B, C, H, W) batch or single (C, H, W) image.

    cifar_like: random horizontal flip, translation by up to 2 pixels with
    border replication, Gaussian noise with sigma 0.15. svhn_like: translation
    only. Shapes never change.
    """
    if policy not in AUGMENT_POLICIES:
        raise ValueError(f"unknown augmentation policy '{policy}'")
    images = np.asarray(images, dtype=np.float64)
    if policy == "none":
        return images.copy()
    squeeze = images.ndim == 3
    batch = images[None] if squeeze else images
    out = np.empty_like(batch)
    for i, image in enumerate(batch):
        if policy == "cifar_like" and rng.random() < 0.5:
            image = image[:, :, ::-1]
        du, dv = rng.integers(-2, 3, size=2)
        image = _translate(image, int(du), int(dv))
        if policy == "cifar_like":
            image = image + rng.normal(0.0, 0.15, size=image.shape)
        out[i] = image
    return out[0] if squeeze else out
