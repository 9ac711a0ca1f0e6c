"""Synthetic datasets and split handling.

The moons generator samples each class uniformly in angle along its
semicircle and adds isotropic Gaussian noise. The per-class arc centers
double as rotation centers for the class-wise rotation transform, which is
the one place generator-side class knowledge enters (toy experiments only).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .transforms import TransformSpec

__all__ = [
    "MoonsGeometry",
    "DatasetSplit",
    "make_moons",
    "moons_rotation_transform",
    "arc_distance",
    "moons_to_csv",
    "load_image_dataset",
]


@dataclass(frozen=True)
class MoonsGeometry:
    """Two semicircular arcs; upper arc opens downward, lower one upward."""

    centers: tuple = ((0.0, 0.0), (1.0, 0.5))
    radius: float = 1.0
    angle_ranges_deg: tuple = ((0.0, 180.0), (180.0, 360.0))
    noise_sigma: float = 0.1

    def __post_init__(self):
        if len(self.centers) != len(self.angle_ranges_deg):
            raise ValueError("one angular range per class center")
        if len(self.centers) < 2:
            raise ValueError("need at least two classes")
        object.__setattr__(
            self, "centers", tuple(tuple(float(v) for v in c) for c in self.centers)
        )
        object.__setattr__(
            self,
            "angle_ranges_deg",
            tuple(tuple(float(v) for v in r) for r in self.angle_ranges_deg),
        )

    @property
    def n_classes(self):
        return len(self.centers)


@dataclass
class DatasetSplit:
    """Disjoint labeled/unlabeled/validation/test splits.

    ``unlabeled_y`` holds the generator's true classes for the unlabeled
    points. Training methods never see it; it exists so the toy rotation
    transform can be bound to arc centers, and for diagnostics.
    """

    labeled_x: np.ndarray
    labeled_y: np.ndarray
    unlabeled_x: np.ndarray
    unlabeled_y: np.ndarray
    validation_x: np.ndarray
    validation_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    seed: int
    geometry: MoonsGeometry | None = field(default=None)

    @property
    def n_classes(self):
        return int(max(self.labeled_y.max(), self.test_y.max())) + 1

    @property
    def input_shape(self):
        return self.labeled_x.shape[1:]


def _sample_arc(geometry, class_idx, count, sigma, rng):
    lo, hi = geometry.angle_ranges_deg[class_idx]
    theta = np.radians(rng.uniform(lo, hi, size=count))
    cx, cy = geometry.centers[class_idx]
    points = np.stack(
        [cx + geometry.radius * np.cos(theta), cy + geometry.radius * np.sin(theta)],
        axis=1,
    )
    if sigma > 0:
        points = points + rng.normal(0.0, sigma, size=points.shape)
    return points


def _sample_block(geometry, per_class, sigma, rng):
    xs, ys = [], []
    for k in range(geometry.n_classes):
        xs.append(_sample_arc(geometry, k, per_class, sigma, rng))
        ys.append(np.full(per_class, k, dtype=np.int64))
    return np.concatenate(xs), np.concatenate(ys)


def make_moons(
    n_labeled_per_class,
    n_unlabeled_per_class,
    noise_sigma=None,
    geometry=MoonsGeometry(),
    seed=0,
    n_validation_per_class=100,
    n_test_per_class=1000,
):
    """Sample a labeled/unlabeled/validation/test moons split, deterministically."""
    if n_labeled_per_class <= 0 or n_unlabeled_per_class <= 0:
        raise ValueError("per-class counts must be positive")
    sigma = geometry.noise_sigma if noise_sigma is None else float(noise_sigma)
    rng = np.random.default_rng(seed)
    lx, ly = _sample_block(geometry, n_labeled_per_class, sigma, rng)
    ux, uy = _sample_block(geometry, n_unlabeled_per_class, sigma, rng)
    vx, vy = _sample_block(geometry, n_validation_per_class, sigma, rng)
    tx, ty = _sample_block(geometry, n_test_per_class, sigma, rng)
    return DatasetSplit(lx, ly, ux, uy, vx, vy, tx, ty, seed=int(seed), geometry=geometry)


def moons_rotation_transform(geometry, rotation_eps_deg=10.0, noise_eps=0.3):
    """The class-wise composite for the toy: rotation about each arc center,
    then additive noise. Returns an ordered list of (unbound) TransformSpecs."""
    rotation = TransformSpec(
        "rotation", rotation_eps_deg, (2,), class_centers=geometry.centers
    )
    noise = TransformSpec("noise", noise_eps, (2,))
    return [rotation, noise]


def arc_distance(geometry, points, labels):
    """Distance to the circle carrying each point's class arc: | ||p-c|| - r |."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    centers = np.asarray(geometry.centers)[labels]
    radii = np.linalg.norm(points - centers, axis=1)
    return np.abs(radii - geometry.radius)


def moons_to_csv(split, path):
    """Write a split as CSV rows x1,x2,label,split (unlabeled rows get -1)."""
    blocks = [
        (split.labeled_x, split.labeled_y, "labeled"),
        (split.unlabeled_x, np.full(len(split.unlabeled_x), -1), "unlabeled"),
        (split.validation_x, split.validation_y, "validation"),
        (split.test_x, split.test_y, "test"),
    ]
    with open(path, "w") as fh:
        fh.write("x1,x2,label,split\n")
        for xs, ys, name in blocks:
            for (x1, x2), y in zip(xs, ys):
                fh.write(f"{x1!r},{x2!r},{int(y)},{name}\n")


def load_image_dataset(x, y, n_labeled, n_validation, n_test, seed):
    """Split an image array (N, C, H, W) with labels into SSL splits.

    Indices are shuffled deterministically; the remainder after carving out
    test, validation and labeled sets becomes the unlabeled pool.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 4 or len(x) != len(y):
        raise ValueError("expected images (N, C, H, W) with matching labels")
    n = len(x)
    if n_test + n_validation + n_labeled >= n:
        raise ValueError("split sizes exceed the dataset")
    order = np.random.default_rng(seed).permutation(n)
    t_idx = order[:n_test]
    v_idx = order[n_test : n_test + n_validation]
    l_idx = order[n_test + n_validation : n_test + n_validation + n_labeled]
    u_idx = order[n_test + n_validation + n_labeled :]
    return DatasetSplit(
        x[l_idx], y[l_idx], x[u_idx], y[u_idx],
        x[v_idx], y[v_idx], x[t_idx], y[t_idx], seed=int(seed),
    )
