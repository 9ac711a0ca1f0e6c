"""Parameterized, identity-anchored, norm-bounded data transformations.

Every family is parameterized as a deviation from the identity: the zero
vector is the identity parameter and the family norm of the identity is 0.
All spatial quantities live in normalized coordinates [-1, 1]^2 with pixel
centers at (2k+1)/n - 1, so epsilon bounds are resolution independent
(one pixel = 2/n). Parameters carry a leading batch axis: each sample in a
batch gets its own parameter vector and its own norm.

Families:
  noise     x + phi                              (L2 norm)
  affine    grid warp by (I+A) p + t, phi=(A,t)  (operator norm of [A|t])
  tps       thin-plate-spline control offsets    (L2 norm)
  flow      dense per-pixel offsets              (L2 norm)
  channel   x_c * (1 + delta_c)                  (operator norm = max |delta_c|)
  rotation  2-D rotation about per-class centers (L2 norm of the angle, degrees)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .autograd import Tensor, concat

__all__ = [
    "TransformSpec",
    "TransformParams",
    "GeometryError",
    "identity_params",
    "apply",
    "compose",
    "param_norm",
    "normalize_to",
    "bilinear_sample",
    "identity_grid",
    "bind_rotation_centers",
]

FAMILIES = ("noise", "affine", "tps", "flow", "channel", "rotation")
OPERATOR_NORM_FAMILIES = ("affine", "channel")
SPATIAL_FAMILIES = ("affine", "tps", "flow")


class GeometryError(ValueError):
    """Input shape does not match the transform's configured geometry."""


@dataclass(frozen=True)
class TransformSpec:
    """One transformation family with its geometry and norm bound.

    ``shape`` is the per-sample input shape: (C, H, W) for image families,
    (2,) for rotation, any shape for noise. ``class_centers`` (rotation only)
    holds one rotation center per class; ``sample_centers`` is the per-sample
    binding produced by :func:`bind_rotation_centers` and is excluded from
    equality and serialization.
    """

    family: str
    epsilon_max: float
    shape: tuple
    grid_size: int = 4
    class_centers: tuple | None = None
    sample_centers: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown transform family '{self.family}'")
        if not self.epsilon_max > 0:
            raise ValueError("epsilon_max must be positive")
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        if self.family in SPATIAL_FAMILIES or self.family == "channel":
            if len(self.shape) != 3:
                raise GeometryError(f"{self.family} expects a (C, H, W) shape")
        if self.family == "rotation":
            if self.shape != (2,):
                raise GeometryError("rotation operates on 2-D points")
            if self.class_centers is None:
                raise ValueError("rotation requires class_centers")
            object.__setattr__(
                self,
                "class_centers",
                tuple(tuple(float(v) for v in c) for c in self.class_centers),
            )
        if self.family == "tps" and self.grid_size < 2:
            raise ValueError("tps needs a control grid of at least 2x2")

    @property
    def norm_kind(self):
        return "operator" if self.family in OPERATOR_NORM_FAMILIES else "l2"

    @property
    def param_dim(self):
        """Per-sample parameter count (the flat deviation vector length)."""
        if self.family == "noise":
            return int(np.prod(self.shape))
        if self.family == "affine":
            return 6
        if self.family == "tps":
            return 2 * self.grid_size * self.grid_size
        if self.family == "flow":
            _, h, w = self.shape
            return 2 * h * w
        if self.family == "channel":
            return self.shape[0]
        return 1  # rotation angle


@dataclass(frozen=True)
class TransformParams:
    """Per-sample deviation-from-identity parameters, shape (batch, param_dim)."""

    family: str
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("params must be (batch, param_dim)")
        object.__setattr__(self, "values", values)

    @property
    def batch_size(self):
        return self.values.shape[0]


def identity_params(spec, batch_size=1):
    """The parameters that make the transform an exact identity."""
    return TransformParams(spec.family, np.zeros((batch_size, spec.param_dim)))


def bind_rotation_centers(spec, labels):
    """Attach per-sample rotation centers looked up from class labels."""
    if spec.family != "rotation":
        return spec
    centers = np.asarray(spec.class_centers, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min(initial=0) < 0 or labels.max(initial=-1) >= centers.shape[0]:
        raise ValueError("label out of range for configured class centers")
    return replace(spec, sample_centers=centers[labels])


# -- sampling-grid plumbing ------------------------------------------------

_COORD_CACHE = {}
_TPS_CACHE = {}


def _center_coords(n):
    """Normalized pixel-center coordinates: (2k+1)/n - 1 (one pixel = 2/n)."""
    cached = _COORD_CACHE.get(n)
    if cached is not None:
        return cached
    out = (2.0 * np.arange(n) + 1.0) / n - 1.0
    out.flags.writeable = False
    _COORD_CACHE[n] = out
    return out


def identity_grid(height, width):
    """Identity sampling grid (H, W, 2) in normalized coordinates."""
    gx = _center_coords(width)
    gy = _center_coords(height)
    grid = np.empty((height, width, 2))
    grid[..., 0] = gx[None, :]
    grid[..., 1] = gy[:, None]
    return grid


def _tps_kernel(r2):
    # U(r) = r^2 log r^2 with U(0) = 0
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(r2 > 0.0, r2 * np.log(r2), 0.0)


def _control_points(grid_size):
    side = np.linspace(-1.0, 1.0, grid_size)
    cx, cy = np.meshgrid(side, side)
    return np.stack([cx.ravel(), cy.ravel()], axis=1)  # (m, 2)


def _tps_basis(height, width, grid_size):
    """Pixel-wise interpolation weights mapping control offsets to a dense field.

    The thin-plate system is linear in the control-point offsets, so it is
    solved once per geometry for the map M with field = M @ offsets.
    Returns M with shape (H*W, m).
    """
    key = (height, width, grid_size)
    cached = _TPS_CACHE.get(key)
    if cached is not None:
        return cached
    ctrl = _control_points(grid_size)
    m = ctrl.shape[0]
    d2 = ((ctrl[:, None, :] - ctrl[None, :, :]) ** 2).sum(axis=2)
    kernel = _tps_kernel(d2) + 1e-10 * np.eye(m)  # ridge guards singular layouts
    poly = np.concatenate([np.ones((m, 1)), ctrl], axis=1)  # (m, 3)
    system = np.zeros((m + 3, m + 3))
    system[:m, :m] = kernel
    system[:m, m:] = poly
    system[m:, :m] = poly.T
    solve_map = np.linalg.solve(system, np.eye(m + 3)[:, :m])  # (m+3, m)

    grid = identity_grid(height, width).reshape(-1, 2)
    r2 = ((grid[:, None, :] - ctrl[None, :, :]) ** 2).sum(axis=2)
    features = np.concatenate(
        [_tps_kernel(r2), np.ones((grid.shape[0], 1)), grid], axis=1
    )  # (N, m+3)
    basis = features @ solve_map  # (N, m)
    if not np.all(np.isfinite(basis)):
        raise ArithmeticError("thin-plate solve produced non-finite weights")
    basis.flags.writeable = False
    _TPS_CACHE[key] = basis
    return basis


def bilinear_sample(image, grid):
    """Differentiable bilinear sampling of ``image`` at normalized ``grid``.

    ``image`` is (B, C, H, W) or (C, H, W); ``grid`` is (B, H, W, 2) or
    (H, W, 2) with (x, y) in [-1, 1]. Out-of-range coordinates are clamped to
    the border (border replication), where the grid gradient is zero.
    """
    img = image if isinstance(image, Tensor) else Tensor(image)
    grd = grid if isinstance(grid, Tensor) else Tensor(grid)
    squeeze = img.data.ndim == 3
    if squeeze:
        img = img.reshape((1,) + img.data.shape)
    if grd.data.ndim == 3:
        grd = grd.reshape((1,) + grd.data.shape)
    if img.data.ndim != 4 or grd.data.ndim != 4 or grd.data.shape[-1] != 2:
        raise GeometryError("expected image (B,C,H,W) and grid (B,H,W,2)")
    b, c, h, w = img.data.shape
    if grd.data.shape != (b, h, w, 2):
        raise GeometryError(f"grid shape {grd.data.shape} does not match image")

    # Pixel coordinates are reconstructed relative to the stored center
    # coordinates: px = k + (g - center_k) * (w/2). At the identity grid the
    # difference is exactly zero, so identity sampling is bit-exact.
    px_raw = np.arange(w)[None, None, :] + (
        grd.data[..., 0] - _center_coords(w)[None, None, :]
    ) * (w / 2.0)
    py_raw = np.arange(h)[None, :, None] + (
        grd.data[..., 1] - _center_coords(h)[None, :, None]
    ) * (h / 2.0)
    px = np.clip(px_raw, 0.0, w - 1.0)
    py = np.clip(py_raw, 0.0, h - 1.0)
    x0 = np.floor(px).astype(np.int64)
    y0 = np.floor(py).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = (px - x0)[:, None, :, :]
    wy = (py - y0)[:, None, :, :]

    bi = np.arange(b)[:, None, None, None]
    ci = np.arange(c)[None, :, None, None]
    x0b, x1b = x0[:, None, :, :], x1[:, None, :, :]
    y0b, y1b = y0[:, None, :, :], y1[:, None, :, :]
    v00 = img.data[bi, ci, y0b, x0b]
    v01 = img.data[bi, ci, y0b, x1b]
    v10 = img.data[bi, ci, y1b, x0b]
    v11 = img.data[bi, ci, y1b, x1b]
    top = v00 + wx * (v01 - v00)
    bottom = v10 + wx * (v11 - v10)
    out_data = top + wy * (bottom - top)

    # clamp saturates the coordinate, so its gradient vanishes there
    maskx = ((px_raw >= 0.0) & (px_raw <= w - 1.0)).astype(np.float64)
    masky = ((py_raw >= 0.0) & (py_raw <= h - 1.0)).astype(np.float64)

    def vjp(g):
        dimg = np.zeros((b, c, h, w))
        np.add.at(dimg, (bi, ci, y0b, x0b), g * (1.0 - wx) * (1.0 - wy))
        np.add.at(dimg, (bi, ci, y0b, x1b), g * wx * (1.0 - wy))
        np.add.at(dimg, (bi, ci, y1b, x0b), g * (1.0 - wx) * wy)
        np.add.at(dimg, (bi, ci, y1b, x1b), g * wx * wy)

        dpx = (g * ((v01 - v00) * (1.0 - wy) + (v11 - v10) * wy)).sum(axis=1)
        dpy = (g * (bottom - top)).sum(axis=1)
        dgrid = np.empty((b, h, w, 2))
        dgrid[..., 0] = dpx * maskx * (w / 2.0)
        dgrid[..., 1] = dpy * masky * (h / 2.0)
        return dimg, dgrid

    out = Tensor._from_op(out_data, (img, grd), vjp)
    if squeeze:
        out = out.reshape(out.data.shape[1:])
    return out


# -- family application ------------------------------------------------------


def _values_tensor(params):
    if isinstance(params, TransformParams):
        return Tensor(params.values)
    if isinstance(params, Tensor):
        return params
    return Tensor(np.asarray(params, dtype=np.float64))


def _check_geometry(spec, x_data, batch):
    if x_data.shape != (batch,) + spec.shape:
        raise GeometryError(
            f"input shape {x_data.shape} does not match {spec.family} geometry "
            f"(batch, {', '.join(map(str, spec.shape))})"
        )


def apply(spec, params, x):
    """Apply one transform family; differentiable with respect to ``params``.

    ``params`` may be a TransformParams, an ndarray or a graph Tensor of
    shape (batch, param_dim); ``x`` is (batch, *spec.shape). Returns a Tensor
    of the same shape as ``x``.
    """
    values = _values_tensor(params)
    xt = x if isinstance(x, Tensor) else Tensor(x)
    batch = values.data.shape[0]
    if values.data.shape != (batch, spec.param_dim):
        raise GeometryError(
            f"params shape {values.data.shape} invalid for {spec.family}"
        )
    _check_geometry(spec, xt.data, batch)

    if spec.family == "noise":
        return xt + values.reshape((batch,) + spec.shape)

    if spec.family == "channel":
        c = spec.shape[0]
        weights = values.reshape(batch, c, 1, 1) + 1.0
        return xt * weights

    if spec.family == "rotation":
        if spec.sample_centers is None:
            raise GeometryError(
                "rotation spec has no per-sample centers; bind_rotation_centers first"
            )
        centers = np.asarray(spec.sample_centers, dtype=np.float64)
        if centers.shape != (batch, 2):
            raise GeometryError("sample_centers must match the batch")
        theta = values * (math.pi / 180.0)  # angles configured in degrees
        cos1 = theta.cos() - 1.0  # exactly 0 at the identity angle
        sin = theta.sin()
        rel = xt - centers
        rx, ry = rel[:, 0:1], rel[:, 1:2]
        # x + (R - I) (x - c): keeps the identity bit-exact
        dx = rx * cos1 - ry * sin
        dy = rx * sin + ry * cos1
        return xt + concat([dx, dy], axis=1)

    # spatial families: build normalized offsets, exactly zero at identity
    _, h, w = spec.shape
    base = identity_grid(h, w)[None]  # (1, H, W, 2)

    if spec.family == "flow":
        offsets = values.reshape(batch, h, w, 2)
    elif spec.family == "tps":
        m = spec.grid_size * spec.grid_size
        basis = _tps_basis(h, w, spec.grid_size)  # (H*W, m)
        delta = values.reshape(batch, m, 2)
        offsets = (Tensor(basis) @ delta).reshape(batch, h, w, 2)
    else:  # affine
        mat = values[:, 0:4].reshape(batch, 2, 2)
        trans = values[:, 4:6].reshape(batch, 1, 2)
        points = identity_grid(h, w).reshape(-1, 2)  # (N, 2)
        offsets = (Tensor(points) @ mat.swap_last2() + trans).reshape(batch, h, w, 2)

    return bilinear_sample(xt, offsets + base)


def compose(components, x):
    """Apply (spec, params) pairs in list order: first entry first."""
    out = x if isinstance(x, Tensor) else Tensor(x)
    for spec, params in components:
        out = apply(spec, params, out)
    return out


# -- norms -------------------------------------------------------------------


def _affine_operator_norm(values):
    """Largest singular value of the 2x3 deviation [A|t], per sample.

    Closed form via the eigenvalues of the 2x2 Gram matrix M M^T; the test
    suite checks it against a full SVD.
    """
    m = values.reshape(-1, 2, 3)
    gram = m @ np.swapaxes(m, -1, -2)
    a = gram[:, 0, 0]
    c = gram[:, 1, 1]
    b = gram[:, 0, 1]
    half_tr = 0.5 * (a + c)
    root = np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
    return np.sqrt(np.maximum(half_tr + root, 0.0))


def _affine_rows(values):
    # parameter layout (a11,a12,a21,a22,t1,t2) -> [A|t] rows
    out = np.empty((values.shape[0], 6))
    out[:, 0:2] = values[:, 0:2]
    out[:, 2] = values[:, 4]
    out[:, 3:5] = values[:, 2:4]
    out[:, 5] = values[:, 5]
    return out


def param_norm(spec, params):
    """Per-sample family norm of the deviation, shape (batch,)."""
    values = params.values if isinstance(params, TransformParams) else np.asarray(params)
    if values.ndim != 2 or values.shape[1] != spec.param_dim:
        raise GeometryError(f"params shape {values.shape} invalid for {spec.family}")
    if spec.family == "affine":
        return _affine_operator_norm(_affine_rows(values))
    if spec.family == "channel":
        return np.abs(values).max(axis=1)
    return np.sqrt((values * values).sum(axis=1))


def scale_rows_to(values, norms, eps):
    """Scale each row so its recorded norm becomes ``eps`` (0 gives zeros)."""
    eps = np.asarray(eps, dtype=np.float64)
    if np.any(eps < 0):
        raise ValueError("eps must be nonnegative")
    if np.all(eps == 0.0):
        return np.zeros_like(values)
    if np.any(norms == 0.0):
        raise ValueError("cannot normalize a zero-norm deviation")
    return values * (eps / norms)[:, None]


def normalize_to(spec, params, eps):
    """Rescale the deviation so every sample's family norm equals ``eps``."""
    values = params.values if isinstance(params, TransformParams) else np.asarray(params)
    norms = param_norm(spec, values)
    return TransformParams(spec.family, scale_rows_to(values, norms, eps))
