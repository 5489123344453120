"""Tensor-grid functions over projected coordinates."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np


def interp_stencil(axes, points):
    """Multilinear interpolation stencil with clamping to the box.

    Returns flat node indices and weights, both of shape ``(P, 2**d)``;
    weights are nonnegative and sum to one along the last axis.
    """
    points = np.asarray(points, dtype=float)
    d = len(axes)
    pts = points.reshape(-1, d)
    lo_idx, frac = [], []
    for k, ax in enumerate(axes):
        x = np.clip(pts[:, k], ax[0], ax[-1])
        j = np.clip(np.searchsorted(ax, x, side="right") - 1, 0, len(ax) - 2)
        lo_idx.append(j)
        frac.append((x - ax[j]) / (ax[j + 1] - ax[j]))
    shape = tuple(len(ax) for ax in axes)
    strides = np.array([int(np.prod(shape[k + 1:])) for k in range(d)])
    idx = np.empty((pts.shape[0], 2 ** d), dtype=np.int64)
    wts = np.empty((pts.shape[0], 2 ** d))
    for c, corner in enumerate(itertools.product((0, 1), repeat=d)):
        flat = np.zeros(pts.shape[0], dtype=np.int64)
        w = np.ones(pts.shape[0])
        for k, bit in enumerate(corner):
            flat += (lo_idx[k] + bit) * strides[k]
            w *= frac[k] if bit else 1.0 - frac[k]
        idx[:, c] = flat
        wts[:, c] = w
    return idx, wts


@dataclass
class GridFunction:
    """Values (and optionally B-gradients) on a tensor grid.

    ``values`` has shape ``tuple(len(ax) for ax in axes)``;
    ``gradient_values`` appends a trailing ``d_U`` axis.  Evaluation is
    multilinear and clamps points outside the box to the boundary.
    """

    axes: tuple
    values: np.ndarray
    gradient_values: np.ndarray = None
    bound: float = None
    meta: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        self.axes = tuple(np.asarray(ax, dtype=float) for ax in self.axes)
        for ax in self.axes:
            if ax.ndim != 1 or len(ax) < 2 or np.any(np.diff(ax) <= 0):
                raise ValueError("grid axes must be strictly increasing with >= 2 nodes")
        self.values = np.asarray(self.values, dtype=float).reshape(self.shape)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid values must be finite")
        if self.gradient_values is not None:
            g = np.asarray(self.gradient_values, dtype=float)
            self.gradient_values = g.reshape(self.shape + (-1,))
        if self.bound is not None and np.abs(self.values).max() > self.bound * (1 + 1e-12):
            raise ValueError(
                f"grid values exceed declared bound {self.bound}: {np.abs(self.values).max()}")

    @property
    def shape(self):
        return tuple(len(ax) for ax in self.axes)

    @property
    def dim(self):
        return len(self.axes)

    @property
    def size(self):
        return int(np.prod(self.shape))

    def nodes(self):
        """All grid nodes, shape ``(size, dim)`` in C order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def sup_norm(self):
        return float(np.abs(self.values).max())

    def _points(self, points):
        points = np.asarray(points, dtype=float)
        # a bare number is a single point on a 1-d grid
        return points[None] if points.ndim == 0 and self.dim == 1 else points

    def __call__(self, points):
        points = self._points(points)
        lead = points.shape[:-1]
        if self.dim == 1:
            return np.interp(points[..., 0], self.axes[0], self.values)
        idx, w = interp_stencil(self.axes, points)
        return (self.values.ravel()[idx] * w).sum(axis=-1).reshape(lead)

    def gradient(self, points):
        if self.gradient_values is None:
            raise ValueError("grid function carries no gradient grid")
        points = self._points(points)
        lead = points.shape[:-1]
        idx, w = interp_stencil(self.axes, points)
        flat = self.gradient_values.reshape(self.size, -1)
        return np.einsum("pc,pcu->pu", w, flat[idx]).reshape(lead + (flat.shape[1],))

    def with_values(self, values, gradient_values=None):
        return GridFunction(self.axes, values, gradient_values)

    @classmethod
    def from_callable(cls, axes, func):
        """Sample ``func(points)`` (points of shape ``(..., d)``) on the grid."""
        mesh = np.meshgrid(*[np.asarray(a, float) for a in axes], indexing="ij")
        pts = np.stack(mesh, axis=-1)
        return cls(axes, func(pts))


def uniform_axes(half_widths, n_nodes, centers=None):
    half_widths = np.atleast_1d(np.asarray(half_widths, dtype=float))
    n_nodes = np.broadcast_to(np.atleast_1d(n_nodes), half_widths.shape)
    centers = np.zeros_like(half_widths) if centers is None else np.atleast_1d(centers)
    return tuple(np.linspace(c - h, c + h, int(n)) for c, h, n in zip(centers, half_widths, n_nodes))
