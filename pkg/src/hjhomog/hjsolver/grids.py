"""Box solver grids and interpolation of solved fields."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError, DomainError

BOUNDARY_TAGS = ("dirichlet-cone", "frozen-value", "periodic")


@dataclass(frozen=True)
class SolverGrid:
    """Uniform node-centered box grid [center - W, center + W]^d.

    W = half_width must be an integer multiple of the spacing h; each axis
    carries 2*(W/h) + 1 nodes.  ``boundary`` records how the outermost node
    layer is treated by the solver that owns the field.
    """

    center: tuple[float, ...]
    half_width: float
    h: float
    boundary: str = "dirichlet-cone"

    def __post_init__(self):
        if self.boundary not in BOUNDARY_TAGS:
            raise ConfigurationError(f"unknown boundary tag {self.boundary!r}")
        if self.h <= 0 or self.half_width <= 0:
            raise ConfigurationError("half_width and h must be positive")
        m = self.half_width / self.h
        if abs(m - round(m)) > 1e-9 * max(1.0, m):
            raise ConfigurationError("half_width must be an integer multiple of h")

    @property
    def d(self) -> int:
        return len(self.center)

    @property
    def n_half(self) -> int:
        return int(round(self.half_width / self.h))

    @property
    def n_side(self) -> int:
        return 2 * self.n_half + 1

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n_side,) * self.d

    def axis_coords(self, ax: int) -> np.ndarray:
        return self.center[ax] + (np.arange(self.n_side) - self.n_half) * self.h

    def node_points(self) -> np.ndarray:
        """All node coordinates, shape self.shape + (d,)."""
        mesh = np.meshgrid(*[self.axis_coords(ax) for ax in range(self.d)], indexing="ij")
        return np.stack(mesh, axis=-1)

    def contains(self, pts: np.ndarray, pad: float = 0.0) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        lo = np.array(self.center) - self.half_width + pad
        hi = np.array(self.center) + self.half_width - pad
        return np.all((pts >= lo - 1e-12) & (pts <= hi + 1e-12), axis=-1)

    def interp(self, values: np.ndarray, pts: np.ndarray) -> np.ndarray:
        """Multilinear interpolation of a node field at points inside the box."""
        pts = np.asarray(pts, dtype=float)
        scalar = pts.ndim == 1
        p2 = pts.reshape(-1, self.d)
        if not np.all(self.contains(p2)):
            raise DomainError("interpolation point outside the solver box")
        u = (p2 - (np.array(self.center) - self.half_width)) / self.h
        u = np.clip(u, 0.0, self.n_side - 1.0)
        i0 = np.minimum(np.floor(u).astype(np.int64), self.n_side - 2)
        frac = u - i0
        out = np.zeros(p2.shape[0])
        for corner in itertools.product((0, 1), repeat=self.d):
            wgt = np.ones(p2.shape[0])
            idx = []
            for ax, c in enumerate(corner):
                wgt = wgt * (frac[:, ax] if c else 1.0 - frac[:, ax])
                idx.append(i0[:, ax] + c)
            out += wgt * values[tuple(idx)]
        if scalar:
            return float(out[0])
        return out.reshape(pts.shape[:-1])

    def ball_node_mask(self, center: np.ndarray, radius: float) -> np.ndarray:
        pts = self.node_points()
        dist2 = np.sum((pts - np.asarray(center)) ** 2, axis=-1)
        return dist2 <= radius**2 + 1e-12
