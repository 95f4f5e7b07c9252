"""Uniform overlay grid covering a simplicial mesh."""
from dataclasses import dataclass
import math
import warnings

import numpy as np

from .errors import DegenerateMesh, GridTooFine, IndexOutOfRange

MAX_GRID_NODES = 2**27
DEFAULT_SAFETY_FACTOR = 1.1


@dataclass(frozen=True)
class OverlayGrid:
    """Nodes ``center + spacing * m`` for multi-indices m in [-N, N]^d.

    Linear indices are lexicographic with the last axis varying fastest.
    """

    dim: int
    center: tuple
    half_width: float
    n: int

    @property
    def spacing(self):
        return self.half_width / self.n

    @property
    def nodes_per_axis(self):
        return 2 * self.n + 1

    @property
    def shape(self):
        return (self.nodes_per_axis,) * self.dim

    @property
    def n_nodes(self):
        return self.nodes_per_axis ** self.dim

    def multi_index(self, linear_index):
        """Multi-index in [-N, N]^d of a linear index (scalar or array)."""
        linear_index = np.asarray(linear_index)
        if np.any((linear_index < 0) | (linear_index >= self.n_nodes)):
            raise IndexOutOfRange(f"linear index out of range [0, {self.n_nodes})")
        return np.stack(np.unravel_index(linear_index, self.shape), axis=-1) - self.n

    def linear_index(self, multi_index):
        m = np.asarray(multi_index)
        if np.any(np.abs(m) > self.n):
            raise IndexOutOfRange(f"multi-index component outside [-{self.n}, {self.n}]")
        return np.ravel_multi_index(tuple(np.moveaxis(m + self.n, -1, 0)), self.shape)

    def node_coordinates(self, linear_index):
        return np.asarray(self.center) + self.spacing * self.multi_index(linear_index)

    def axis_coordinates(self):
        k = np.arange(-self.n, self.n + 1)
        return [c + self.spacing * k for c in self.center]

    def all_nodes(self):
        axes = np.meshgrid(*self.axis_coordinates(), indexing="ij")
        return np.stack([a.ravel() for a in axes], axis=-1)


def target_spacing(a_h, dim, rule="paper_default"):
    """Upper bound on h_FD: ``a_h`` or the rank-guarantee bound a_h/((d+1) sqrt d)."""
    if rule == "paper_default":
        return a_h
    if rule == "strict":
        return a_h / ((dim + 1) * math.sqrt(dim))
    raise ValueError(f"unknown spacing rule {rule!r}")


def build_overlay(stats, bounding_box, rule="paper_default",
                  safety_factor=DEFAULT_SAFETY_FACTOR, max_grid_nodes=MAX_GRID_NODES,
                  spacing=None):
    """Overlay grid for a mesh with statistics ``stats``.

    The cube is centred on the bounding box; its half width is
    ``safety_factor`` times half the bounding-box diagonal. N is rounded up so
    that ``h_FD <= target``. ``spacing`` overrides the rule-based target.
    """
    if not stats.a_h > 0:
        raise DegenerateMesh(f"minimum element height must be positive, got {stats.a_h}")
    lo, hi = (np.asarray(b, dtype=float) for b in bounding_box)
    if np.any(hi < lo):
        raise ValueError("empty bounding box")
    center = tuple(float(c) for c in 0.5 * (lo + hi))
    radius = safety_factor * 0.5 * float(np.linalg.norm(hi - lo))
    if radius <= 0:
        raise ValueError("bounding box has zero extent")
    h_target = spacing if spacing is not None else target_spacing(stats.a_h, stats.dim, rule)
    n = math.ceil(radius / h_target * (1 - 1e-14))
    total = (2 * n + 1) ** stats.dim
    if total > max_grid_nodes:
        raise GridTooFine(
            f"overlay grid needs {total} nodes (N={n}); budget is {max_grid_nodes}",
            required_bytes=total * 8,
        )
    return OverlayGrid(stats.dim, center, radius, n)


def spacing_satisfies_rank_rule(grid, stats):
    return grid.spacing <= target_spacing(stats.a_h, stats.dim, "strict") * (1 + 1e-12)


def warn_if_not_strict(grid, stats):
    if not spacing_satisfies_rank_rule(grid, stats):
        warnings.warn(
            "overlay spacing exceeds a_h/((d+1)sqrt(d)); full column rank of the "
            "transfer matrix is not guaranteed",
            stacklevel=2,
        )
