"""Piecewise linear transfer from mesh vertices to overlay grid nodes.

Row k of the transfer matrix holds the hat-function values ``phi_j(x_k)`` of
the element containing grid node k; rows of nodes outside the mesh are empty.
"""
from dataclasses import dataclass, field
import math

import numpy as np
import scipy.sparse as sp

from .errors import ParameterMismatch, RankDeficiencyRisk
from .grid import spacing_satisfies_rank_rule
from .mesh import LOCATION_TOLERANCE

RANK_CHECK_BUDGET = 500
_CANDIDATE_CHUNK = 2**21


def _affine_data(mesh):
    x0 = mesh.vertices[mesh.elements[:, 0]]
    return x0, mesh.inverse_affine()


def _barycentric_batch(x0, binv, elem_ids, points):
    lam = np.einsum("nij,nj->ni", binv[elem_ids], points - x0[elem_ids])
    return np.concatenate([1.0 - lam.sum(axis=1, keepdims=True), lam], axis=1)


def _box_candidates(lo_idx, counts):
    """Expand per-item integer boxes into (item, multi-index) candidate pairs."""
    total_per = np.prod(counts, axis=1)
    owner = np.repeat(np.arange(len(counts)), total_per)
    start = np.cumsum(total_per) - total_per
    local = np.arange(owner.size) - start[owner]
    multi = np.empty((owner.size, counts.shape[1]), dtype=np.int64)
    for axis in range(counts.shape[1] - 1, -1, -1):
        c = counts[owner, axis]
        multi[:, axis] = local % c
        local = local // c
    return owner, lo_idx[owner] + multi


def _clamp(lam):
    lam = np.clip(lam, 0.0, 1.0)
    return lam / lam.sum(axis=1, keepdims=True)


class PointLocator:
    """Uniform bucket grid over the mesh bounding box.

    Every element is registered in each bucket its bounding box overlaps; the
    bucket size equals the largest element diameter.
    """

    def __init__(self, mesh, bucket_size=None):
        self.mesh = mesh
        self._x0, self._binv = _affine_data(mesh)
        lo, hi = mesh.bounding_box()
        size = float(bucket_size or mesh.diameters.max())
        self.origin = lo
        self.size = size
        self.shape = np.maximum(1, np.ceil((hi - lo) / size).astype(np.int64))
        x = mesh.vertices[mesh.elements]
        blo = self._bucket_of(x.min(axis=1))
        bhi = self._bucket_of(x.max(axis=1))
        owner, multi = _box_candidates(blo, bhi - blo + 1)
        bucket = np.ravel_multi_index(tuple(multi.T), tuple(self.shape))
        order = np.lexsort((owner, bucket))
        self._elements = owner[order]
        self._indptr = np.searchsorted(bucket[order], np.arange(np.prod(self.shape) + 1))

    def _bucket_of(self, points):
        idx = np.floor((points - self.origin) / self.size).astype(np.int64)
        return np.clip(idx, 0, self.shape - 1)

    def candidates(self, bucket_linear):
        return self._elements[self._indptr[bucket_linear]:self._indptr[bucket_linear + 1]]

    def locate_many(self, points, nearest=False):
        """Containing element (lowest id wins) and clamped barycentric coordinates.

        Points outside every element get id -1, unless ``nearest`` is set, in
        which case the element maximising the smallest coordinate is used.
        """
        points = np.asarray(points, dtype=float).reshape(-1, self.mesh.dim)
        b = np.ravel_multi_index(tuple(self._bucket_of(points).T), tuple(self.shape))
        counts = self._indptr[b + 1] - self._indptr[b]
        pt = np.repeat(np.arange(len(points)), counts)
        start = np.repeat(self._indptr[b], counts)
        offset = np.arange(pt.size) - np.repeat(np.cumsum(counts) - counts, counts)
        elem = self._elements[start + offset]
        lam = _barycentric_batch(self._x0, self._binv, elem, points[pt])
        score = lam.min(axis=1)
        inside = score >= -LOCATION_TOLERANCE
        ids = np.full(len(points), -1, dtype=np.int64)
        coords = np.zeros((len(points), self.mesh.dim + 1))
        # candidates are sorted by element id within each bucket
        hit = np.flatnonzero(inside)
        first = hit[np.unique(pt[hit], return_index=True)[1]]
        ids[pt[first]] = elem[first]
        coords[pt[first]] = lam[first]
        if nearest:
            miss = np.flatnonzero(ids < 0)
            for i in miss:
                lam_all = _barycentric_batch(
                    self._x0, self._binv, np.arange(self.mesh.n_elements),
                    np.broadcast_to(points[i], (self.mesh.n_elements, self.mesh.dim)),
                )
                e = int(np.argmax(lam_all.min(axis=1)))
                ids[i] = e
                coords[i] = lam_all[e]
        found = ids >= 0
        coords[found] = _clamp(coords[found])
        return ids, coords

    def locate(self, point):
        """``(element_id, coords)`` or ``None`` when the point is outside."""
        ids, coords = self.locate_many(np.atleast_1d(point)[None, :])
        if ids[0] < 0:
            return None
        return int(ids[0]), coords[0]


def locate(locator, point):
    return locator.locate(point)


@dataclass
class TransferMatrix:
    """Sparse interpolation matrix (grid nodes x mesh vertices)."""

    matrix: sp.csr_matrix
    column_sums: np.ndarray
    nodes_per_element_max: int = 0
    columns: np.ndarray = field(default=None)

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def covered(self):
        return np.diff(self.matrix.indptr) > 0

    def apply(self, mesh_vector):
        return apply_transfer(self, mesh_vector)

    def apply_transpose(self, grid_vector):
        return apply_transpose(self, grid_vector)


def build_transfer(mesh, grid):
    """Transfer matrix ``I_h^FD`` for ``mesh`` and overlay ``grid``.

    Candidate (node, element) pairs come from each element's bounding box;
    a node takes the lowest-index element that contains it.
    """
    if mesh.dim != grid.dim:
        raise ParameterMismatch("mesh and grid dimensions differ")
    d, n, h = grid.dim, grid.n, grid.spacing
    c = np.asarray(grid.center)
    x0, binv = _affine_data(mesh)
    x = mesh.vertices[mesh.elements]
    lo = np.ceil((x.min(axis=1) - c) / h - 1e-9).astype(np.int64)
    hi = np.floor((x.max(axis=1) - c) / h + 1e-9).astype(np.int64)
    lo = np.clip(lo, -n, n + 1)
    hi = np.clip(hi, -n - 1, n)
    counts = np.maximum(hi - lo + 1, 0)
    per_elem = np.prod(counts, axis=1)

    nodes, owners, lams = [], [], []
    hits_per_elem = np.zeros(mesh.n_elements, dtype=np.int64)
    bounds = np.searchsorted(np.cumsum(per_elem), np.arange(0, per_elem.sum() + _CANDIDATE_CHUNK, _CANDIDATE_CHUNK))
    bounds = np.unique(np.concatenate([[0], bounds + 1, [mesh.n_elements]]).clip(0, mesh.n_elements))
    for e0, e1 in zip(bounds[:-1], bounds[1:]):
        sel = np.arange(e0, e1)
        owner, multi = _box_candidates(lo[sel], counts[sel])
        owner = sel[owner]
        lam = _barycentric_batch(x0, binv, owner, c + h * multi)
        keep = lam.min(axis=1) >= -LOCATION_TOLERANCE
        owner, multi, lam = owner[keep], multi[keep], lam[keep]
        np.add.at(hits_per_elem, owner, 1)
        nodes.append(np.ravel_multi_index(tuple((multi + n).T), grid.shape))
        owners.append(owner)
        lams.append(lam)
    nodes = np.concatenate(nodes) if nodes else np.zeros(0, dtype=np.int64)
    owners = np.concatenate(owners) if owners else np.zeros(0, dtype=np.int64)
    lams = np.concatenate(lams) if lams else np.zeros((0, d + 1))

    order = np.lexsort((owners, nodes))
    nodes, owners, lams = nodes[order], owners[order], lams[order]
    first = np.unique(nodes, return_index=True)[1]
    nodes, owners, lams = nodes[first], owners[first], _clamp(lams[first])

    rows = np.repeat(nodes, d + 1)
    cols = mesh.elements[owners].ravel()
    mat = sp.csr_matrix((lams.ravel(), (rows, cols)), shape=(grid.n_nodes, mesh.n_vertices))
    mat.eliminate_zeros()
    return TransferMatrix(
        matrix=mat,
        column_sums=np.asarray(mat.sum(axis=0)).ravel(),
        nodes_per_element_max=int(hits_per_elem.max()) if hits_per_elem.size else 0,
        columns=np.arange(mesh.n_vertices),
    )


def column_sums(tm):
    return tm.column_sums


def apply_transfer(tm, mesh_vector):
    v = np.asarray(mesh_vector, dtype=float)
    if v.shape != (tm.shape[1],):
        raise ParameterMismatch(f"expected a mesh vector of length {tm.shape[1]}, got {v.shape}")
    return tm.matrix @ v


def apply_transpose(tm, grid_vector):
    v = np.asarray(grid_vector, dtype=float)
    if v.shape != (tm.shape[0],):
        raise ParameterMismatch(f"expected a grid vector of length {tm.shape[0]}, got {v.shape}")
    return tm.matrix.T @ v


def restrict_interior(tm, mesh):
    """Drop boundary-vertex columns; ``columns`` maps local -> global vertex id."""
    interior = np.flatnonzero(~mesh.boundary)
    mat = tm.matrix[:, interior].tocsr()
    return TransferMatrix(
        matrix=mat,
        column_sums=tm.column_sums[interior].copy(),
        nodes_per_element_max=tm.nodes_per_element_max,
        columns=tm.columns[interior],
    )


def scatter_interior(tm, values, n_vertices):
    """Full-length mesh vector with zeros at the removed (boundary) columns."""
    out = np.zeros(n_vertices)
    out[tm.columns] = values
    return out


@dataclass
class RankReport:
    min_column_sum: float
    max_column_sum: float
    zero_columns: list
    strict_rule: bool
    lower_bound: float
    lower_bound_met: bool
    upper_bound: float
    exact_rank: int = None
    full_rank: bool = None
    note: str = ""


def check_rank_conditions(tm, stats, grid, raise_on_zero=True):
    """Column-sum and rank diagnostics for a transfer matrix.

    With the strict spacing rule the column sums must exceed
    ``a_h / ((d+1) sqrt(d) h)``. Exact rank is computed only for at most
    ``RANK_CHECK_BUDGET`` columns.
    """
    d = grid.dim
    sums = tm.column_sums
    zero = tm.columns[sums <= 0].tolist() if tm.columns is not None else np.flatnonzero(sums <= 0).tolist()
    strict = spacing_satisfies_rank_rule(grid, stats)
    lower = stats.a_h / ((d + 1) * math.sqrt(d) * stats.h)
    report = RankReport(
        min_column_sum=float(sums.min()),
        max_column_sum=float(sums.max()),
        zero_columns=zero,
        strict_rule=strict,
        lower_bound=lower,
        lower_bound_met=bool(sums.min() >= lower * (1 - 1e-12)),
        upper_bound=float(stats.n_val * tm.nodes_per_element_max),
    )
    if zero and raise_on_zero:
        raise RankDeficiencyRisk(f"{len(zero)} column(s) of the transfer matrix sum to zero", zero)
    if tm.shape[1] <= RANK_CHECK_BUDGET:
        dense = tm.matrix[tm.covered].toarray()
        report.exact_rank = int(np.linalg.matrix_rank(dense)) if dense.size else 0
        report.full_rank = report.exact_rank == tm.shape[1]
    elif strict and not zero:
        report.full_rank = True
        report.note = "rank conditions satisfied by the strict spacing rule"
    else:
        report.note = "rank not verified exactly; only column sums were checked"
    return report
