"""Simplicial meshes: data model, element geometry, statistics and generators.

A mesh stores vertex coordinates as an ``(N_v, d)`` array and elements as an
``(N_e, d+1)`` integer array. Every element is positively oriented: its edge
matrix ``[x_1 - x_0, ..., x_d - x_0]`` has a positive determinant.
"""
from dataclasses import dataclass
from functools import cached_property
from itertools import combinations, permutations, product
from math import factorial

import numpy as np

from .errors import DegenerateElement, EmptyMesh, UnknownMeshKind

VOLUME_EPSILON = 1e-14
LOCATION_TOLERANCE = 1e-12


class SimplicialMesh:
    """Immutable simplex mesh of a bounded domain.

    Parameters
    ----------
    vertices : array_like, shape (N_v, d)
    elements : array_like of int, shape (N_e, d+1)
    boundary : array_like of bool, shape (N_v,), optional
        Boundary flags. When omitted, vertices of facets owned by a single
        element are flagged.
    reorient : bool
        Swap two vertices of negatively oriented elements instead of raising.
    """

    def __init__(self, vertices, elements, boundary=None, reorient=False):
        vertices = np.asarray(vertices, dtype=float)
        if vertices.ndim == 1:
            vertices = vertices[:, None]
        elements = np.asarray(elements, dtype=np.int64)
        if vertices.size == 0 or elements.size == 0:
            raise EmptyMesh("mesh has no vertices or no elements")
        d = vertices.shape[1]
        if d not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {d}")
        if elements.ndim != 2 or elements.shape[1] != d + 1:
            raise ValueError(f"elements must have shape (N_e, {d + 1})")
        if elements.min() < 0 or elements.max() >= len(vertices):
            raise ValueError("element vertex index out of range")

        vol = _signed_volumes(vertices, elements)
        diam = _diameters(vertices, elements)
        eps = VOLUME_EPSILON * diam**d
        if reorient:
            flip = vol < -eps
            if flip.any():
                elements = elements.copy()
                elements[flip, 0], elements[flip, 1] = elements[flip, 1], elements[flip, 0].copy()
                vol = np.abs(vol)
        bad = np.flatnonzero(vol <= eps)
        if bad.size:
            raise DegenerateElement(
                f"{bad.size} degenerate or inverted element(s), first id {bad[0]}"
            )

        self.vertices = vertices
        self.elements = elements
        self.vertices.setflags(write=False)
        self.elements.setflags(write=False)
        if boundary is None:
            boundary = np.zeros(len(vertices), dtype=bool)
            boundary[np.unique(self.boundary_facets())] = True
        self.boundary = np.asarray(boundary, dtype=bool).copy()
        if self.boundary.shape != (len(vertices),):
            raise ValueError("boundary flags must have one entry per vertex")
        self.boundary.setflags(write=False)

    @property
    def dim(self):
        return self.vertices.shape[1]

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_elements(self):
        return self.elements.shape[0]

    def __repr__(self):
        return (f"SimplicialMesh(dim={self.dim}, n_vertices={self.n_vertices}, "
                f"n_elements={self.n_elements})")

    def with_vertices(self, vertices):
        """Same connectivity and boundary flags, new coordinates."""
        return SimplicialMesh(vertices, self.elements, self.boundary)

    @cached_property
    def volumes(self):
        return _signed_volumes(self.vertices, self.elements)

    @cached_property
    def diameters(self):
        return _diameters(self.vertices, self.elements)

    @cached_property
    def heights(self):
        """Heights ``a_j = d |K| / |S_j|`` per element and local vertex."""
        d = self.dim
        facet = np.empty((self.n_elements, d + 1))
        for j in range(d + 1):
            others = [i for i in range(d + 1) if i != j]
            facet[:, j] = _facet_measures(self.vertices, self.elements[:, others])
        return d * self.volumes[:, None] / facet

    @cached_property
    def centroids(self):
        return self.vertices[self.elements].mean(axis=1)

    @cached_property
    def total_volume(self):
        return float(self.volumes.sum())

    def bounding_box(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def boundary_facets(self):
        """Facets (as sorted vertex tuples) that belong to exactly one element."""
        d = self.dim
        faces = np.concatenate(
            [np.sort(self.elements[:, list(c)], axis=1) for c in combinations(range(d + 1), d)]
        )
        uniq, counts = np.unique(faces, axis=0, return_counts=True)
        if counts.max() > 2:
            raise ValueError("a facet is shared by more than two elements")
        return uniq[counts == 1]

    @cached_property
    def _patch_csr(self):
        n_local = self.dim + 1
        owners = np.repeat(np.arange(self.n_elements), n_local)
        verts = self.elements.ravel()
        order = np.argsort(verts, kind="stable")
        indptr = np.zeros(self.n_vertices + 1, dtype=np.int64)
        np.add.at(indptr, verts + 1, 1)
        return np.cumsum(indptr), owners[order]

    def inverse_affine(self):
        """Per-element inverse edge matrices ``E^{-1}``, shape (N_e, d, d)."""
        return np.linalg.inv(_edge_matrices(self.vertices, self.elements))


@dataclass(frozen=True)
class ElementGeometry:
    volume: float
    heights: np.ndarray
    min_height: float
    diameter: float

    @property
    def inradius(self):
        return 1.0 / np.sum(1.0 / self.heights)


@dataclass(frozen=True)
class MeshStats:
    h: float
    a_h: float
    n_val: int
    h_bar: float
    dim: int


def _edge_matrices(vertices, elements):
    x = vertices[elements]
    return np.swapaxes(x[:, 1:, :] - x[:, :1, :], 1, 2)


def _signed_volumes(vertices, elements):
    d = vertices.shape[1]
    return np.linalg.det(_edge_matrices(vertices, elements)) / factorial(d)


def _diameters(vertices, elements):
    x = vertices[elements]
    n = elements.shape[1]
    best = np.zeros(len(elements))
    for i, j in combinations(range(n), 2):
        best = np.maximum(best, np.linalg.norm(x[:, i] - x[:, j], axis=1))
    return best


def _facet_measures(vertices, facets):
    """(d-1)-measure of each facet given by d vertex ids (Gram determinant)."""
    k = facets.shape[1] - 1
    if k == 0:
        return np.ones(len(facets))
    x = vertices[facets]
    edges = x[:, 1:, :] - x[:, :1, :]
    gram = np.einsum("nik,njk->nij", edges, edges)
    return np.sqrt(np.clip(np.linalg.det(gram), 0.0, None)) / factorial(k)


def element_geometry(mesh, element_id):
    """Volume, heights, minimum height and diameter of one element."""
    if not 0 <= element_id < mesh.n_elements:
        raise IndexError(f"element id {element_id} out of range")
    return ElementGeometry(
        volume=float(mesh.volumes[element_id]),
        heights=mesh.heights[element_id].copy(),
        min_height=float(mesh.heights[element_id].min()),
        diameter=float(mesh.diameters[element_id]),
    )


def simplex_geometry(points):
    """Geometry of a free-standing simplex given its d+1 vertices."""
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    d = points.shape[1]
    elem = np.arange(d + 1)[None, :]
    vol = _signed_volumes(points, elem)[0]
    diam = _diameters(points, elem)[0]
    if abs(vol) <= VOLUME_EPSILON * diam**d:
        raise DegenerateElement("simplex has (numerically) zero volume")
    facets = np.array([[i for i in range(d + 1) if i != j] for j in range(d + 1)])
    heights = d * abs(vol) / _facet_measures(points, facets)
    return ElementGeometry(abs(vol), heights, float(heights.min()), float(diam))


def barycentric_coordinates(mesh, element_id, point):
    """Barycentric coordinates of ``point`` with respect to one element.

    ``lambda_1..lambda_d`` come from the inverse edge matrix and
    ``lambda_0 = 1 - sum`` so the coordinates sum to one exactly.
    """
    x = mesh.vertices[mesh.elements[element_id]]
    return simplex_barycentric(x, point)


def simplex_barycentric(simplex, point):
    x = np.asarray(simplex, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    d = x.shape[1]
    edges = (x[1:] - x[0]).T
    diam = _diameters(x, np.arange(d + 1)[None, :])[0]
    if abs(np.linalg.det(edges)) / factorial(d) <= VOLUME_EPSILON * diam**d:
        raise DegenerateElement("element has (numerically) zero volume")
    lam = np.linalg.solve(edges, np.atleast_1d(np.asarray(point, dtype=float)) - x[0])
    return np.concatenate([[1.0 - lam.sum()], lam])


def mesh_stats(mesh):
    if mesh.n_elements == 0:
        raise EmptyMesh("mesh has no elements")
    indptr, _ = mesh._patch_csr
    return MeshStats(
        h=float(mesh.diameters.max()),
        a_h=float(mesh.heights.min()),
        n_val=int(np.diff(indptr).max()),
        h_bar=float(mesh.n_elements ** (-1.0 / mesh.dim)),
        dim=mesh.dim,
    )


def vertex_patches(mesh):
    """List whose entry j holds the ids of the elements containing vertex j."""
    indptr, owners = mesh._patch_csr
    return [owners[indptr[j]:indptr[j + 1]] for j in range(mesh.n_vertices)]


def vertex_neighbors(mesh):
    """CSR adjacency (indptr, indices) of vertices sharing an element."""
    import scipy.sparse as sp

    n = mesh.n_vertices
    d1 = mesh.dim + 1
    rows = np.repeat(mesh.elements, d1, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, d1)).ravel()
    adj = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
    adj.sum_duplicates()
    return adj.indptr, adj.indices


# ---------------------------------------------------------------------------
# benchmark mesh generators


def generate_benchmark_mesh(kind, resolution):
    """Built-in meshes used by the benchmark problems.

    ``interval``: uniform mesh of [-1, 1] with ``resolution`` elements.
    ``disk``: unit disk, ``resolution`` concentric rings, ring i carrying 6i
    vertices. ``lshape``: (-1,1)^2 minus the fourth quadrant, ``resolution``
    cells per unit length. ``ball``: unit ball from a reflected Kuhn
    subdivision of the cube mapped radially, ``resolution`` layers.
    """
    resolution = int(resolution)
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    try:
        builder = _GENERATORS[kind]
    except KeyError:
        raise UnknownMeshKind(f"unknown mesh kind {kind!r}; expected one of {sorted(_GENERATORS)}") from None
    return builder(resolution)


def interval_mesh(n, a=-1.0, b=1.0):
    x = np.linspace(a, b, n + 1)
    elements = np.column_stack([np.arange(n), np.arange(1, n + 1)])
    boundary = np.zeros(n + 1, dtype=bool)
    boundary[[0, -1]] = True
    return SimplicialMesh(x[:, None], elements, boundary)


def disk_mesh(n):
    pts = [np.zeros(2)]
    start = [0]
    for i in range(1, n + 1):
        start.append(len(pts))
        theta = 2 * np.pi * np.arange(6 * i) / (6 * i)
        pts.extend(np.column_stack([np.cos(theta), np.sin(theta)]) * (i / n))
    pts = np.array(pts)
    tris = []
    for j in range(6):
        tris.append((0, 1 + j, 1 + (j + 1) % 6))
    for i in range(2, n + 1):
        m_in, m_out = 6 * (i - 1), 6 * i
        s_in, s_out = start[i - 1], start[i]
        a = b = 0
        while a < m_in or b < m_out:
            next_in = (a + 1) / m_in
            next_out = (b + 1) / m_out
            if b >= m_out or (a < m_in and next_in < next_out):
                tris.append((s_in + a % m_in, s_in + (a + 1) % m_in, s_out + b % m_out))
                a += 1
            else:
                tris.append((s_in + a % m_in, s_out + (b + 1) % m_out, s_out + b % m_out))
                b += 1
    boundary = np.zeros(len(pts), dtype=bool)
    boundary[start[n]:] = True
    return SimplicialMesh(pts, np.array(tris), boundary, reorient=True)


def lshape_mesh(n):
    m = 2 * n
    coords = np.linspace(-1.0, 1.0, m + 1)
    index = -np.ones((m + 1, m + 1), dtype=np.int64)
    pts = []
    tris = []

    def vid(i, j):
        if index[i, j] < 0:
            index[i, j] = len(pts)
            pts.append((coords[i], coords[j]))
        return index[i, j]

    for i in range(m):
        for j in range(m):
            if i >= n and j < n:  # removed quadrant [0,1) x (-1,0]
                continue
            a, b, c, e = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            tris.append((a, b, c))
            tris.append((a, c, e))
    return SimplicialMesh(np.array(pts), np.array(tris), reorient=True)


def ball_mesh(n):
    m = 2 * n
    coords = np.linspace(-1.0, 1.0, m + 1)
    grid = np.stack(np.meshgrid(coords, coords, coords, indexing="ij"), axis=-1).reshape(-1, 3)

    def vid(i, j, k):
        return (i * (m + 1) + j) * (m + 1) + k

    tets = []
    for i, j, k in product(range(m), repeat=3):
        lower = np.array([i, j, k])
        # reflect the Kuhn subdivision per octant so the diagonal points outward
        outward = np.where(lower >= n, 1, -1)
        inner = np.where(outward > 0, lower, lower + 1)
        for perm in permutations(range(3)):
            path = [inner.copy()]
            cur = inner.copy()
            for ax in perm:
                cur = cur.copy()
                cur[ax] += outward[ax]
                path.append(cur)
            tets.append([vid(*p) for p in path])
    tets = np.array(tets)
    inf = np.abs(grid).max(axis=1)
    two = np.linalg.norm(grid, axis=1)
    scale = np.divide(inf, two, out=np.ones_like(inf), where=two > 0)
    pts = grid * scale[:, None]
    boundary = np.isclose(inf, 1.0)
    return SimplicialMesh(pts, tets, boundary, reorient=True)


_GENERATORS = {
    "interval": interval_mesh,
    "disk": disk_mesh,
    "lshape": lshape_mesh,
    "ball": ball_mesh,
}
