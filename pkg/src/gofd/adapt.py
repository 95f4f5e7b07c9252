"""Moving-mesh adaptation driven by a Hessian-based metric.

Vertices follow the gradient flow of a mesh energy that balances
equidistribution (equal element volume measured in the metric) and
alignment (elements equilateral in the metric). The metric is recovered from
the current discrete solution and interpolated smoothly while the mesh moves.
"""
from dataclasses import dataclass, field
import logging
import math
import warnings

import numpy as np
import scipy.sparse as sp
from scipy.integrate import BDF
from scipy.optimize import brentq
from scipy.spatial import cKDTree

from .errors import InvertedElement, MeshMotionStalled, NotConverged
from .mesh import VOLUME_EPSILON, mesh_stats, vertex_neighbors

log = logging.getLogger(__name__)

MIN_STEP = 1e-12
QUALITY_FLOOR = 1e-3
RELAX_AFTER = 20
SETTLE_EVERY = 5


@dataclass
class MmpdeConfig:
    tau: float = 1e-2
    t_end: float = 1.0
    l_max: int = 5
    rtol: float = 1e-8
    atol_scale: float = 1e-3
    energy_tol: float = 1e-8
    boundary: str = "fixed"
    max_steps: int = 20000
    settle_tol: float = 1e-3

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.settle_tol < 0:
            raise ValueError("settle_tol must be non-negative")
        if self.l_max < 1:
            raise ValueError("l_max must be at least 1")
        if self.boundary not in ("fixed", "slide"):
            raise ValueError(f"unknown boundary mode {self.boundary!r}")


# ---------------------------------------------------------------------------
# Hessian recovery


def _quadratic_basis(x):
    """Monomials 1, x_i, x_i x_j (i <= j) for local coordinates x (..., d)."""
    d = x.shape[-1]
    cols = [np.ones(x.shape[:-1]), *(x[..., i] for i in range(d))]
    cols += [x[..., i] * x[..., j] for i in range(d) for j in range(i, d)]
    return np.stack(cols, axis=-1)


def _hessian_from_coefficients(c, d):
    h = np.zeros(c.shape[:-1] + (d, d))
    k = 1 + d
    for i in range(d):
        for j in range(i, d):
            if i == j:
                h[..., i, i] = 2 * c[..., k]
            else:
                h[..., i, j] = h[..., j, i] = c[..., k]
            k += 1
    return h


def _element_point_sets(mesh, rings):
    """Vertices within ``rings`` element layers of each element (padded with -1)."""
    indptr, owners = mesh._patch_csr
    vert_elem = sp.csr_matrix((np.ones(len(owners)), owners, indptr), shape=(mesh.n_vertices, mesh.n_elements))
    elem_vert = vert_elem.T.tocsr()
    elem_adj = elem_vert @ vert_elem
    reach = elem_vert
    for _ in range(rings):
        reach = elem_adj @ reach
    reach = reach.tocsr()
    reach.sort_indices()
    counts = np.diff(reach.indptr)
    width = counts.max()
    pts = -np.ones((mesh.n_elements, width), dtype=np.int64)
    local = np.arange(reach.nnz) - np.repeat(reach.indptr[:-1], counts)
    pts[np.repeat(np.arange(mesh.n_elements), counts), local] = reach.indices
    return pts


@dataclass
class RecoveredHessian:
    values: np.ndarray
    flagged: np.ndarray = field(default=None)


def recover_hessian(mesh, u_h, max_rings=3):
    """Per-element Hessian from a least-squares quadratic fit.

    The fit uses the vertices of every element sharing a vertex with K; if
    the normal equations are singular the stencil grows by one ring, up to
    ``max_rings``, after which the element gets a zero Hessian and a flag.
    """
    u = np.asarray(u_h, dtype=float)
    d = mesh.dim
    nb = 1 + d + d * (d + 1) // 2
    hess = np.zeros((mesh.n_elements, d, d))
    todo = np.arange(mesh.n_elements)
    for rings in range(1, max_rings + 1):
        if todo.size == 0:
            break
        pts = _element_point_sets(mesh, rings)[todo]
        valid = pts >= 0
        safe = np.where(valid, pts, 0)
        center = mesh.centroids[todo][:, None, :]
        scale = mesh.diameters[todo][:, None, None]
        local = (mesh.vertices[safe] - center) / scale
        a = _quadratic_basis(local) * valid[..., None]
        rhs = u[safe] * valid
        ata = np.einsum("npi,npj->nij", a, a)
        atb = np.einsum("npi,np->ni", a, rhs)
        w = np.linalg.eigvalsh(ata)
        ok = (valid.sum(axis=1) >= nb) & (w[:, 0] > 1e-10 * np.maximum(w[:, -1], 1e-300))
        if np.any(ok):
            c = np.linalg.solve(ata[ok], atb[ok][..., None])[..., 0]
            hess[todo[ok]] = _hessian_from_coefficients(c, d) / mesh.diameters[todo[ok]][:, None, None] ** 2
        todo = todo[~ok]
    flagged = np.zeros(mesh.n_elements, dtype=bool)
    flagged[todo] = True
    return RecoveredHessian(hess, flagged)


# ---------------------------------------------------------------------------
# metric


SUPPORT_FACTOR = 1.5


def _wendland(q):
    """C^2 Wendland function (1-q)^4 (4q+1) on [0, 1] and its derivative."""
    one = np.clip(1.0 - q, 0.0, None)
    return one**4 * (4.0 * q + 1.0), -20.0 * q * one**3


class SmoothInterpolant:
    """Normalised compactly supported weights over the vertices of a mesh.

    Vertex j gets the radius ``SUPPORT_FACTOR`` times its longest incident
    edge, so every point of an element lies inside the support of all of the
    element's vertices. The result is C^2, which keeps the mesh-motion
    right-hand side smooth, and a convex combination, which keeps SPD data SPD.
    """

    def __init__(self, mesh, values):
        self.points = mesh.vertices.copy()
        self.values = np.asarray(values, dtype=float)
        d = mesh.dim
        longest = np.zeros(mesh.n_vertices)
        for a in range(d + 1):
            for b in range(a + 1, d + 1):
                ia, ib = mesh.elements[:, a], mesh.elements[:, b]
                ln = np.linalg.norm(mesh.vertices[ia] - mesh.vertices[ib], axis=1)
                np.maximum.at(longest, ia, ln)
                np.maximum.at(longest, ib, ln)
        self.radius = SUPPORT_FACTOR * longest
        # group vertices by radius so each tree query uses a tight bound
        level = np.floor(np.log2(self.radius)).astype(int)
        self._groups = []
        for lv in np.unique(level):
            ids = np.flatnonzero(level == lv)
            self._groups.append((ids, cKDTree(self.points[ids]), float(self.radius[ids].max())))

    def pairs(self, x):
        """Candidate (point, vertex) index pairs within each group's radius."""
        query = cKDTree(x)
        rows, cols = [], []
        for ids, tree, rmax in self._groups:
            hits = query.sparse_distance_matrix(tree, rmax, output_type="ndarray")
            rows.append(hits["i"].astype(np.int64))
            cols.append(ids[hits["j"]])
        return np.concatenate(rows), np.concatenate(cols)

    def __call__(self, x):
        """Values (n, ...) and gradients (n, ..., d) at points x."""
        x = np.asarray(x, dtype=float)
        n, d = x.shape
        rows, cols = self.pairs(x)
        diff = x[rows] - self.points[cols]
        dist = np.linalg.norm(diff, axis=1)
        q = dist / self.radius[cols]
        w, dw = _wendland(q)
        keep = w > 0
        rows, cols, diff, dist, w, dw = rows[keep], cols[keep], diff[keep], dist[keep], w[keep], dw[keep]
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(dist[:, None] > 0, diff / dist[:, None], 0.0)
        grad_w = (dw / self.radius[cols])[:, None] * unit
        wsum = np.bincount(rows, weights=w, minlength=n)
        if np.any(wsum <= 0):
            raise ValueError("point outside the support of every vertex")
        vshape = self.values.shape[1:]
        flat = self.values.reshape(len(self.points), -1)[cols]
        ncomp = flat.shape[1]
        val = np.empty((n, ncomp))
        for c in range(ncomp):
            val[:, c] = np.bincount(rows, weights=w * flat[:, c], minlength=n)
        val /= wsum[:, None]
        # grad M~ = sum_j grad w_j (M_j - M~) / sum_j w_j
        rel = flat - val[rows]
        grad = np.empty((n, ncomp, d))
        for c in range(ncomp):
            for k in range(d):
                grad[:, c, k] = np.bincount(rows, weights=grad_w[:, k] * rel[:, c], minlength=n)
        grad /= wsum[:, None, None]
        return val.reshape((n,) + vshape), grad.reshape((n,) + vshape + (d,))


@dataclass
class MetricField:
    """Per-element metric tensors on the mesh they were computed on.

    ``vertex_values`` are volume-weighted patch averages. While the mesh
    moves, the metric at a point is the smooth partition-of-unity blend of
    these vertex values (:class:`SmoothInterpolant`). With ``frozen`` the
    element tensors stay attached to their elements instead.
    """

    mesh: object
    values: np.ndarray
    alpha: float
    vertex_values: np.ndarray = None
    frozen: bool = False
    _interp: object = field(default=None, repr=False)

    def __post_init__(self):
        if self.vertex_values is None:
            self.vertex_values = vertex_average(self.mesh, self.values)

    @property
    def sigma(self):
        return float(np.sum(np.sqrt(np.linalg.det(self.values)) * self.mesh.volumes))

    def at(self, points):
        """Metric and its spatial gradient at ``points``.

        Returns ``(M, dM)`` with shapes (n, d, d) and (n, d, d, d), the last
        axis of dM being the derivative direction.
        """
        if self._interp is None:
            self._interp = SmoothInterpolant(self.mesh, self.vertex_values)
        return self._interp(np.asarray(points, dtype=float).reshape(-1, self.mesh.dim))


def vertex_average(mesh, element_values):
    vol = mesh.volumes
    d1 = mesh.dim + 1
    shape = element_values.shape[1:]
    acc = np.zeros((mesh.n_vertices,) + shape)
    wsum = np.zeros(mesh.n_vertices)
    weighted = element_values * vol.reshape((-1,) + (1,) * len(shape))
    for a in range(d1):
        np.add.at(acc, mesh.elements[:, a], weighted)
        np.add.at(wsum, mesh.elements[:, a], vol)
    return acc / wsum.reshape((-1,) + (1,) * len(shape))


def _abs_matrix(h):
    w, v = np.linalg.eigh(0.5 * (h + np.swapaxes(h, -1, -2)))
    return np.einsum("nij,nj,nkj->nik", v, np.abs(w), v), np.abs(w)


def metric_from_hessian(mesh, hessian):
    """Metric ``det(I + |H|/alpha)^(-1/(d+4)) (I + |H|/alpha)`` per element.

    ``alpha`` solves ``sum |K| det(I + |H_K|/alpha)^(2/(d+4)) = 2|Omega|``.
    An all-zero Hessian yields the identity metric.
    """
    h = hessian.values if isinstance(hessian, RecoveredHessian) else np.asarray(hessian)
    d = mesh.dim
    habs, eig = _abs_matrix(h)
    vol = mesh.volumes
    omega = float(vol.sum())
    eye = np.eye(d)
    if not np.any(eig > 0):
        return MetricField(mesh, np.broadcast_to(eye, (mesh.n_elements, d, d)).copy(), float("inf"))

    def excess(log_alpha):
        dets = np.prod(1.0 + eig / math.exp(log_alpha), axis=1)
        return float(np.sum(vol * dets ** (2.0 / (d + 4)))) - 2.0 * omega

    scale = math.log(float(np.max(eig)))
    lo, hi = scale, scale
    while excess(lo) <= 0:
        lo -= 2.0
    while excess(hi) >= 0:
        hi += 2.0
    log_alpha = brentq(excess, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    alpha = math.exp(log_alpha)
    a = eye + habs / alpha
    values = a * np.linalg.det(a)[:, None, None] ** (-1.0 / (d + 4))
    return MetricField(mesh, values, alpha)


def alpha_residual(mesh, metric_or_hessian, alpha):
    h = metric_or_hessian.values if isinstance(metric_or_hessian, RecoveredHessian) else metric_or_hessian
    _, eig = _abs_matrix(np.asarray(h))
    d = mesh.dim
    dets = np.prod(1.0 + eig / alpha, axis=1)
    return float(np.sum(mesh.volumes * dets ** (2.0 / (d + 4)))) - 2.0 * float(mesh.volumes.sum())


# ---------------------------------------------------------------------------
# energy and its gradient


def reference_simplex(d):
    """Edge matrix (columns) of the unit-volume equilateral simplex."""
    if d == 1:
        return np.ones((1, 1))
    if d == 2:
        side = math.sqrt(4.0 / math.sqrt(3.0))
        return side * np.array([[1.0, 0.5], [0.0, math.sqrt(3.0) / 2]])
    if d == 3:
        side = (6.0 * math.sqrt(2.0)) ** (1.0 / 3.0)
        e = np.array([
            [1.0, 0.5, 0.5],
            [0.0, math.sqrt(3.0) / 2, math.sqrt(3.0) / 6],
            [0.0, 0.0, math.sqrt(2.0 / 3.0)],
        ])
        return side * e
    raise ValueError(f"unsupported dimension {d}")


def _check_orientation(x, elements):
    e = np.swapaxes(x[elements[:, 1:]] - x[elements[:, :1]], 1, 2)
    bad = np.linalg.det(e) <= 0
    if np.any(bad):
        raise InvertedElement(f"{int(bad.sum())} element(s) inverted")


def _element_metric(mesh, metric, vertices=None):
    """Metric per element as the mean of interpolated vertex metrics."""
    x = mesh.vertices if vertices is None else vertices
    _check_orientation(x, mesh.elements)
    m_v, dm_v = metric.at(x)
    if metric.frozen:
        return metric.values, m_v, np.zeros_like(dm_v)
    return m_v[mesh.elements].mean(axis=1), m_v, dm_v


def _energy_terms(x, elements, m_k, q, want_grad):
    d = x.shape[1]
    e = np.swapaxes(x[elements[:, 1:]] - x[elements[:, :1]], 1, 2)
    det_e = np.linalg.det(e)
    vol = det_e / math.factorial(d)
    if np.any(vol <= 0):
        raise InvertedElement(f"{int(np.sum(vol <= 0))} element(s) inverted")
    b = np.linalg.inv(e)
    minv = np.linalg.inv(m_k)
    m = np.sqrt(np.linalg.det(m_k))
    bmb = b @ minv @ np.swapaxes(b, 1, 2)
    t = np.einsum("ij,nji->n", q, bmb)
    a = 0.75 * d
    c = d ** a
    z = m * vol
    g = z * t**a / 3.0 + c / 3.0 * z ** (1.0 - a)
    if not want_grad:
        return g, None, None
    dg_dz = t**a / 3.0 + c / 3.0 * (1.0 - a) * z ** (-a)
    dg_dt = a / 3.0 * z * t ** (a - 1.0)
    bt = np.swapaxes(b, 1, 2)
    dt_de = -2.0 * bt @ q @ b @ minv @ bt
    dv_de = vol[:, None, None] * bt
    dg_de = (dg_dz * m)[:, None, None] * dv_de + dg_dt[:, None, None] * dt_de
    btqb = bt @ q @ b
    dt_dm = -minv @ btqb @ minv
    dm_dm = 0.5 * m[:, None, None] * minv
    dg_dm = (dg_dz * vol)[:, None, None] * dm_dm + dg_dt[:, None, None] * dt_dm
    return g, dg_de, dg_dm


def mesh_energy(mesh, metric, vertices=None):
    """Total mesh energy; raises :class:`InvertedElement` for inverted elements."""
    x = mesh.vertices if vertices is None else np.asarray(vertices, dtype=float)
    m_k, _, _ = _element_metric(mesh, metric, x)
    q = reference_simplex(mesh.dim)
    q = q.T @ q
    g, _, _ = _energy_terms(x, mesh.elements, m_k, q, False)
    return float(g.sum())


def energy_gradient(mesh, metric, vertices=None):
    """Analytic gradient of :func:`mesh_energy` with respect to every vertex."""
    x = mesh.vertices if vertices is None else np.asarray(vertices, dtype=float)
    d = mesh.dim
    m_k, _, dm_v = _element_metric(mesh, metric, x)
    rq = reference_simplex(d)
    _, dg_de, dg_dm = _energy_terms(x, mesh.elements, m_k, rq.T @ rq, True)
    grad = np.zeros_like(x)
    cols = np.swapaxes(dg_de, 1, 2)  # row j = d g / d x_{j+1}
    for j in range(d):
        np.add.at(grad, mesh.elements[:, j + 1], cols[:, j])
    np.add.at(grad, mesh.elements[:, 0], -cols.sum(axis=1))
    # metric dependence: M_K averages the interpolated metric at its vertices
    for j in range(d + 1):
        vid = mesh.elements[:, j]
        contrib = np.einsum("nab,nabk->nk", dg_dm, dm_v[vid]) / (d + 1)
        np.add.at(grad, vid, contrib)
    return grad


# ---------------------------------------------------------------------------
# boundary handling and velocities


def _boundary_constraints(mesh, mode):
    """Projection matrices per vertex (zero = fixed, identity = free)."""
    d = mesh.dim
    proj = np.broadcast_to(np.eye(d), (mesh.n_vertices, d, d)).copy()
    proj[mesh.boundary] = 0.0
    if mode == "slide" and d > 1:
        facets = mesh.boundary_facets()
        pts = mesh.vertices[facets]
        if d == 2:
            t = pts[:, 1] - pts[:, 0]
            normals = np.stack([-t[:, 1], t[:, 0]], axis=1)
        else:
            normals = np.cross(pts[:, 1] - pts[:, 0], pts[:, 2] - pts[:, 0])
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        incident = [[] for _ in range(mesh.n_vertices)]
        for f, verts in enumerate(facets):
            for v in verts:
                incident[v].append(f)
        for v in np.flatnonzero(mesh.boundary):
            ns = normals[incident[v]]
            if len(ns) and np.all(np.abs(np.abs(ns @ ns[0]) - 1.0) < 1e-10):
                n = ns[0]
                proj[v] = np.eye(d) - np.outer(n, n)
    return proj


def vertex_velocities(mesh, metric, tau=1e-2, boundary="fixed", vertices=None, _proj=None):
    """``dx_i/dt = -sqrt(det M(x_i))/tau * dI/dx_i`` with boundary constraints."""
    x = mesh.vertices if vertices is None else np.asarray(vertices, dtype=float)
    grad = energy_gradient(mesh, metric, x)
    m_v, _ = metric.at(x)
    vel = -np.sqrt(np.linalg.det(m_v))[:, None] / tau * grad
    proj = _boundary_constraints(mesh, boundary) if _proj is None else _proj
    return np.einsum("nij,nj->ni", proj, vel)


def _edges(mesh):
    indptr, indices = vertex_neighbors(mesh)
    rows = np.repeat(np.arange(len(indptr) - 1), np.diff(indptr))
    keep = rows < indices
    return np.stack([rows[keep], indices[keep]], axis=1)


def _jacobian_sparsity(mesh, free):
    indptr, indices = vertex_neighbors(mesh)
    n = mesh.n_vertices
    adj = sp.csr_matrix((np.ones(len(indices)), indices, indptr), shape=(n, n)) + sp.identity(n)
    adj = adj[free][:, free]
    return sp.kron(adj, np.ones((mesh.dim, mesh.dim)), format="csr")


@dataclass
class MotionReport:
    steps: int = 0
    rejected: int = 0
    restarts: int = 0
    energy_start: float = 0.0
    energy_end: float = 0.0
    energy_history: list = field(default_factory=list)
    quality_flag: bool = False
    settled_at: float = None


def integrate_mmpde(mesh, metric, config=None, report=None):
    """Move the vertices from t = 0 to ``t_end`` with connectivity fixed.

    A variable-order BDF integrator (finite-difference Jacobian with the
    vertex-adjacency sparsity) advances the flow. Error control is absolute,
    in units of each vertex's shortest incident edge. A Newton iterate that
    inverts an element counts as non-convergence, so the integrator shrinks
    the step itself. A step is accepted only if no element inverts and the
    energy does not increase; otherwise the integrator restarts from the last
    accepted state with a halved maximum step. Integration stops early once the flow has settled: the current
    speed sustained until ``t_end`` would move no vertex by more than
    ``settle_tol`` times its shortest incident edge. Raises
    :class:`MeshMotionStalled` (carrying the last valid mesh) when the step
    underflows.
    """
    config = config or MmpdeConfig()
    report = report if report is not None else MotionReport()
    d = mesh.dim
    proj = _boundary_constraints(mesh, config.boundary)
    free = np.flatnonzero(np.abs(proj).sum(axis=(1, 2)) > 0)
    x_all = mesh.vertices.copy()
    energy0 = mesh_energy(mesh, metric)
    report.energy_start = report.energy_end = energy0
    report.energy_history = [energy0]
    if free.size == 0:
        return mesh

    def unpack(y):
        x = x_all.copy()
        x[free] = y.reshape(-1, d)
        return x

    def rhs(t, y):
        vel = vertex_velocities(mesh, metric, config.tau, vertices=unpack(y), _proj=proj)
        return vel[free].ravel()

    def bdf_rhs(t, y):
        # a non-finite rate makes the Newton iteration report non-convergence,
        # so the integrator shrinks the step itself instead of failing
        try:
            return rhs(t, y)
        except InvertedElement:
            return np.full(y.shape, np.nan)

    sparsity = _jacobian_sparsity(mesh, free)
    edges = _edges(mesh)

    def settled(t, y):
        x = unpack(y)
        length = np.full(len(x), np.inf)
        np.minimum.at(length, edges.ravel(), np.repeat(np.linalg.norm(x[edges[:, 0]] - x[edges[:, 1]], axis=1), 2))
        speed = np.linalg.norm(rhs(t, y).reshape(-1, d), axis=1)
        return bool(np.all(speed * (config.t_end - t) <= config.settle_tol * length[free]))

    heights0 = mesh_stats(mesh).a_h
    # error control in units of the local edge length: coordinates near the
    # boundary are O(1) while the elements there can be tiny, so a
    # coordinate-relative tolerance would let steps scramble the boundary layer
    local = np.full(len(x_all), np.inf)
    np.minimum.at(local, edges.ravel(),
                  np.repeat(np.linalg.norm(x_all[edges[:, 0]] - x_all[edges[:, 1]], axis=1), 2))
    atol = np.repeat(config.atol_scale * local[free], d)
    t, y, energy = 0.0, x_all[free].ravel(), energy0
    cap = np.inf  # step cap after a rejection, relaxed after RELAX_AFTER good steps
    # the automatic first-step guess can invert elements; start from a step
    # that moves no vertex more than a tenth of the smallest height
    speed = np.max(np.abs(rhs(t, y)))
    first = 0.1 * heights0 / speed if speed > 0 else config.t_end
    # strongly graded metrics make the flow arbitrarily fast, so step
    # underflow is measured against the time the fastest vertex needs to
    # cross the smallest element
    floor = MIN_STEP * min(1.0, 10.0 * first)
    while t < config.t_end * (1 - 1e-12):
        if cap < floor:
            raise MeshMotionStalled(
                f"mesh motion stalled at t={t:.6g} (step below {floor:.3g})",
                mesh=mesh.with_vertices(unpack(y)),
            )
        first = min(first, cap, config.t_end - t)
        solver = BDF(bdf_rhs, t, y, config.t_end, max_step=cap, rtol=config.rtol,
                     atol=atol, jac_sparsity=sparsity, first_step=first)
        good = 0
        while solver.status == "running":
            if report.steps >= config.max_steps:
                raise MeshMotionStalled("mesh motion exceeded the step budget", mesh=mesh.with_vertices(unpack(y)))
            attempted = solver.h_abs
            ok = True
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    msg = solver.step()
                if solver.status == "failed":
                    raise InvertedElement(msg or "integrator failure")
                e_new = mesh_energy(mesh, metric, unpack(solver.y))
                ok = e_new <= energy + config.energy_tol * abs(energy)
                reason = f"energy rose by {(e_new - energy) / abs(energy):.2e} (relative)"
            except (InvertedElement, np.linalg.LinAlgError, FloatingPointError) as exc:
                ok, reason = False, str(exc)
            if not ok:
                log.debug("step rejected at t=%.4g, h=%.3g: %s", t, attempted, reason)
                report.rejected += 1
                report.restarts += 1
                cap = min(attempted, solver.h_abs) / 2
                first = cap
                break
            report.steps += 1
            good += 1
            t, y, energy = solver.t, solver.y.copy(), e_new
            report.energy_history.append(energy)
            if config.settle_tol > 0 and report.steps % SETTLE_EVERY == 0 and settled(t, y):
                report.settled_at = t
                break
            if np.isfinite(cap) and good >= RELAX_AFTER:
                cap = cap * 8 if cap * 8 < config.t_end else np.inf
                first = solver.h_abs
                report.restarts += 1
                break
        else:
            if solver.status == "finished":
                break
        if report.settled_at is not None:
            break
    report.energy_end = energy
    new_mesh = mesh.with_vertices(unpack(y))
    heights = new_mesh.heights.min(axis=1)
    report.quality_flag = bool(np.any(heights / new_mesh.diameters < QUALITY_FLOOR))
    return new_mesh


# ---------------------------------------------------------------------------
# solve / adapt loop


@dataclass
class AdaptRound:
    n_elements: int
    a_h: float
    iterations: int
    errors: dict
    alpha: float
    motion: MotionReport = None
    flagged_hessians: int = 0
    converged: bool = True
    mesh: object = None
    solution: np.ndarray = None


@dataclass
class AdaptResult:
    mesh: object
    solution: np.ndarray
    rounds: list
    next_mesh: object = None
    stalled: bool = False
    message: str = ""


def adapt_loop(problem, mesh, l_max=5, solver_config=None, config=None, solve=None):
    """Alternate fixed-mesh solves and mesh motion for ``l_max`` rounds.

    Every round rebuilds the overlay grid and symbol for the current mesh.
    The returned ``mesh``/``solution`` are the last solved pair; ``next_mesh``
    holds the mesh produced by the final motion. A stalled motion or failed
    solve ends the loop early with the best result so far.
    """
    from .problems import error_norms, solve_benchmark

    config = config or MmpdeConfig(l_max=l_max)
    solver_config = dict(solver_config or {})
    solve = solve or (lambda m: solve_benchmark(problem, m, **solver_config))
    result = AdaptResult(mesh=mesh, solution=None, rounds=[])
    current = mesh
    for _ in range(l_max):
        converged = True
        try:
            u, rep = solve(current)
        except NotConverged as exc:
            u, rep, converged = exc.solution, exc.report, False
        errors = rep.errors
        if errors is None and getattr(problem, "exact", None) is not None:
            errors = error_norms(current, u, problem.exact)
        stats = mesh_stats(current)
        result.mesh, result.solution = current, u
        hess = recover_hessian(current, u)
        metric = metric_from_hessian(current, hess)
        motion = MotionReport()
        entry = AdaptRound(
            n_elements=current.n_elements,
            a_h=stats.a_h,
            iterations=rep.iterations,
            errors=errors,
            alpha=metric.alpha,
            motion=motion,
            flagged_hessians=int(hess.flagged.sum()),
            converged=converged,
            mesh=current,
            solution=u,
        )
        result.rounds.append(entry)
        if not converged:
            result.message = "solver did not converge"
            break
        try:
            current = integrate_mmpde(current, metric, config, motion)
        except MeshMotionStalled as exc:
            result.stalled = True
            result.message = str(exc)
            result.next_mesh = exc.mesh
            break
        result.next_mesh = current
    return result
