"""Distances for the conformal metric rho^-2 |dx|^2.

Radial fields reduce to a 1-D integral along rays; general fields use
shortest paths on a grid graph whose edges carry length x mean(1/rho).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy import integrate, sparse
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.csgraph import dijkstra

from .radius import RadiusField, box_min_radius
from .weights import as_points, to_real

OCTILE_DISTORTION = 1.0824  # worst-case overestimate of the 8-neighbour path metric, sqrt(4 - 2 sqrt 2)
NODE_CAP = 20_000_000


class MetricError(ValueError):
    pass


def audit_radial(rho: RadiusField, radii, directions: int = 8, rtol: float = 1e-8) -> float:
    """Max relative deviation of rho from its radial profile on spheres of the given radii."""
    d = 2 * rho.n
    dirs = []
    for k in range(directions):
        v = np.zeros(d)
        a = 2 * np.pi * k / directions
        v[0], v[(k % (d - 1)) + 1] = np.cos(a), np.sin(a)
        dirs.append(v)
    dirs = np.array(dirs)
    worst = 0.0
    for t in np.atleast_1d(radii):
        pts = as_points(t * dirs, rho.n)
        vals = rho(pts)
        ref = rho.profile(np.array([t]))[0]
        worst = max(worst, float(np.max(np.abs(vals / ref - 1))))
    if worst > rtol:
        raise MetricError(f"field declared radial deviates from its profile by {worst:.2e}")
    return worst


def distance_radial(rho: RadiusField, z, audit: bool = True) -> float:
    """d(0, z) = int_0^|z| ds / rho(s e_1); rays from the origin are assumed to be geodesics."""
    if rho.profile is None:
        raise MetricError("distance_radial needs a radial field")
    R = float(np.linalg.norm(as_points(z, rho.n)))
    if R == 0:
        return 0.0
    if audit:
        audit_radial(rho, [R / 2, R])
    inv = lambda s: 1.0 / float(rho.profile(np.array([s]))[0])
    val, _ = integrate.quad(inv, 0.0, R, epsabs=0.0, epsrel=1e-10, limit=200)
    return float(val)


# ---------------------------------------------------------------- grids

def stencil(d: int) -> np.ndarray:
    """Half of the neighbour offsets (one of each +/- pair).

    d = 2: the 8-neighbour stencil.  d > 2: axis moves plus planar diagonals.
    """
    offs = []
    for o in itertools.product((-1, 0, 1), repeat=d):
        o = np.array(o)
        nz = np.count_nonzero(o)
        if nz == 0 or (d > 2 and nz > 2):
            continue
        if o[np.flatnonzero(o)[0]] > 0:
            offs.append(o)
    return np.array(offs)


@dataclass
class MetricGrid:
    axes: list[np.ndarray]
    h: float
    rho_nodes: np.ndarray  # shape of the grid
    graph: sparse.csr_matrix
    n: int

    @property
    def shape(self) -> tuple:
        return tuple(len(a) for a in self.axes)

    def nodes(self) -> np.ndarray:
        g = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([a.ravel() for a in g], -1)

    def index(self, point) -> int:
        """Flat index of the node at ``point`` (real coordinates); must be a node."""
        idx = []
        for a, p in zip(self.axes, point):
            k = int(round((p - a[0]) / self.h))
            if k < 0 or k >= len(a) or abs(a[k] - p) > 1e-9 * max(1.0, abs(p)):
                raise MetricError(f"point {point} is not a grid node")
            idx.append(k)
        return int(np.ravel_multi_index(idx, self.shape))


def build_grid(rho: RadiusField, box, h: float, anchor) -> MetricGrid:
    """Grid anchored at ``anchor`` (a real point), spacing h, clipped to the box."""
    box = np.asarray(box, float)
    anchor = np.asarray(anchor, float)
    if np.any(anchor < box[:, 0] - 1e-12) or np.any(anchor > box[:, 1] + 1e-12):
        raise MetricError("source outside the box")
    rmin = box_min_radius(rho, box)
    if h > rmin / 4 * (1 + 1e-9):
        raise MetricError(f"h={h:g} too coarse: needs h <= rho_min/4 = {rmin / 4:.6g}")
    axes = []
    for (lo, hi), s in zip(box, anchor):
        k0 = int(np.ceil((lo - s) / h - 1e-9))
        k1 = int(np.floor((hi - s) / h + 1e-9))
        axes.append(s + h * np.arange(k0, k1 + 1))
    shape = tuple(len(a) for a in axes)
    N = int(np.prod(shape))
    if N > NODE_CAP:
        raise MetricError(f"{N} nodes exceeds the cap {NODE_CAP}")
    g = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([a.ravel() for a in g], -1)
    r = rho(as_points(pts, rho.n)).reshape(shape)
    inv = 1.0 / r
    flat = np.arange(N).reshape(shape)
    rows, cols, vals = [], [], []
    for o in stencil(len(shape)):
        src = tuple(slice(max(0, -k), s - max(0, k)) for k, s in zip(o, shape))
        dst = tuple(slice(max(0, k), s - max(0, -k)) for k, s in zip(o, shape))
        length = h * np.sqrt(np.sum(o * o))
        rows.append(flat[src].ravel())
        cols.append(flat[dst].ravel())
        vals.append((length * 0.5 * (inv[src] + inv[dst])).ravel())
    A = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N))
    return MetricGrid(axes, h, r, A.tocsr(), rho.n)


@dataclass
class DistanceField:
    source: np.ndarray  # real coordinates
    grid: MetricGrid
    d: np.ndarray  # grid-shaped
    method: str = "grid-dijkstra"

    def at(self, points) -> np.ndarray:
        """Multilinear interpolation of d at real points."""
        f = RegularGridInterpolator(self.grid.axes, self.d, bounds_error=True)
        return f(np.atleast_2d(points))

    def rows(self):
        pts = self.grid.nodes()
        return [list(p) + [v] for p, v in zip(pts, self.d.ravel())]


def distances_from(grid: MetricGrid, sources) -> np.ndarray:
    """Grid distances from each real source point, shape (len(sources), N)."""
    idx = [grid.index(s) for s in np.atleast_2d(sources)]
    return dijkstra(grid.graph, directed=False, indices=idx)


def distance_grid(rho: RadiusField, box, h: float, source) -> DistanceField:
    """Single-source shortest paths on the grid anchored at ``source``."""
    src = to_real(as_points(source, rho.n).reshape(rho.n))
    grid = build_grid(rho, box, h, src)
    d = distances_from(grid, src[None])[0].reshape(grid.shape)
    return DistanceField(src, grid, d)


# ---------------------------------------------------------------- audits

def lipschitz_audit(field: DistanceField, rho: RadiusField) -> float:
    """max over grid edges of |d(a) - d(b)| / |a - b| * rho(midpoint)."""
    grid = field.grid
    shape = grid.shape
    best = 0.0
    for o in stencil(len(shape)):
        src = tuple(slice(max(0, -k), s - max(0, k)) for k, s in zip(o, shape))
        dst = tuple(slice(max(0, k), s - max(0, -k)) for k, s in zip(o, shape))
        da, db = field.d[src], field.d[dst]
        if da.size == 0:
            continue
        length = grid.h * np.sqrt(np.sum(o * o))
        g = np.meshgrid(*[a[s] for a, s in zip(grid.axes, src)], indexing="ij")
        mid = np.stack([a.ravel() for a in g], -1) + 0.5 * grid.h * o
        rm = rho(as_points(mid, rho.n))
        best = max(best, float(np.max(np.abs(da - db).ravel() / length * rm)))
    return best


def ball_sandwich_audit(rho: RadiusField, samples, C: float, refine: int = 8) -> dict:
    """Check B_rho(x, r/C) in B(x, r rho(x)) in B_rho(x, C r) on grid nodes.

    For each (x, r <= 1) a local grid of spacing rho_min/``refine`` is built
    around x.  Slack: h/rho_min additively, and the stencil distortion on the
    upper inclusion since grid distances overestimate.
    """
    violations, checked, details = 0, 0, []
    for x, r in samples:
        if r > 1:
            raise ValueError("sandwich audit needs r <= 1")
        xc = as_points(x, rho.n).reshape(rho.n)
        xr = to_real(xc)
        rx = float(rho(xc[None])[0])
        half = 1.5 * C * r * rx + 1e-12
        box = np.stack([xr - half, xr + half], 1)
        rmin = box_min_radius(rho, box)
        h = rmin / refine
        f = distance_grid(rho, box, h, xc)
        pts = f.grid.nodes()
        eu = np.linalg.norm(pts - xr, axis=1)
        d = f.d.ravel()
        slack = h / rmin
        bad_inner = (d < r / C) & (eu > r * rx + h)
        bad_outer = (eu < r * rx) & (d > OCTILE_DISTORTION * C * r + slack)
        v = int(bad_inner.sum() + bad_outer.sum())
        violations += v
        checked += len(d)
        details.append({"x": xr, "r": r, "rho_x": rx, "h": h, "violations": v})
    return {"samples": len(details), "nodes_checked": checked, "violations": violations, "C": C,
            "details": details}
