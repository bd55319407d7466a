"""Radius functions: the potential scale rho_V, the comparability axiom, maxima and coverings."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import qmc

from .weights import Estimate, Potential, Weight, as_points, laplacian_potential, to_real


class RadiusError(ValueError):
    pass


@dataclass
class RadiusField:
    """Evaluable radius function x -> rho(x) on C^n."""

    n: int
    func: Callable
    provenance: str
    C: float | None = None
    profile: Callable | None = None  # t -> rho(t e_1) when rho depends only on |x|
    potential: Potential | None = None
    tol: float | None = None
    meta: dict = field(default_factory=dict)

    def __call__(self, x) -> np.ndarray:
        return self.func(as_points(x, self.n))

    @property
    def radial(self) -> bool:
        return self.profile is not None


def _bisect(V: Potential, x: np.ndarray, rmin: float, rmax: float, tol: float) -> np.ndarray:
    """Largest r with r^2 sup_{B(x,r)} V <= 1, for each row of x."""
    x = x.reshape(-1, V.n)
    N = len(x)
    f_lo = rmin ** 2 * V.sup_balls(x, np.full(N, rmin))
    if np.any(f_lo >= 1):
        i = int(np.argmax(f_lo >= 1))
        raise RadiusError(f"potential too singular at rmin={rmin:g} near x={x[i]}")
    f_hi = rmax ** 2 * V.sup_balls(x, np.full(N, rmax))
    if np.any(f_hi <= 1):
        i = int(np.argmax(f_hi <= 1))
        raise RadiusError(f"potential too small on reachable scales (rmax={rmax:g}) near x={x[i]}")
    # bisect in log r; f is strictly increasing in r
    lo = np.full(N, np.log(rmin))
    hi = np.full(N, np.log(rmax))
    while np.max(hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        r = np.exp(mid)
        below = r ** 2 * V.sup_balls(x, r) <= 1
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return np.exp(lo)


def rho_from_potential(V: Potential, x, rmin: float = 1e-6, rmax: float = 1e3, tol: float = 1e-10):
    """rho_V(x) = sup{r : r^2 sup_{B(x,r)} V <= 1} by monotone bisection.

    Returns the lower end of the final bracket, so r^2 sup V <= 1 holds exactly;
    the relative bracket width is below ``tol``.
    """
    pts = as_points(x, V.n)
    shape = pts.shape[:-1]
    return _bisect(V, pts, rmin, rmax, tol).reshape(shape)


def radius_from_potential(V: Potential, rmin: float = 1e-6, rmax: float = 1e3, tol: float = 1e-10) -> RadiusField:
    profile = None
    if V.profile is not None:
        def profile(t):
            t = np.asarray(t, float)
            pts = np.zeros(t.shape + (V.n,), complex)
            pts[..., 0] = t
            return rho_from_potential(V, pts, rmin, rmax, tol)
    return RadiusField(V.n, lambda x: rho_from_potential(V, x, rmin, rmax, tol), "from-potential",
                       profile=profile, potential=V, tol=tol,
                       meta={"potential": V.name, "sup_oracle": "radial-exact" if V.exact_sup else "halton"})


def weight_radius(w: Weight, **kw) -> RadiusField:
    """rho of the weight: the radius function of the potential laplacian(phi)."""
    return radius_from_potential(laplacian_potential(w), **kw)


def constant_radius(c: float, n: int = 1) -> RadiusField:
    c = float(c)
    if c <= 0:
        raise RadiusError("radius must be positive")
    return RadiusField(n, lambda x: np.full(x.shape[:-1], c), "constant", C=1.0,
                       profile=lambda t: np.full(np.shape(t), c))


def scaled_radius(rho: RadiusField, c: float) -> RadiusField:
    prof = None if rho.profile is None else (lambda t: c * rho.profile(t))
    return RadiusField(rho.n, lambda x: c * rho.func(x), "scaled", profile=prof,
                       meta={"scale": c, "base": rho.provenance})


def max_radius(a: RadiusField, b: RadiusField) -> RadiusField:
    """Pointwise maximum of two radius functions."""
    if a.n != b.n:
        raise RadiusError("radius fields live on different dimensions")
    prof = None
    if a.profile is not None and b.profile is not None:
        prof = lambda t: np.maximum(a.profile(t), b.profile(t))
    return RadiusField(a.n, lambda x: np.maximum(a.func(x), b.func(x)), "max-of-two", profile=prof,
                       meta={"left": a.provenance, "right": b.provenance})


# ---------------------------------------------------------------- audits

def halton_box(box, count: int, skip: int = 1) -> np.ndarray:
    """Deterministic unscrambled Halton points in a real box [(lo, hi), ...]."""
    box = np.asarray(box, float)
    h = qmc.Halton(d=len(box), scramble=False).random(count + skip)[skip:]
    return box[:, 0] + h * (box[:, 1] - box[:, 0])


def axiom_pairs(rho: RadiusField, box, count: int = 200, scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Pairs (x, y) with x in box and y in B(x, scale rho(x)), deterministic."""
    d = 2 * rho.n
    h = qmc.Halton(d=2 * d, scramble=False).random(count + 1)[1:]
    box = np.asarray(box, float)
    xr = box[:, 0] + h[:, :d] * (box[:, 1] - box[:, 0])
    x = as_points(xr, rho.n)
    u = 2 * h[:, d:] - 1
    u /= np.maximum(np.linalg.norm(u, axis=1, keepdims=True), 1.0)
    y = x + as_points(0.999 * scale * rho(x)[:, None] * u, rho.n)
    return x, y


def radius_axiom_constant(rho: RadiusField, x, y) -> Estimate:
    """C = max over pairs of max(rho(x)/rho(y), rho(y)/rho(x))."""
    rx, ry = rho(x), rho(y)
    q = np.maximum(rx / ry, ry / rx)
    i = int(np.argmax(q))
    return Estimate(float(q[i]), (as_points(x, rho.n)[i], as_points(y, rho.n)[i]))


def sandwich_audit(rho: RadiusField, points, D: float) -> dict:
    """Check rho^-2/(4D) <= sup_{B(x,rho(x))} V <= rho^-2 at every point."""
    V = rho.potential
    if V is None:
        raise RadiusError("sandwich audit needs a from-potential field")
    pts = as_points(points, rho.n).reshape(-1, rho.n)
    r = rho(pts)
    s = V.sup_balls(pts, r)
    scaled = s * r ** 2
    lower_bad = scaled < 1 / (4 * D)
    upper_bad = scaled > 1 + 1e-12
    return {"points": len(pts), "D": D, "min_scaled_sup": float(scaled.min()),
            "max_scaled_sup": float(scaled.max()),
            "violations": int(np.sum(lower_bad | upper_bad))}


def polynomial_comparability(rho: RadiusField, x, y) -> dict:
    """Report (C, M) with C^-1 t^-M <= rho(y)/rho(x) <= C t^M, t = max(|x-y|/rho(x), 1).

    C is taken from the pairs with t = 1; M is the smallest exponent making the
    remaining pairs fit.  Report-only.
    """
    xs, ys = as_points(x, rho.n), as_points(y, rho.n)
    rx, ry = rho(xs), rho(ys)
    t = np.maximum(np.linalg.norm(xs - ys, axis=-1) / rx, 1.0)
    lq = np.abs(np.log(ry / rx))
    near = t == 1.0
    C = float(np.exp(lq[near].max())) if near.any() else 1.0
    far = ~near
    M, wit = 0.0, None
    if far.any():
        need = (lq[far] - np.log(C)) / np.log(t[far])
        i = int(np.argmax(need))
        M = max(float(need[i]), 0.0)
        wit = (xs[far][i], ys[far][i])
    return {"C": C, "M": M, "pairs": int(len(t)), "witness": wit}


def admissibility_radius_bound(c: float, inf_sup: float) -> float:
    """Upper bound for rho from the admissibility infimum: max(c, inf_sup^-1/2)."""
    return max(c, 1 / np.sqrt(inf_sup))


def box_min_radius(rho: RadiusField, box, per_axis: int | None = None) -> float:
    """Audited minimum of rho over a box (grid including the corners).

    The default probe has 41 points per axis in real dimension 2 and 11 above.
    """
    box = np.asarray(box, float)
    if per_axis is None:
        per_axis = 41 if len(box) <= 2 else 11
    if rho.radial:
        far = np.linalg.norm(np.maximum(np.abs(box[:, 0]), np.abs(box[:, 1])))
        ts = np.linspace(0, far, per_axis * 4)
        return float(np.min(rho.profile(ts)))
    axes = [np.linspace(lo, hi, per_axis if hi > lo else 1) for lo, hi in box]
    g = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([a.ravel() for a in g], -1)
    return float(np.min(rho(as_points(pts, rho.n))))


@dataclass
class Covering:
    centers: np.ndarray  # complex (K, n)
    radii: np.ndarray
    overlap: int
    box: np.ndarray
    C: float
    audit_points: int
    uncovered: int

    def rows(self):
        real = to_real(self.centers)
        return [list(p) + [r] for p, r in zip(real, self.radii)]


def build_covering(rho: RadiusField, box, C: float | None = None) -> Covering:
    """Greedy maximal family of disjoint shrunken balls B(x, rho(x)/(1+C^2)).

    Candidates form a grid of spacing rho_min/4 scanned in row-major order; the
    same grid is the audit set for coverage and multiplicity.
    """
    box = np.asarray(box, float)
    rmin = box_min_radius(rho, box)
    if not np.isfinite(rmin) or rmin <= 0:
        raise RadiusError("radius not bounded below on the box")
    if C is None:
        C = rho.C
    if C is None:
        x, y = axiom_pairs(rho, box, 200)
        C = radius_axiom_constant(rho, x, y).value
    step = rmin / 4
    axes = [np.linspace(lo, hi, max(1, int(np.ceil((hi - lo) / step)) + 1)) for lo, hi in box]
    g = np.meshgrid(*axes, indexing="ij")
    cand = np.stack([a.ravel() for a in g], -1)
    r_all = rho(as_points(cand, rho.n))
    shrink = 1 + C * C
    small = r_all / shrink
    tree = cKDTree(cand)
    smax = small.max()
    # blocked[i]: the shrunken ball at candidate i meets an accepted shrunken ball
    blocked = np.zeros(len(cand), bool)
    chosen = []
    for i in range(len(cand)):
        if blocked[i]:
            continue
        chosen.append(i)
        idx = np.asarray(tree.query_ball_point(cand[i], small[i] + smax), int)
        if idx.size:
            dist = np.linalg.norm(cand[idx] - cand[i], axis=1)
            blocked[idx[dist < small[idx] + small[i]]] = True
    centers, radii = cand[chosen], r_all[chosen]
    counts = np.zeros(len(cand), int)
    for c, r in zip(centers, radii):
        idx = tree.query_ball_point(c, r * (1 + 1e-12))
        counts[idx] += 1
    return Covering(as_points(centers, rho.n), radii, int(counts.max()), box, float(C),
                    len(cand), int(np.sum(counts == 0)))


def probe_rows(rho: RadiusField, points):
    pts = as_points(points, rho.n).reshape(-1, rho.n)
    return [list(p) + [r] for p, r in zip(to_real(pts), rho(pts))]
