"""Plurisubharmonic weights, their differential data and hypothesis checks.

Points in C^n are complex arrays of shape (..., n).  Real coordinates are
interleaved as (x1, y1, x2, y2, ...).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.stats import qmc
from scipy.special import ndtri

FAMILIES = ("fock", "radial_power", "gamma_monomials", "decoupled", "custom_radial")


class WeightError(ValueError):
    """Invalid weight specification."""


class NotPlurisubharmonicError(WeightError):
    def __init__(self, point, eigenvalue):
        self.point = point
        self.eigenvalue = eigenvalue
        super().__init__(
            f"weight is not plurisubharmonic: min eigenvalue {eigenvalue:.3e} of the "
            f"complex Hessian at z={np.array2string(np.asarray(point), precision=4)}"
        )


class ZeroLaplacianError(ValueError):
    """Every probed point or ball has vanishing potential."""


def as_points(z, n: int) -> np.ndarray:
    """Coerce input to complex points of shape (..., n).

    Real input whose last axis has length 2n is read as interleaved (x, y).
    """
    z = np.asarray(z)
    if not np.iscomplexobj(z) and z.shape[-1:] == (2 * n,):
        return z[..., 0::2] + 1j * z[..., 1::2]
    z = z.astype(complex)
    if n == 1 and z.shape[-1:] != (1,):
        z = z[..., None]
    return z


def to_real(z: np.ndarray) -> np.ndarray:
    """Complex (..., n) -> real interleaved (..., 2n)."""
    out = np.empty(z.shape[:-1] + (2 * z.shape[-1],))
    out[..., 0::2] = z.real
    out[..., 1::2] = z.imag
    return out


class Weight:
    """Base class.  Subclasses provide closed-form phi, dphi and hessian.

    ``dphi`` is the holomorphic derivative d(phi)/dz_j; ``hessian`` is the
    complex Hessian H_jk = d^2 phi / dz_j d(conj z_k).
    """

    family: str
    n: int
    params: dict
    # t -> laplacian(t e_1) for weights radial about the origin
    radial_profile: Callable | None = None
    radial_monotone: bool = False
    separable: bool = False

    def phi(self, z) -> np.ndarray:
        raise NotImplementedError

    def dphi(self, z) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, z) -> np.ndarray:
        raise NotImplementedError

    def laplacian(self, z) -> np.ndarray:
        """4 tr H, real."""
        return 4 * np.real(np.trace(self.hessian(z), axis1=-2, axis2=-1))

    def grad(self, z) -> np.ndarray:
        """Real gradient (d/dx1, d/dy1, ...) of phi."""
        d = self.dphi(as_points(z, self.n))
        out = np.empty(d.shape[:-1] + (2 * self.n,))
        out[..., 0::2] = 2 * d.real
        out[..., 1::2] = -2 * d.imag
        return out

    def spec(self) -> dict:
        return {"family": self.family, "n": self.n, "params": self.params}

    def __repr__(self):
        return f"Weight({self.spec()})"


class RadialWeight(Weight):
    """phi(z) = g(|z|^2) with g a real polynomial; covers fock, radial_power, custom_radial."""

    def __init__(self, family: str, n: int, params: dict, coefs):
        self.family, self.n, self.params = family, n, params
        self.g = np.trim_zeros(np.asarray(coefs, float), "b")
        if self.g.size == 0:
            self.g = np.zeros(1)
        self.g1 = P.polyder(self.g)
        self.g2 = P.polyder(self.g, 2)
        # laplacian as a polynomial in s = |z|^2
        s = np.array([0.0, 1.0])
        self.lap_poly = 4 * P.polyadd(n * self.g1, P.polymul(s, self.g2))
        self.radial_profile = lambda t: P.polyval(np.asarray(t, float) ** 2, self.lap_poly)
        self.radial_monotone = bool(np.all(self.lap_poly >= 0))
        self.separable = n == 1

    def _s(self, z):
        z = as_points(z, self.n)
        return z, np.sum(np.abs(z) ** 2, axis=-1)

    def phi(self, z):
        _, s = self._s(z)
        return P.polyval(s, self.g)

    def dphi(self, z):
        z, s = self._s(z)
        return P.polyval(s, self.g1)[..., None] * np.conj(z)

    def hessian(self, z):
        z, s = self._s(z)
        eye = np.eye(self.n)
        return (P.polyval(s, self.g1)[..., None, None] * eye
                + P.polyval(s, self.g2)[..., None, None] * np.conj(z)[..., :, None] * z[..., None, :])


def _monomial_grad(z, gamma):
    """Holomorphic partials of z^gamma, shape (..., n)."""
    out = np.empty(z.shape, complex)
    for j, gj in enumerate(gamma):
        if gj == 0:
            out[..., j] = 0
            continue
        term = gj * z[..., j] ** (gj - 1)
        for l, gl in enumerate(gamma):
            if l != j:
                term = term * z[..., l] ** gl
        out[..., j] = term
    return out


class MonomialWeight(Weight):
    """phi(z) = sum_g c_g |z^g|^2 over a finite exponent set."""

    def __init__(self, n: int, params: dict, gammas, coefs):
        self.family, self.n, self.params = "gamma_monomials", n, params
        self.gammas = [tuple(int(a) for a in g) for g in gammas]
        self.coefs = [float(c) for c in coefs]
        self.separable = all(sum(1 for a in g if a) == 1 for g in self.gammas)
        if n == 1:
            deg = [2 * g[0] for g in self.gammas]
            lap = np.zeros(max(deg) + 1)
            for c, g in zip(self.coefs, self.gammas):
                # 4 c m^2 |z|^{2m-2}, as a polynomial in s
                if g[0]:
                    lap[g[0] - 1] += 4 * c * g[0] ** 2
            self.lap_poly = lap
            self.radial_profile = lambda t: P.polyval(np.asarray(t, float) ** 2, lap)
            self.radial_monotone = True

    def _mono(self, z, g):
        out = np.ones(z.shape[:-1], complex)
        for j, a in enumerate(g):
            out = out * z[..., j] ** a
        return out

    def phi(self, z):
        z = as_points(z, self.n)
        return sum(c * np.abs(self._mono(z, g)) ** 2 for c, g in zip(self.coefs, self.gammas))

    def dphi(self, z):
        z = as_points(z, self.n)
        return sum(c * _monomial_grad(z, g) * np.conj(self._mono(z, g))[..., None]
                   for c, g in zip(self.coefs, self.gammas))

    def hessian(self, z):
        z = as_points(z, self.n)
        out = np.zeros(z.shape[:-1] + (self.n, self.n), complex)
        for c, g in zip(self.coefs, self.gammas):
            a = _monomial_grad(z, g)
            out += c * a[..., :, None] * np.conj(a)[..., None, :]
        return out


class DecoupledWeight(Weight):
    """phi(z) = sum_j phi_j(z_j), each phi_j a one-variable radial weight."""

    def __init__(self, params: dict, parts: list[RadialWeight]):
        self.family, self.n, self.params = "decoupled", len(parts), params
        self.parts = parts
        self.separable = True

    def phi(self, z):
        z = as_points(z, self.n)
        return sum(p.phi(z[..., j:j + 1]) for j, p in enumerate(self.parts))

    def dphi(self, z):
        z = as_points(z, self.n)
        return np.concatenate([p.dphi(z[..., j:j + 1]) for j, p in enumerate(self.parts)], axis=-1)

    def hessian(self, z):
        z = as_points(z, self.n)
        out = np.zeros(z.shape[:-1] + (self.n, self.n), complex)
        for j, p in enumerate(self.parts):
            out[..., j, j] = p.hessian(z[..., j:j + 1])[..., 0, 0]
        return out


def _radial_coefs(family: str, params: dict) -> list[float]:
    if family == "fock":
        c = float(params.get("coef", 1.0))
        if c <= 0:
            raise WeightError("fock coef must be > 0")
        return [0.0, c]
    if family == "radial_power":
        m = params.get("m", 1)
        if int(m) != m or m < 1:
            raise WeightError("radial_power needs an integer m >= 1")
        c = float(params.get("coef", 1.0))
        if c <= 0:
            raise WeightError("radial_power coef must be > 0")
        return [0.0] * int(m) + [c]
    if family == "custom_radial":
        coefs = params.get("coefs")
        if coefs is None or len(coefs) == 0:
            raise WeightError("custom_radial needs coefs (phi = sum_k coefs[k] |z|^(2k))")
        return [float(c) for c in coefs]
    raise WeightError(f"unknown family {family!r}")


def psh_probe(n: int) -> np.ndarray:
    """Coarse grid on [-3, 3]^(2n) used to reject non-plurisubharmonic weights."""
    k = 13 if n == 1 else 7
    ax = np.linspace(-3, 3, k)
    grids = np.meshgrid(*([ax] * (2 * n)), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    return as_points(pts, n)


def check_psh(w: Weight, probe=None, tol: float = 1e-10) -> None:
    pts = psh_probe(w.n) if probe is None else as_points(probe, w.n)
    lam = np.linalg.eigvalsh(w.hessian(pts))[..., 0]
    i = int(np.argmin(lam))
    if lam[i] < -tol:
        raise NotPlurisubharmonicError(pts[i], float(lam[i]))


def make_weight(spec: dict) -> Weight:
    """Build a weight from {"family", "n", "params"}."""
    if not isinstance(spec, dict) or "family" not in spec:
        raise WeightError("weight spec must be an object with a 'family' key")
    family = spec["family"]
    params = dict(spec.get("params") or {})
    n = spec.get("n", 1)
    if not isinstance(n, int) or n < 1:
        raise WeightError("n must be an integer >= 1")
    if family in ("fock", "radial_power", "custom_radial"):
        w = RadialWeight(family, n, params, _radial_coefs(family, params))
    elif family == "gamma_monomials":
        gammas = params.get("gamma")
        if not gammas:
            raise WeightError("gamma_monomials needs a nonempty 'gamma' exponent list")
        gammas = [list(g) for g in gammas]
        if any(len(g) != n for g in gammas):
            raise WeightError(f"each exponent must have length n={n}")
        if any(int(a) != a or a < 0 for g in gammas for a in g) or any(not any(g) for g in gammas):
            raise WeightError("exponents must be integers >= 0, each with a nonzero entry")
        coefs = params.get("coefs", [1.0] * len(gammas))
        if len(coefs) != len(gammas) or any(c <= 0 for c in coefs):
            raise WeightError("coefs must be positive, one per exponent")
        w = MonomialWeight(n, params, gammas, coefs)
    elif family == "decoupled":
        parts_spec = params.get("parts")
        if not parts_spec:
            raise WeightError("decoupled needs a nonempty 'parts' list")
        parts = []
        for p in parts_spec:
            fam = p.get("family")
            if fam not in ("fock", "radial_power", "custom_radial"):
                raise WeightError(f"decoupled parts must be one-variable radial families, got {fam!r}")
            pp = dict(p.get("params") or {})
            parts.append(RadialWeight(fam, 1, pp, _radial_coefs(fam, pp)))
        if spec.get("n", len(parts)) != len(parts):
            raise WeightError("n must equal the number of decoupled parts")
        w = DecoupledWeight(params, parts)
    else:
        raise WeightError(f"unknown family {family!r}; expected one of {', '.join(FAMILIES)}")
    check_psh(w)
    return w


# ---------------------------------------------------------------- potentials

@dataclass
class Potential:
    """Nonnegative scalar field with a sup-over-ball oracle."""

    n: int
    func: Callable
    name: str = "potential"
    profile: Callable | None = None  # t -> V(t e_1), set only when radial and nondecreasing

    def __call__(self, z):
        return self.func(as_points(z, self.n))

    @property
    def exact_sup(self) -> bool:
        return self.profile is not None

    def sup_ball(self, center, r: float) -> float:
        """sup of V over the closed ball B(center, r)."""
        c = as_points(center, self.n).reshape(self.n)
        if self.profile is not None:
            return float(self.profile(np.linalg.norm(c) + r))
        pts = c + r * ball_samples(self.n)
        return float(np.max(self.func(pts)))

    def sup_balls(self, centers, radii) -> np.ndarray:
        """Vectorized sup_ball over matching arrays of centers (N, n) and radii (N,)."""
        c = as_points(centers, self.n).reshape(-1, self.n)
        r = np.broadcast_to(np.asarray(radii, float), (len(c),))
        if self.profile is not None:
            return np.asarray(self.profile(np.linalg.norm(c, axis=-1) + r), float)
        s = ball_samples(self.n)
        out = np.empty(len(c))
        step = max(1, 200_000 // len(s))
        for i in range(0, len(c), step):
            pts = c[i:i + step, None, :] + r[i:i + step, None, None] * s[None]
            out[i:i + step] = np.max(self.func(pts), axis=1)
        return out


def constant_potential(value: float, n: int = 1) -> Potential:
    value = float(value)
    return Potential(n, lambda z: np.full(z.shape[:-1], value), f"constant {value}",
                     lambda t: np.full(np.shape(t), value))


def laplacian_potential(w: Weight) -> Potential:
    prof = w.radial_profile if w.radial_monotone else None
    return Potential(w.n, w.laplacian, f"laplacian of {w.family}", prof)


_BALL_CACHE: dict[int, np.ndarray] = {}


def ball_samples(n: int) -> np.ndarray:
    """64 (2n)^2 deterministic Halton points in the unit ball of C^n, plus the center.

    Halton coordinates are mapped to Gaussian directions by the inverse normal
    CDF and to radii by u^(1/d), so points are spread uniformly in volume.
    """
    if n not in _BALL_CACHE:
        d = 2 * n
        m = 64 * d * d
        h = qmc.Halton(d=d + 1, scramble=False).random(m + 1)[1:]
        g = ndtri(np.clip(h[:, :d], 1e-12, 1 - 1e-12))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        x = g * h[:, d:] ** (1.0 / d)
        x = np.vstack([np.zeros(d), x])
        _BALL_CACHE[n] = as_points(x, n)
    return _BALL_CACHE[n]


def ball_integral(f: Callable, center, r: float, n: int) -> float:
    """Integral of f over the euclidean ball B(center, r) in C^n.

    n=1: 48 Gauss-Legendre radial nodes x 64 equispaced angles.
    n=2: Hopf coordinates, 16 radial x 16 polar Gauss-Legendre nodes x 16 x 16 angles
    (exact for the low-degree polynomial laplacians of the built-in families).
    """
    c = as_points(center, n).reshape(n)
    if n == 1:
        x, wx = np.polynomial.legendre.leggauss(48)
        rad = 0.5 * r * (x + 1)
        wr = 0.5 * r * wx * rad
        th = 2 * np.pi * np.arange(64) / 64
        pts = c[0] + rad[:, None] * np.exp(1j * th)[None, :]
        vals = f(pts[..., None])
        return float(np.sum(wr[:, None] * vals) * 2 * np.pi / 64)
    if n == 2:
        x, wx = np.polynomial.legendre.leggauss(16)
        rad = 0.5 * r * (x + 1)
        wr = 0.5 * r * wx * rad ** 3
        eta = 0.25 * np.pi * (x + 1)
        we = 0.25 * np.pi * wx * np.sin(eta) * np.cos(eta)
        xi = 2 * np.pi * np.arange(16) / 16
        R, E, X1, X2 = np.meshgrid(rad, eta, xi, xi, indexing="ij")
        z = np.stack([c[0] + R * np.cos(E) * np.exp(1j * X1), c[1] + R * np.sin(E) * np.exp(1j * X2)], -1)
        W = wr[:, None, None, None] * we[None, :, None, None] * (2 * np.pi / 16) ** 2
        return float(np.sum(W * f(z)))
    raise ValueError("ball_integral supports n = 1, 2")


def unit_ball_volume(n: int) -> float:
    return np.pi ** n / np.prod(np.arange(1, n + 1))


# ---------------------------------------------------------------- estimates

@dataclass
class Estimate:
    """A probe-set estimate with its witness and skipped probes."""

    value: float
    witness: object = None
    skipped: list = field(default_factory=list)


def comparability_delta(w: Weight, probe) -> Estimate:
    """min over the probe of lambda_min(H) / laplacian; points with zero laplacian are skipped."""
    pts = as_points(probe, w.n).reshape(-1, w.n)
    if len(pts) == 0:
        raise ValueError("empty probe")
    lap = w.laplacian(pts)
    lam = np.linalg.eigvalsh(w.hessian(pts))[:, 0]
    ok = lap > 0
    skipped = [pts[i] for i in np.flatnonzero(~ok)]
    if not ok.any():
        raise ZeroLaplacianError("laplacian vanishes at every probe point; comparability undefined")
    ratio = lam[ok] / lap[ok]
    i = int(np.argmin(ratio))
    return Estimate(max(float(ratio[i]), 0.0), pts[ok][i], skipped)


def doubling_constant(V: Potential, centers, radii) -> Estimate:
    """max over (center, r) of sup_{B(x,2r)} V / sup_{B(x,r)} V."""
    pts = as_points(centers, V.n).reshape(-1, V.n)
    radii = sorted(float(r) for r in radii)
    if any(r <= 0 for r in radii):
        raise ValueError("radii must be positive")
    best, wit, skipped = -np.inf, None, []
    for x in pts:
        for r in radii:
            small = V.sup_ball(x, r)
            if small <= 0:
                skipped.append((x, r))
                continue
            ratio = V.sup_ball(x, 2 * r) / small
            if ratio > best:
                best, wit = ratio, (x, r)
    if wit is None:
        raise ZeroLaplacianError("potential vanishes on every probed ball; doubling undefined")
    return Estimate(float(best), wit, skipped)


def reverse_holder_constant(w: Weight, centers, radii) -> Estimate:
    """max over probes of sup_B(laplacian) r^(2n) / integral_B(laplacian)."""
    V = laplacian_potential(w)
    pts = as_points(centers, w.n).reshape(-1, w.n)
    best, wit, skipped = -np.inf, None, []
    for x in pts:
        for r in radii:
            integral = ball_integral(w.laplacian, x, r, w.n)
            if integral <= 0:
                skipped.append((x, r))
                continue
            ratio = V.sup_ball(x, r) * r ** (2 * w.n) / integral
            if ratio > best:
                best, wit = ratio, (x, r)
    if wit is None:
        raise ZeroLaplacianError("laplacian integrates to zero on every probed ball")
    return Estimate(float(best), wit, skipped)


@dataclass
class HypothesisReport:
    doubling: float | None
    reverse_holder: float | None
    admissibility_inf: float
    comparability: float | None
    admissible: bool
    probe: dict

    def to_dict(self) -> dict:
        return {
            "doubling_D": self.doubling,
            "reverse_holder_A": self.reverse_holder,
            "admissibility_inf_c": self.admissibility_inf,
            "comparability_delta": self.comparability,
            "admissible": self.admissible,
            "probe": self.probe,
        }


def default_centers(n: int, half_width: float = 2.0) -> np.ndarray:
    k = 5 if n == 1 else 3
    ax = np.linspace(-half_width, half_width, k)
    grids = np.meshgrid(*([ax] * (2 * n)), indexing="ij")
    return as_points(np.stack([g.ravel() for g in grids], -1), n)


def admissibility_check(w: Weight, c: float = 1.0, centers=None, radii=(0.25, 0.5, 1.0)) -> HypothesisReport:
    if c <= 0:
        raise ValueError("c must be positive")
    pts = default_centers(w.n) if centers is None else as_points(centers, w.n).reshape(-1, w.n)
    V = laplacian_potential(w)
    inf_sup = min(V.sup_ball(x, c) for x in pts)
    try:
        D = doubling_constant(V, pts, radii).value
    except ZeroLaplacianError:
        D = None
    admissible = inf_sup > 0 and D is not None and np.isfinite(D)
    probe = {"centers": len(pts), "radii": list(radii), "c": c,
             "sup_oracle": "radial-exact" if V.exact_sup else f"halton-{len(ball_samples(w.n))}"}
    return HypothesisReport(D, None, float(inf_sup), None, bool(admissible), probe)


def inspect_weight(w: Weight, c: float = 1.0, centers=None, radii=(0.25, 0.5, 1.0)) -> HypothesisReport:
    """Full hypothesis report: admissibility, doubling, reverse Hoelder and comparability."""
    rep = admissibility_check(w, c, centers, radii)
    pts = default_centers(w.n) if centers is None else as_points(centers, w.n).reshape(-1, w.n)
    try:
        rep.reverse_holder = reverse_holder_constant(w, pts, radii).value
    except ZeroLaplacianError:
        rep.reverse_holder = None
    try:
        rep.comparability = comparability_delta(w, pts).value
    except ZeroLaplacianError:
        rep.comparability = None
    return rep
