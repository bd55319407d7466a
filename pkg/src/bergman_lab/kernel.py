"""Weighted Bergman kernels from orthogonal monomials.

For weights invariant under z_j -> e^{i t_j} z_j the monomials are orthogonal in
L^2(e^{-2 phi}), so K(z, w) = sum_alpha (z conj w)^alpha / c_alpha with
c_alpha = ||z^alpha||^2.  Coefficients are kept as logarithms so high degrees
do not overflow.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import lgamma, log, pi

import numpy as np
from numpy.polynomial import polynomial as P

from .weights import DecoupledWeight, MonomialWeight, RadialWeight, Weight, as_points, ball_integral

TAIL_THRESHOLD = 1e-7
GL_NODES, GL_WEIGHTS = np.polynomial.legendre.leggauss(32)


class KernelError(ValueError):
    pass


# ---------------------------------------------------------------- radial moments

def _panel(logf, a, b):
    x = 0.5 * (b - a) * GL_NODES + 0.5 * (a + b)
    return 0.5 * (b - a) * np.dot(GL_WEIGHTS, np.exp(logf(x)))


def _adaptive(logf, a, b, rtol, depth=0):
    whole = _panel(logf, a, b)
    m = 0.5 * (a + b)
    left, right = _panel(logf, a, m), _panel(logf, m, b)
    if abs(left + right - whole) <= rtol * abs(left + right) or depth > 40:
        return left + right
    return _adaptive(logf, a, m, rtol, depth + 1) + _adaptive(logf, m, b, rtol, depth + 1)


def log_radial_moment(g, p: float, rtol: float = 1e-13, tail: float = 1e-12) -> float:
    """log of int_0^inf r^p exp(-2 g(r^2)) dr for a polynomial g with positive leading coefficient.

    Panels [0, 1/8], then doubling intervals, each integrated by adaptive 32-node
    Gauss-Legendre; stops once an interval past the peak adds less than ``tail``
    of the running total.
    """
    g = np.asarray(g, float)
    g = np.trim_zeros(g, "b")
    if g.size < 2 or g[-1] <= 0:
        raise KernelError("moment diverges: weight does not grow at infinity")

    def raw(r):
        with np.errstate(divide="ignore"):
            return p * np.log(r) - 2 * P.polyval(r * r, g)

    probe = np.geomspace(1e-4, 1e4, 4001)
    shift = float(np.max(raw(probe)))
    logf = lambda r: raw(r) - shift
    total, prev, a, b = 0.0, 0.0, 0.0, 0.125
    for _ in range(200):
        part = _adaptive(logf, a, b, rtol)
        total += part
        if b > 1 and part <= tail * total and part <= prev:
            return shift + log(total)
        prev, a, b = part, b, 2 * b
        if not np.isfinite(total):
            break
    raise KernelError("radial quadrature did not converge (divergent moment)")


# ---------------------------------------------------------------- model

def multi_indices(n: int, N: int) -> np.ndarray:
    """All alpha in N^n with |alpha| <= N, ordered by total degree then lexicographically."""
    out = [a for d in range(N + 1) for a in itertools.product(range(d + 1), repeat=n) if sum(a) == d]
    return np.array(sorted(out, key=lambda a: (sum(a), tuple(-x for x in a))), int).reshape(-1, n)


def _one_variable_g(w: Weight, j: int) -> np.ndarray:
    """Polynomial g_j(s) with phi = sum_j g_j(|z_j|^2) for separable weights."""
    if isinstance(w, DecoupledWeight):
        return w.parts[j].g
    if isinstance(w, RadialWeight):
        return w.g
    if isinstance(w, MonomialWeight):
        deg = max(gm[j] for gm in w.gammas)
        g = np.zeros(deg + 1)
        for c, gm in zip(w.coefs, w.gammas):
            if gm[j]:
                g[gm[j]] += c
        return g
    raise KernelError(f"unsupported weight {w!r}")


def log_coefficients(w: Weight, alphas: np.ndarray) -> tuple[np.ndarray, str]:
    """log c_alpha for each row of alphas, and the reduction used."""
    n = w.n
    if n == 1 or (isinstance(w, RadialWeight) and len(w.g) == 2):
        # one variable, or a Fock-type weight c|z|^2 which factors over variables
        g = w.g if isinstance(w, RadialWeight) else _one_variable_g(w, 0)
        # the constant term of phi belongs to one factor only
        gs = [g] + [np.array([0.0, g[1]])] * (n - 1)
        mode = "product"
    elif isinstance(w, RadialWeight):
        # Dirichlet integral over the simplex reduces to one radial moment
        out = np.empty(len(alphas))
        for i, a in enumerate(alphas):
            m = int(a.sum()) + n - 1
            out[i] = (n * log(pi) + sum(lgamma(k + 1) for k in a) - lgamma(m + 1)
                      + log(2) + log_radial_moment(w.g, 2 * m + 1))
        return out, "radial-simplex"
    elif w.separable:
        gs = [_one_variable_g(w, j) for j in range(n)]
        mode = "product"
    else:
        raise KernelError("kernel needs a radial or variable-separable weight")
    out = np.zeros(len(alphas))
    for j in range(n):
        cache: dict[int, float] = {}
        for i, k in enumerate(alphas[:, j]):
            if k not in cache:
                cache[k] = log(2 * pi) + log_radial_moment(gs[j], 2 * k + 1)
            out[i] += cache[k]
    return out, mode


@dataclass
class KernelModel:
    weight: Weight
    degree: int
    alphas: np.ndarray
    log_c: np.ndarray
    reduction: str
    meta: dict = field(default_factory=dict)

    @property
    def c(self) -> np.ndarray:
        return np.exp(self.log_c)

    def coefficient(self, alpha) -> float:
        i = np.flatnonzero((self.alphas == np.asarray(alpha)).all(axis=1))
        return float(np.exp(self.log_c[i[0]]))

    def metadata(self) -> dict:
        return {"weight": self.weight.spec(), "degree": self.degree, "reduction": self.reduction,
                "alphas": self.alphas.tolist(), "log_c": self.log_c.tolist(), "c": self.c.tolist()}


def build_kernel(w: Weight, N: int | None = None) -> KernelModel:
    """Coefficient table c_alpha for all |alpha| <= N (default 64 for n=1, 32 otherwise)."""
    if N is None:
        N = 64 if w.n == 1 else 32
    if N < 0:
        raise KernelError("degree must be >= 0")
    alphas = multi_indices(w.n, N)
    log_c, mode = log_coefficients(w, alphas)
    return KernelModel(w, N, alphas, log_c, mode)


@dataclass
class KernelValue:
    z: np.ndarray
    w: np.ndarray
    K: complex
    degree: int
    tail: float
    roundoff: float
    warning: bool


def _terms(m: KernelModel, z: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Series terms (z conj w)^alpha / c_alpha, shape (pairs, len(alphas))."""
    # z conj(w) from separate real products, so swapping z and w conjugates it exactly
    zeta = (z.real * w.real + z.imag * w.imag) + 1j * (z.imag * w.real - z.real * w.imag)  # (P, n)
    with np.errstate(divide="ignore", invalid="ignore"):
        la = np.log(np.abs(zeta))
        logmag = np.where(m.alphas[None, :, :] > 0, m.alphas[None] * la[:, None, :], 0.0).sum(-1)
    phase = np.exp(1j * m.alphas[None] * np.angle(zeta)[:, None, :])
    # on the real axis the phase is an exact sign; np.angle would give +pi for both orders
    neg = (zeta.imag == 0) & (zeta.real < 0)
    phase = np.where(neg[:, None, :], (-1.0) ** m.alphas[None], phase)
    phase = np.where(((zeta.imag == 0) & (zeta.real >= 0))[:, None, :], 1.0, phase)
    return np.exp(logmag - m.log_c[None]) * np.prod(phase, axis=-1)


def eval_kernel_many(m: KernelModel, z, w):
    """Vectorized evaluation.  Returns (K, tail, roundoff) arrays over pairs."""
    z = as_points(z, m.weight.n).reshape(-1, m.weight.n)
    w = as_points(w, m.weight.n).reshape(-1, m.weight.n)
    z, w = np.broadcast_arrays(z, w)
    K = np.empty(len(z), complex)
    tail = np.empty(len(z))
    rnd = np.empty(len(z))
    deg = m.alphas.sum(1)
    last, prev = deg == m.degree, deg == m.degree - 1
    step = max(1, 2_000_000 // len(m.alphas))
    for i in range(0, len(z), step):
        t = _terms(m, z[i:i + step], w[i:i + step])
        k = t.sum(1)
        absk = np.maximum(np.abs(k), 1e-300)
        shell = np.abs(t[:, last].sum(1)) + np.abs(t[:, prev].sum(1))
        K[i:i + step] = k
        tail[i:i + step] = shell / absk
        rnd[i:i + step] = np.finfo(float).eps * np.abs(t).sum(1) / absk
    return K, tail, rnd


def eval_kernel(m: KernelModel, z, w) -> KernelValue:
    """K(z, w) with tail estimate from the last two degree shells.

    ``warning`` is set when the tail or the cancellation roundoff estimate
    exceeds 1e-7 relative.
    """
    K, tail, rnd = eval_kernel_many(m, z, w)
    zz = as_points(z, m.weight.n).reshape(m.weight.n)
    ww = as_points(w, m.weight.n).reshape(m.weight.n)
    return KernelValue(zz, ww, complex(K[0]), m.degree, float(tail[0]), float(rnd[0]),
                       bool(tail[0] > TAIL_THRESHOLD or rnd[0] > TAIL_THRESHOLD))


def kernel_rows(m: KernelModel, zs, ws):
    """Rows (z coords, w coords, Re K, Im K, tail flag) for a kernel table."""
    from .weights import to_real
    zs = as_points(zs, m.weight.n).reshape(-1, m.weight.n)
    ws = as_points(ws, m.weight.n).reshape(-1, m.weight.n)
    K, tail, rnd = eval_kernel_many(m, zs, ws)
    flag = (tail > TAIL_THRESHOLD) | (rnd > TAIL_THRESHOLD)
    return [list(a) + list(b) + [k.real, k.imag, f] for a, b, k, f in zip(to_real(zs), to_real(ws), K, flag)]


# ---------------------------------------------------------------- audits

def polar_rule(w: Weight, max_power: int, panels: int = 160, nodes: int = 20, angles: int | None = None):
    """Independent polar quadrature for one-variable integrals against e^{-2 phi}.

    Composite Gauss-Legendre (``panels`` x ``nodes``) on [0, R], with R chosen
    where r^(max_power+1) e^{-2 phi} has dropped below 1e-40 of its peak, and an
    equispaced angular rule exact for frequencies below ``angles``.
    Returns complex nodes and real weights including e^{-2 phi}.
    """
    if w.n != 1:
        raise KernelError("polar rule is one-variable")
    r = np.linspace(1e-6, 50, 200001)
    logf = (max_power + 1) * np.log(r) - 2 * w.phi(r.astype(complex))
    ok = logf > logf.max() - 92
    R = float(r[np.flatnonzero(ok)[-1]]) * 1.05
    x, wx = np.polynomial.legendre.leggauss(nodes)
    edges = np.linspace(0, R, panels + 1)
    rad = (0.5 * (edges[1:] - edges[:-1])[:, None] * (x + 1) + edges[:-1, None]).ravel()
    wr = (0.5 * (edges[1:] - edges[:-1])[:, None] * wx).ravel() * rad
    M = angles or (max_power + 8)
    th = 2 * pi * np.arange(M) / M
    pts = (rad[:, None] * np.exp(1j * th)[None]).ravel()
    wts = (wr[:, None] * np.full(M, 2 * pi / M)[None]).ravel() * np.exp(-2 * w.phi(pts))
    return pts, wts


def reproducing_audit(m: KernelModel, h, zs, rule=None, normalized: bool = False) -> float:
    """max_z |h(z) - int K(z, w) h(w) e^{-2 phi(w)} dL(w)| for a polynomial h (coefficients in z).

    With ``normalized`` the residual at z is divided by K(z,z)^(1/2) ||h||, the
    scale of the evaluation bound.  High-degree h have integrands of size far
    beyond |h(z)|, so only the normalized residual is meaningful there.
    """
    w = m.weight
    if w.n != 1:
        raise KernelError("reproducing audit is implemented for n = 1")
    h = np.asarray(h, complex)
    if len(h) - 1 > m.degree:
        raise KernelError("deg h exceeds the model degree")
    pts, wts = rule if rule is not None else polar_rule(w, 2 * m.degree + len(h))
    hw = P.polyval(pts, h)
    k = m.alphas[:, 0]
    # moments int conj(w)^k h(w) e^{-2phi}; the kernel sum is finite so it commutes with the integral
    mom = np.array([np.sum(wts * np.conj(pts) ** kk * hw) for kk in k])
    zs = as_points(zs, 1)[..., 0].ravel()
    approx = np.array([np.sum(z ** k * mom * np.exp(-m.log_c)) for z in zs])
    res = np.abs(P.polyval(zs, h) - approx)
    if normalized:
        norm = np.sqrt(np.sum(wts * np.abs(hw) ** 2))
        kzz = eval_kernel_many(m, zs, zs)[0].real
        res = res / (np.sqrt(kzz) * norm)
    return float(np.max(res))


def diag_variational_audit(m: KernelModel, z) -> float:
    """Ratio of the evaluation-functional norm squared on the truncated span to K(z, z).

    The span's Gram matrix is diag(c_alpha), so the sup of |h(z)|^2/||h||^2 is
    v* G^-1 v with v = (z^alpha); computed here with plain powers.
    """
    z = as_points(z, m.weight.n).reshape(m.weight.n)
    v = np.prod(np.abs(z)[None, :] ** m.alphas, axis=1) ** 2
    sup = float(np.sum(v * np.exp(-m.log_c)))
    K = eval_kernel(m, z, z).K.real
    return sup / K


def submeanvalue_audit(w: Weight, rho, h, samples) -> dict:
    """max over (z, r) of |h(z)|^2 e^{-2phi(z)} |B(z,r)| / int_B |h|^2 e^{-2phi}.

    ``h`` is a callable on points (..., n); ``samples`` is a list of (z, r) with r <= rho(z).
    """
    from .weights import unit_ball_volume
    best, wit = -np.inf, None
    for z, r in samples:
        zz = as_points(z, w.n).reshape(w.n)
        if rho is not None and r > float(rho(zz[None])[0]) * (1 + 1e-9):  # rho is bisected to 1e-10
            raise ValueError("sample radius exceeds rho(z)")
        num = abs(h(zz[None])[0]) ** 2 * np.exp(-2 * w.phi(zz[None])[0]) * unit_ball_volume(w.n) * r ** (2 * w.n)
        den = ball_integral(lambda p: np.abs(h(p)) ** 2 * np.exp(-2 * w.phi(p)), zz, r, w.n)
        q = num / den
        if q > best:
            best, wit = q, (zz, r)
    return {"C_hol": float(best), "witness": wit, "samples": len(samples)}
