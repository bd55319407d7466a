"""Discretized weighted Kohn Laplacian forms on Dirichlet boxes.

Unknowns live on the interior nodes of the box [-L, L]^(2n) (zero boundary
values).  A (0,1)-form is stored as its n components stacked.  Inner products
use trapezoid weights h^(2n) times e^{-2 phi}; W denotes that diagonal.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh, splu

from .weights import Weight, as_points, to_real


class FormError(ValueError):
    pass


def centered_difference(q: int, h: float, order: int = 2) -> sparse.csr_matrix:
    """1-D centred first difference on q interior nodes with zero extension (skew-symmetric)."""
    if order == 2:
        return sparse.diags([-1, 1], [-1, 1], shape=(q, q)) / (2 * h)
    if order == 4:
        return sparse.diags([1, -8, 8, -1], [-2, -1, 1, 2], shape=(q, q)) / (12 * h)
    raise FormError("order must be 2 or 4")


@dataclass
class Grid:
    n: int
    L: float
    h: float
    q: int  # interior nodes per axis

    @property
    def d(self) -> int:
        return 2 * self.n

    @property
    def size(self) -> int:
        return self.q ** self.d

    @property
    def axis(self) -> np.ndarray:
        return -self.L + self.h * np.arange(1, self.q + 1)

    def points(self) -> np.ndarray:
        """Complex interior nodes, shape (size, n)."""
        g = np.meshgrid(*([self.axis] * self.d), indexing="ij")
        return as_points(np.stack([a.ravel() for a in g], -1), self.n)

    def diff(self, a: int, order: int = 2) -> sparse.csr_matrix:
        """Centred difference along real axis a (0 = x1, 1 = y1, ...)."""
        D = centered_difference(self.q, self.h, order)
        left = sparse.identity(self.q ** a)
        right = sparse.identity(self.q ** (self.d - a - 1))
        return sparse.kron(sparse.kron(left, D), right).tocsr()


def make_grid(n: int, L: float, h: float, max_nodes: int = 3_000_000) -> Grid:
    m = int(round(2 * L / h))
    if m < 2 or abs(m * h - 2 * L) > 1e-9 * max(1.0, L):
        raise FormError("2L must be a positive integer multiple of h")
    g = Grid(n, float(L), float(h), m - 1)
    if g.size > max_nodes:
        raise FormError(f"{g.size} nodes exceeds {max_nodes}")
    return g


@dataclass
class FormAssembly:
    weight: Weight
    grid: Grid
    order: int
    z: np.ndarray
    phi: np.ndarray
    W: np.ndarray  # trapezoid weight x e^{-2phi}, one entry per node
    dbar: list  # dbar_k as sparse matrices (functions -> functions)
    dz: list  # d_k
    E: sparse.csr_matrix  # MKH assembly on stacked forms
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def M(self) -> sparse.dia_matrix:
        return sparse.diags(np.tile(self.W, self.n))

    def mass_kappa(self, kappa) -> sparse.dia_matrix:
        """Diagonal mass with kappa^-2 e^{-2phi}; kappa is a scalar or node array."""
        k = np.broadcast_to(np.asarray(kappa, float), self.W.shape)
        return sparse.diags(np.tile(self.W / k ** 2, self.n))

    def energy(self, u: np.ndarray, v: np.ndarray | None = None) -> complex:
        """Sesquilinear E(u, v) = v^H E u; E(u) = E(u, u) is real."""
        v = u if v is None else v
        return complex(np.vdot(v, self.E @ u))

    def norm2(self, u: np.ndarray) -> float:
        return float(np.real(np.vdot(u, np.tile(self.W, self.n) * u)))

    def components(self, u: np.ndarray) -> list[np.ndarray]:
        N = self.grid.size
        return [u[j * N:(j + 1) * N] for j in range(self.n)]


def assemble_mkh(w: Weight, L: float, h: float, order: int = 2, check_resolution: bool = True) -> FormAssembly:
    """E = sum_{j,k} ||dbar_k u_j||^2 + 2 (H u, u), centred differences, trapezoid weights."""
    grid = make_grid(w.n, L, h)
    z = grid.points()
    if check_resolution:
        from .radius import box_min_radius, weight_radius
        # a guard only: coarse probe in real dimension 4, where each rho costs a ball-sup bisection
        per_axis, tol = (None, 1e-10) if grid.d <= 2 else (5, 1e-4)
        rmin = box_min_radius(weight_radius(w, tol=tol), [(-L, L)] * grid.d, per_axis)
        if h > 0.25 * rmin * (1 + 10 * tol):
            raise FormError(f"grid too coarse: h={h:g} > rho_min/4 = {rmin / 4:.4g}")
    phi = w.phi(z)
    W = h ** grid.d * np.exp(-2 * phi)
    if not np.all(W > 1e-300):
        raise FormError("e^{-2phi} underflows on the box; shrink L")
    dbar, dz = [], []
    for k in range(w.n):
        Dx, Dy = grid.diff(2 * k, order), grid.diff(2 * k + 1, order)
        dbar.append(((Dx + 1j * Dy) / 2).tocsr())
        dz.append(((Dx - 1j * Dy) / 2).tocsr())
    Wd = sparse.diags(W)
    grad_part = sum(D.conj().T @ Wd @ D for D in dbar)
    H = w.hessian(z)
    # (H u, u) = sum_{jk} H_jk u_j conj(u_k): block (k, j) carries H_jk
    blocks = [[None] * w.n for _ in range(w.n)]
    for k in range(w.n):
        for j in range(w.n):
            hess = sparse.diags(2 * W * H[:, j, k])
            blocks[k][j] = grad_part + hess if j == k else hess
    E = sparse.bmat(blocks, format="csr")
    return FormAssembly(w, grid, order, z, phi, W, dbar, dz, E,
                        {"L": L, "h": h, "order": order, "nodes": grid.size})


# ---------------------------------------------------------------- dbar*

def dbar_star_pointwise(F: FormAssembly, u: np.ndarray, factor: float = 2.0) -> np.ndarray:
    """sum_j (-d_j u_j + factor d_j phi u_j) with centred differences.

    ``factor=2`` is the adjoint of dbar in L^2(e^{-2phi}); other values exist
    only to exhibit the inconsistency of a factor-1 expression.
    """
    dphi = F.weight.dphi(F.z)
    return sum(-F.dz[j] @ uj + factor * dphi[:, j] * uj for j, uj in enumerate(F.components(u)))


def assemble_dbar_star(F: FormAssembly, factor: float = 2.0) -> sparse.csr_matrix:
    """Matrix of dbar_star_pointwise: stacked forms -> functions."""
    dphi = F.weight.dphi(F.z)
    return sparse.hstack([-F.dz[j] + sparse.diags(factor * dphi[:, j]) for j in range(F.n)], format="csr")


def dbar_star_adjoint(F: FormAssembly) -> sparse.csr_matrix:
    """Exact W-adjoint W^{-1} dbar^H W of the discrete dbar (n = 1)."""
    if F.n != 1:
        raise FormError("exact adjoint complex implemented for n = 1")
    Wd, Wi = sparse.diags(F.W), sparse.diags(1 / F.W)
    return (Wi @ F.dbar[0].conj().T @ Wd).tocsr()


def dbar_forms(F: FormAssembly) -> sparse.csr_matrix | None:
    """dbar on (0,1)-forms into (0,2)-forms, components (j<k): dbar_j u_k - dbar_k u_j."""
    n = F.n
    if n == 1:
        return None
    N = F.grid.size
    rows = []
    for j in range(n):
        for k in range(j + 1, n):
            row = [sparse.csr_matrix((N, N))] * n
            row = list(row)
            row[k] = F.dbar[j]
            row[j] = -F.dbar[k]
            rows.append(row)
    return sparse.bmat(rows, format="csr")


def energy_by_definition(F: FormAssembly, u: np.ndarray) -> float:
    """||dbar u||^2 + ||dbar*_phi u||^2 with the pointwise adjoint."""
    s = dbar_star_pointwise(F, u)
    val = float(np.real(np.vdot(s, F.W * s)))
    B = dbar_forms(F)
    if B is not None:
        b = B @ u
        Wb = np.tile(F.W, B.shape[0] // F.grid.size)
        val += float(np.real(np.vdot(b, Wb * b)))
    return val


def cross_assembly_deviation(F: FormAssembly, u: np.ndarray) -> float:
    """|E_MKH(u) - (||dbar u||^2 + ||dbar* u||^2)| / E_MKH(u)."""
    a = F.energy(u).real
    return abs(a - energy_by_definition(F, u)) / a


# ---------------------------------------------------------------- Schroedinger

def schrodinger_potential(w: Weight, z) -> np.ndarray:
    """V = 8 H - 4 tr(H) I at each point, shape (..., n, n)."""
    H = w.hessian(as_points(z, w.n))
    tr = np.trace(H, axis1=-2, axis2=-1)
    return 8 * H - 4 * tr[..., None, None] * np.eye(w.n)


def magnetic_potential(w: Weight, z) -> np.ndarray:
    """A = symplectic gradient (-phi_y1, phi_x1, -phi_y2, phi_x2, ...)."""
    g = w.grad(as_points(z, w.n))
    A = np.empty_like(g)
    A[..., 0::2] = -g[..., 1::2]
    A[..., 1::2] = g[..., 0::2]
    return A


def magnetic_gradient(F: FormAssembly, u: np.ndarray) -> list[np.ndarray]:
    """Components X_l = d_xl u + i phi_yl u, Y_l = d_yl u - i phi_xl u (unweighted), per form component."""
    g = F.weight.grad(F.z)
    out = []
    for uj in F.components(u):
        for l in range(F.n):
            out.append(F.grid.diff(2 * l, F.order) @ uj + 1j * g[:, 2 * l + 1] * uj)
            out.append(F.grid.diff(2 * l + 1, F.order) @ uj - 1j * g[:, 2 * l] * uj)
    return out


def schrodinger_energy(F: FormAssembly, u: np.ndarray) -> float:
    """(1/4)(int |grad_A u|^2 + int (V u, u)), flat trapezoid measure."""
    vol = F.grid.h ** F.grid.d
    kin = sum(float(np.sum(np.abs(c) ** 2)) for c in magnetic_gradient(F, u)) * vol
    V = schrodinger_potential(F.weight, F.z)
    U = np.stack(F.components(u), -1)
    pot = float(np.real(np.sum(np.conj(U) * np.einsum("pjk,pk->pj", V, U)))) * vol
    return 0.25 * (kin + pot)


def margin_ok(F: FormAssembly, u: np.ndarray, frac: float = 0.1, rtol: float = 1e-12) -> bool:
    """True when |u| is below ``rtol`` times its max on the outer ``frac`` margin of the box."""
    inner = np.all(np.abs(to_real(F.z)) <= (1 - frac) * F.grid.L, axis=-1)
    U = np.abs(np.stack(F.components(u), -1)).max(-1)
    return bool(np.max(U[~inner], initial=0.0) <= rtol * U.max())


def bump(z, center=0.0, radius: float = 1.0) -> np.ndarray:
    """Smooth compactly supported bump exp(1 - 1/(1 - |z-c|^2/R^2)) on complex points (..., n)."""
    z = np.asarray(z, complex)
    c = np.broadcast_to(np.asarray(center, complex), z.shape[-1:])
    s = np.sum(np.abs(z - c) ** 2, axis=-1) / radius ** 2
    out = np.zeros(s.shape)
    m = s < 1
    out[m] = np.exp(1 - 1 / (1 - s[m]))
    return out


def schrodinger_equivalence_audit(F: FormAssembly, trials) -> float:
    """max over trials of |E(e^phi u) - (1/4)(|grad_A u|^2 + (Vu,u))| / rhs."""
    worst = 0.0
    for u in trials:
        if not margin_ok(F, u):
            raise FormError("trial must vanish on the outer 10% margin of the box")
        lhs = F.energy(np.tile(np.exp(F.phi), F.n) * u).real
        rhs = schrodinger_energy(F, u)
        worst = max(worst, abs(lhs - rhs) / abs(rhs))
    return worst


def diamagnetic_audit(F: FormAssembly, u: np.ndarray) -> dict:
    """Count nodes where |grad_A u| < |grad |u|| - 10 h (one-component forms)."""
    comps = magnetic_gradient(F, u)
    ga = np.sqrt(sum(np.abs(c) ** 2 for c in comps))
    au = np.abs(u)
    gm = np.sqrt(sum(np.abs(F.grid.diff(a, F.order) @ au) ** 2 for a in range(F.grid.d)))
    bad = ga < gm - 10 * F.grid.h
    return {"violations": int(bad.sum()), "min_gap": float(np.min(ga - gm)), "nodes": int(len(ga))}


# ---------------------------------------------------------------- coercivity

@dataclass
class CoercivityReport:
    value: float
    iterations: int
    converged: bool
    witness: np.ndarray
    semantics: str = ("discrete minimum over compactly supported grid functions; a value < 1 refutes "
                      "mu-coercivity up to discretization, a value >= 1 does not certify it")

    def to_dict(self) -> dict:
        return {"lambda_min": self.value, "iterations": self.iterations, "converged": self.converged,
                "semantics": self.semantics}


def coercivity_rayleigh(F: FormAssembly, Mk, tol: float = 1e-10, max_iter: int = 10_000) -> CoercivityReport:
    """Smallest generalized Rayleigh quotient E(u)/M_k(u).

    Works with y = M_k^{1/2} u so the eigensolver sees the symmetric pencil
    M_k^{-1/2} E M_k^{-1/2}.  Shift-invert Lanczos around 0 with our own sparse LU
    as the inverse; the lowest levels cluster (Landau degeneracy), which stalls plain
    inverse iteration.  Deterministic all-ones start (in u).
    """
    m = Mk.diagonal().real
    s = 1 / np.sqrt(m)
    S = sparse.diags(s)
    A = (S @ F.E @ S).tocsc()
    lu = splu(A)
    calls = [0]

    def solve(y):
        calls[0] += 1
        return lu.solve(np.asarray(y, complex))

    N = A.shape[0]
    op = LinearOperator((N, N), matvec=solve, dtype=complex)
    v0 = np.sqrt(m).astype(complex)
    try:
        vals, vecs = eigsh(A, k=1, sigma=0, which="LM", OPinv=op, v0=v0, tol=tol, maxiter=max_iter)
    except ArpackNoConvergence as exc:
        raise FormError(f"eigensolver did not converge in {max_iter} restarts") from exc
    y = vecs[:, 0]
    return CoercivityReport(float(vals[0]), calls[0], True, s * y)


def fefferman_phong_constant(V, rho, trials, L: float, h: float) -> dict:
    """max over trials of int rho^-2 |f|^2 / (int |grad f|^2 + int V |f|^2) on the box [-L, L]^2.

    ``V`` and ``rho`` are callables on complex points; ``trials`` are callables
    on complex points (n = 1).  Gradients by centred differences.
    """
    grid = make_grid(1, L, h)
    z = grid.points()
    vol = h * h
    r = rho(z)
    v = V(z)
    Dx, Dy = grid.diff(0), grid.diff(1)
    best, wit = -np.inf, None
    ratios = []
    for i, f in enumerate(trials):
        fv = f(z)
        den = (np.sum(np.abs(Dx @ fv) ** 2 + np.abs(Dy @ fv) ** 2) + np.sum(v * np.abs(fv) ** 2)) * vol
        if den <= 0:
            raise FormError("trial with zero denominator")
        q = float(np.sum(np.abs(fv) ** 2 / r ** 2) * vol / den)
        ratios.append(q)
        if q > best:
            best, wit = q, i
    return {"C_FP": best, "witness_trial": wit, "ratios": ratios}


def localization_identity_audit(F: FormAssembly, u: np.ndarray, eta: np.ndarray, grad_eta: np.ndarray) -> float:
    """|E(eta u) - (1/4) int |grad eta|^2 |u|^2 e^{-2phi} - Re E(u, eta^2 u)| / E(eta u).

    ``eta`` and ``grad_eta`` (shape (nodes, 2n)) are sampled at the interior nodes.
    """
    e = np.tile(eta, F.n)
    lhs = F.energy(e * u).real
    g2 = np.sum(grad_eta ** 2, axis=-1)
    U2 = sum(np.abs(c) ** 2 for c in F.components(u))
    rhs = 0.25 * float(np.sum(g2 * U2 * F.W)) + F.energy(u, e * e * u).real
    scale = max(abs(lhs), 1e-300)
    return abs(lhs - rhs) / scale


# ---------------------------------------------------------------- canonical solutions

def pcg(apply, b: np.ndarray, diag: np.ndarray, tol: float = 1e-8, max_iter: int = 100_000):
    """Jacobi-preconditioned conjugate gradients for a Hermitian positive definite operator."""
    x = np.zeros_like(b)
    r = b.copy()
    zr = r / diag
    p = zr.copy()
    rz = np.vdot(r, zr)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return x, 0
    for it in range(1, max_iter + 1):
        Ap = apply(p)
        alpha = rz / np.vdot(p, Ap)
        x += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) <= tol * bnorm:
            return x, it
        zr = r / diag
        rz_new = np.vdot(r, zr)
        p = zr + (rz_new / rz) * p
        rz = rz_new
    raise FormError(f"conjugate gradients did not converge in {max_iter} iterations")


@dataclass
class CanonicalSolution:
    f: np.ndarray
    g: np.ndarray
    iterations: int
    assembly: FormAssembly

    def profile(self, center=0.0, nbins: int | None = None):
        """Radial profile t -> max over nodes at distance ~t of |f| e^{-phi}."""
        F = self.assembly
        c = as_points(center, 1).reshape(1)
        t = np.abs(F.z[:, 0] - c[0])
        val = np.abs(self.f) * np.exp(-F.phi)
        h = F.grid.h
        k = np.round(t / h).astype(int)
        inside = t <= F.grid.L - h
        nb = int(k[inside].max()) + 1 if nbins is None else nbins
        prof = np.full(nb, 0.0)
        np.maximum.at(prof, k[inside & (k < nb)], val[inside & (k < nb)])
        ts = h * np.arange(nb)
        return ts, prof


def canonical_solution(w: Weight, datum, L: float, h: float, tol: float = 1e-8) -> CanonicalSolution:
    """Discrete canonical solution f = dbar* N u of dbar f = u (n = 1).

    Uses the exact discrete complex with 4th-order centred stencils: E g = W u
    with E = (dbar*)^H W dbar*, f = dbar* g, so dbar f = u holds exactly and f is
    W-orthogonal to every polynomial annihilated by the stencil (degree <= 4).
    ``datum`` is a callable on complex points returning the dz-bar coefficient.
    """
    if w.n != 1:
        raise FormError("canonical solutions are computed for n = 1")
    F = assemble_mkh(w, L, h, order=4)
    u = np.asarray(datum(F.z), complex)
    inner = np.all(np.abs(to_real(F.z)) <= 0.5 * L, axis=-1)
    if np.any(np.abs(u[~inner]) > 1e-12 * max(np.abs(u).max(), 1e-300)):
        raise FormError("datum support must lie in the inner half of the box")
    S = dbar_star_adjoint(F)
    SH = S.conj().T.tocsr()
    Wd = F.W
    apply = lambda x: SH @ (Wd * (S @ x))
    diag = np.real(np.asarray(SH.multiply(SH.conj()) @ Wd)).ravel()
    g, it = pcg(apply, Wd * u, diag, tol=tol)
    f = S @ g
    return CanonicalSolution(f, g, it, F)


def orthogonality_audit(sol: CanonicalSolution, kmax: int = 4) -> list[float]:
    """|(f, z^k)_phi| / (||f|| ||z^k||) for k = 0..kmax."""
    F = sol.assembly
    z = F.z[:, 0]
    nf = np.sqrt(np.sum(F.W * np.abs(sol.f) ** 2))
    out = []
    for k in range(kmax + 1):
        p = z ** k
        ip = np.vdot(p, F.W * sol.f)
        out.append(float(abs(ip) / (nf * np.sqrt(np.sum(F.W * np.abs(p) ** 2)))))
    return out


def neumann_bergman_audit(w: Weight, f, model, L: float, h: float, tol: float = 1e-8) -> dict:
    """Compare f - dbar* N dbar f with the monomial projection sum_k (f, e_k) e_k on the inner quarter.

    ``f`` is a callable on complex points; ``model`` a KernelModel for the same weight.
    """
    if w.n != 1:
        raise FormError("n = 1 only")
    F = assemble_mkh(w, L, h, order=4)
    fv = np.asarray(f(F.z), complex)
    inner = np.all(np.abs(to_real(F.z)) <= 0.5 * L, axis=-1)
    if np.any(np.abs(fv[~inner]) > 1e-12 * max(np.abs(fv).max(), 1e-300)):
        raise FormError("f must be supported in the inner half of the box")
    S = dbar_star_adjoint(F)
    SH = S.conj().T.tocsr()
    Wd = F.W
    u = F.dbar[0] @ fv
    apply = lambda x: SH @ (Wd * (S @ x))
    diag = np.real(np.asarray(SH.multiply(SH.conj()) @ Wd)).ravel()
    g, it = pcg(apply, Wd * u, diag, tol=tol)
    left = fv - S @ g
    # basis projection with the model's normalized monomials; inner products by the grid quadrature
    z = F.z[:, 0]
    right = np.zeros_like(fv)
    for k in model.alphas[:, 0]:
        ek = z ** k * np.exp(-0.5 * model.log_c[k])
        right += np.vdot(ek, Wd * fv) * ek
    quarter = np.all(np.abs(to_real(F.z)) <= 0.25 * L, axis=-1)
    scale = max(np.abs(fv[quarter]).max(), np.abs(right[quarter]).max())
    dev = float(np.abs(left - right)[quarter].max() / scale)
    return {"deviation": dev, "iterations": it, "nodes": int(quarter.sum())}
