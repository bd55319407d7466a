"""End-to-end check of the off-diagonal kernel bound.

For sampled pairs (z, w) the ratio

    Q(z, w) = |K(z, w)| e^{-phi(z) - phi(w)} rho(z)^n rho(w)^n rho(z) / kappa(z)

is regressed in log scale against the kappa-distance d(z, w).  An exponential
envelope shows up as a negative slope.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import agmon
from .kernel import TAIL_THRESHOLD, KernelModel, build_kernel, eval_kernel_many
from .radius import RadiusField, box_min_radius, scaled_radius, weight_radius
from .weights import Weight, as_points, inspect_weight, to_real

SPOKES = (0.0, 0.5, 1.0, 1.5, 2.0)
DIRECTIONS = 8
Q_FLOOR = 1e-300


class VerifyError(ValueError):
    pass


# ---------------------------------------------------------------- kappa

def parse_kappa(mode: str) -> tuple[str, object]:
    """'rho' | 'scale:<c>' | 'table:<path>'."""
    if mode == "rho":
        return "rho", None
    kind, _, arg = mode.partition(":")
    if kind == "scale":
        try:
            c = float(arg)
        except ValueError:
            raise VerifyError(f"bad kappa scale {arg!r}") from None
        if not c > 0:
            raise VerifyError("kappa scale must be positive")
        return "scale", c
    if kind == "table" and arg:
        return "table", arg
    raise VerifyError(f"unknown kappa mode {mode!r}; use rho, scale:<c> or table:<path>")


def read_kappa_table(path, n: int) -> tuple[np.ndarray, np.ndarray]:
    """CSV with header x1,y1,...,xn,yn,kappa; returns (complex points, values)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise VerifyError("kappa table is empty")
    data = np.array(rows[1:], float)
    if data.shape[1] != 2 * n + 1:
        raise VerifyError(f"kappa table needs {2 * n + 1} columns")
    if np.any(data[:, -1] <= 0):
        raise VerifyError("kappa values must be positive")
    return as_points(data[:, :-1], n), data[:, -1]


def kappa_field(rho: RadiusField, mode: str) -> tuple[RadiusField, dict]:
    """kappa as a radius field plus a note on how it was built.

    Table values are read by nearest neighbour.  Where a table value drops
    below rho the field uses max(kappa, rho) and the note says so.
    """
    kind, arg = parse_kappa(mode)
    if kind == "rho":
        return rho, {"mode": "rho"}
    if kind == "scale":
        return scaled_radius(rho, arg), {"mode": f"scale:{arg:g}", "scale": arg}
    pts, vals = read_kappa_table(arg, rho.n)
    tree = cKDTree(to_real(pts))
    below = vals < rho(pts)
    table = lambda x: vals[tree.query(to_real(x).reshape(-1, 2 * rho.n))[1]].reshape(x.shape[:-1])
    note = {"mode": "table", "path": str(arg), "entries": len(vals),
            "max_with_rho_applied": bool(below.any()), "entries_below_rho": int(below.sum())}
    if below.any():
        func = lambda x: np.maximum(table(x), rho.func(x))
    else:
        func = table
    return RadiusField(rho.n, func, "table", meta=note), note


def _constant_value(kappa: RadiusField, zs: np.ndarray, ws: np.ndarray, rtol: float = 1e-8) -> float | None:
    """The value of kappa if it is constant along every segment [z, w], else None.

    Exact for constant provenance; otherwise probed at 9 points per segment.
    """
    if kappa.provenance == "constant":
        return float(kappa(zs[:1])[0])
    t = np.linspace(0, 1, 9)[:, None, None]
    v = kappa((zs[None] + t * (ws - zs)[None]).reshape(-1, kappa.n))
    if v.max() <= v.min() * (1 + rtol):
        return float(np.median(v))
    return None


# ---------------------------------------------------------------- sampling

def spoke_pairs(kappa: RadiusField, d_max: float, spokes=SPOKES, directions: int = DIRECTIONS,
                step: float = 0.5, march: float = 0.02) -> tuple[np.ndarray, np.ndarray]:
    """z on the spokes s e_1, w along rays from z at equal kappa-length steps.

    The length along each ray is accumulated by marching with Euclidean step
    ``march`` kappa(current); it bounds the kappa-distance from above, so every
    w lies within kappa-distance d_max of its z.
    """
    n = kappa.n
    angles = 2 * np.pi * np.arange(directions) / directions
    zs, dirs = [], []
    for s in spokes:
        for a in angles:
            z0 = np.zeros(n, complex)
            z0[0] = s
            v = np.zeros(n, complex)
            v[0] = np.exp(1j * a)
            zs.append(z0)
            dirs.append(v)
    zs, dirs = np.array(zs), np.array(dirs)
    targets = np.arange(0.0, d_max + 1e-12, step)
    pos = np.zeros(len(zs))
    length = np.zeros(len(zs))
    out_z, out_w = [], []
    # record t=0 (z = w) once per spoke
    for i in range(0, len(zs), directions):
        out_z.append(zs[i])
        out_w.append(zs[i])
    nxt = np.ones(len(zs), int)  # index into targets
    while np.any(nxt < len(targets)):
        live = nxt < len(targets)
        cur = zs[live] + pos[live, None] * dirs[live]
        k1 = kappa(cur)
        mid = zs[live] + (pos[live] + 0.5 * march * k1)[:, None] * dirs[live]
        k2 = kappa(mid)
        ds = march * k1
        pos[live] += ds
        length[live] += ds / k2
        idx = np.flatnonzero(live)
        for j in idx[length[idx] >= targets[np.minimum(nxt[idx], len(targets) - 1)]]:
            out_z.append(zs[j])
            out_w.append(zs[j] + pos[j] * dirs[j])
            nxt[j] += 1
    return np.array(out_z), np.array(out_w)


def pair_distances(kappa: RadiusField, zs: np.ndarray, ws: np.ndarray, refine: int = 8) -> tuple[np.ndarray, str]:
    """kappa-distances for each pair: exact for constant kappa, else grid shortest paths."""
    allpts = np.concatenate([zs, ws])
    c = _constant_value(kappa, zs, ws)
    if c is not None:
        return np.linalg.norm(zs - ws, axis=-1) / c, "constant-exact"
    real = to_real(allpts)
    lo, hi = real.min(0), real.max(0)
    pad = 0.05 * max(1.0, float(np.max(hi - lo)))
    box = np.stack([lo - pad, hi + pad], 1)
    h = box_min_radius(kappa, box) / refine
    d = np.empty(len(zs))
    keys = [tuple(np.round(to_real(z), 12)) for z in zs]
    for key in sorted(set(keys)):
        sel = np.array([k == key for k in keys])
        field = agmon.distance_grid(kappa, box, h, as_points(np.array(key), kappa.n))
        d[sel] = field.at(to_real(ws[sel]))
    return d, "grid-dijkstra"


# ---------------------------------------------------------------- reports

@dataclass
class BoundReport:
    weight: dict
    kappa: dict
    z: np.ndarray
    w: np.ndarray
    absK: np.ndarray
    phi_sum: np.ndarray
    rho_z: np.ndarray
    rho_w: np.ndarray
    kappa_z: np.ndarray
    d: np.ndarray
    Q: np.ndarray
    window: tuple
    in_window: np.ndarray
    slope: float
    intercept: float
    max_residual: float
    eps_min: float
    log_margin: float
    verdict: str
    gate: dict
    distance_method: str
    dropped: dict = field(default_factory=dict)

    @property
    def eps(self) -> float:
        return -self.slope

    @property
    def C(self) -> float:
        return float(np.exp(self.intercept))

    def to_dict(self) -> dict:
        return {
            "weight": self.weight, "kappa": self.kappa, "window": list(self.window),
            "fit": {"slope": self.slope, "intercept": self.intercept, "eps_hat": self.eps, "C_hat": self.C,
                    "max_residual_above": self.max_residual, "pairs_in_window": int(self.in_window.sum())},
            "eps_min": self.eps_min, "log_margin": self.log_margin, "verdict": self.verdict,
            "gate": self.gate, "distance_method": self.distance_method, "dropped": self.dropped,
            "pairs": len(self.Q),
            "rows": [dict(zip(self.header(), r)) for r in self.rows()],
        }

    def header(self) -> list[str]:
        n = self.z.shape[-1]
        zc = [f"z_{a}{j}" for j in range(1, n + 1) for a in "xy"]
        wc = [f"w_{a}{j}" for j in range(1, n + 1) for a in "xy"]
        return ["pair"] + zc + wc + ["abs_K", "phi_sum", "rho_z", "rho_w", "kappa_z", "d_kappa", "Q", "in_window"]

    def rows(self):
        zr, wr = to_real(self.z), to_real(self.w)
        return [[i] + list(zr[i]) + list(wr[i]) + [self.absK[i], self.phi_sum[i], self.rho_z[i], self.rho_w[i],
                                                  self.kappa_z[i], self.d[i], self.Q[i], bool(self.in_window[i])]
                for i in range(len(self.Q))]

    def plot_rows(self):
        """(d_kappa, log Q, fitted line) for plotting."""
        return [[d, np.log(q), self.intercept + self.slope * d] for d, q in zip(self.d, self.Q) if q > Q_FLOOR]


def bound_ratio(m: KernelModel, rho: RadiusField, kappa: RadiusField, zs, ws):
    """Per-pair (Q, |K|, phi(z)+phi(w), rho(z), rho(w), kappa(z), tail flag)."""
    w = m.weight
    n = w.n
    zs = as_points(zs, n).reshape(-1, n)
    ws = as_points(ws, n).reshape(-1, n)
    K, tail, rnd = eval_kernel_many(m, zs, ws)
    flag = (tail > TAIL_THRESHOLD) | (rnd > TAIL_THRESHOLD)
    ps = w.phi(zs) + w.phi(ws)
    rz, rw, kz = rho(zs), rho(ws), kappa(zs)
    # work in logs: |K| and e^{-phi} can over/underflow separately
    with np.errstate(divide="ignore"):
        logQ = np.log(np.abs(K)) - ps + n * np.log(rz) + n * np.log(rw) + np.log(rz / kz)
    return np.exp(logQ), np.abs(K), ps, rz, rw, kz, flag


def fit_line(d: np.ndarray, logq: np.ndarray) -> tuple[float, float, float]:
    """Least squares log q = b + a d; returns (a, b, max residual above the line)."""
    A = np.stack([d, np.ones_like(d)], 1)
    (a, b), *_ = np.linalg.lstsq(A, logq, rcond=None)
    return float(a), float(b), float(np.max(logq - (a * d + b)))


def hypothesis_gate(w: Weight, c: float = 1.0) -> dict:
    """OPEN iff admissible with finite doubling and reverse Hoelder constants and positive comparability."""
    rep = inspect_weight(w, c)
    d = rep.to_dict()
    reasons = []
    if not rep.admissible:
        reasons.append("admissibility")
    if rep.reverse_holder is None or not np.isfinite(rep.reverse_holder):
        reasons.append("reverse_holder")
    if rep.comparability is None or not rep.comparability > 1e-12:
        reasons.append("comparability")
    d["gate"] = "CLOSED" if reasons else "OPEN"
    d["failed"] = reasons
    return d


def verify_bound(w: Weight, kappa_mode: str = "rho", window=(1.0, 6.0), eps_min: float = 0.05,
                 log_margin: float = 0.5, degree: int | None = None, pairs=None, gate: dict | None = None,
                 model: KernelModel | None = None) -> BoundReport:
    """Sample pairs, form Q, fit log Q against d_kappa over the window and give a verdict.

    ``pairs`` overrides the default spoke sampler; then tail-flagged kernel
    values inside the window are an error.  The default sampler drops pairs
    whose kernel value is tail-flagged and records how many.
    """
    d_lo, d_hi = window
    if not 0 <= d_lo < d_hi:
        raise VerifyError("window must satisfy 0 <= d_lo < d_hi")
    rho = weight_radius(w)
    kappa, knote = kappa_field(rho, kappa_mode)
    m = model if model is not None else build_kernel(w, degree)
    if gate is None:
        gate = hypothesis_gate(w)
    if pairs is None:
        zs, ws = spoke_pairs(kappa, d_hi + 0.5)
    else:
        zs, ws = (as_points(p, w.n).reshape(-1, w.n) for p in pairs)
    Q, absK, ps, rz, rw, kz, flag = bound_ratio(m, rho, kappa, zs, ws)
    dropped = {"tail_flagged": 0, "underflow": 0}
    if pairs is None and flag.any():
        dropped["tail_flagged"] = int(flag.sum())
        keep = ~flag
        zs, ws, Q, absK, ps, rz, rw, kz, flag = (a[keep] for a in (zs, ws, Q, absK, ps, rz, rw, kz, flag))
    d, method = pair_distances(kappa, zs, ws)
    in_win = (d >= d_lo) & (d <= d_hi)
    if np.any(flag & in_win):
        raise VerifyError(f"{int(np.sum(flag & in_win))} tail-flagged kernel values in the fit window; "
                          "raise the degree or shrink the window")
    usable = in_win & (Q > Q_FLOOR)
    dropped["underflow"] = int(np.sum(in_win & ~(Q > Q_FLOOR)))
    if usable.sum() < 8:
        raise VerifyError(f"only {int(usable.sum())} pairs in window [{d_lo:g}, {d_hi:g}]; need 8")
    slope, icpt, resid = fit_line(d[usable], np.log(Q[usable]))
    ok = slope <= -eps_min and resid <= log_margin
    verdict = "PASS" if ok else "FAIL"
    knote = dict(knote)
    if gate.get("gate") != "OPEN":
        knote["exploratory"] = True
    return BoundReport(w.spec(), knote, zs, ws, absK, ps, rz, rw, kz, d, Q, (d_lo, d_hi), usable,
                       slope, icpt, resid, eps_min, log_margin, verdict, gate, method, dropped)


# ---------------------------------------------------------------- decay of canonical solutions

def profile_distances(kappa: RadiusField, ts: np.ndarray, center=0.0) -> np.ndarray:
    """d_kappa(center, center + t e_1) for each t."""
    n = kappa.n
    c = as_points(center, n).reshape(n)
    pts = c[None] + np.outer(ts, np.eye(n)[0]).astype(complex)
    const = _constant_value(kappa, np.repeat(c[None], len(pts), 0), pts)
    if const is not None:
        return np.asarray(ts, float) / const
    if kappa.radial and np.all(c == 0):
        return np.array([agmon.distance_radial(kappa, p, audit=False) for p in pts])
    d, _ = pair_distances(kappa, np.repeat(c[None], len(ts), 0), pts)
    return d


def decay_report(ts: np.ndarray, profile: np.ndarray, d: np.ndarray, r0: float = 1.5,
                 d_hi: float | None = None) -> dict:
    """Fit log profile = b - eps d over d >= r0 (and <= d_hi); values below 1e-14 are skipped."""
    ts, profile, d = map(np.asarray, (ts, profile, d))
    sel = (d >= r0) & (profile >= 1e-14)
    if d_hi is not None:
        sel &= d <= d_hi
    if sel.sum() < 3:
        raise VerifyError("fewer than 3 profile points beyond R0 above the underflow floor")
    a, b, resid = fit_line(d[sel], np.log(profile[sel]))
    return {"eps_hat": -a, "C_hat": float(np.exp(b)), "max_residual_above": resid, "points": int(sel.sum()),
            "R0": r0, "d_hi": d_hi, "excluded_underflow": int(np.sum((d >= r0) & (profile < 1e-14)))}


def decay_rows(ts, profile, d):
    return [[t, p, x] for t, p, x in zip(ts, profile, d)]
