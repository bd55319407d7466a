"""Command line entry point.

Every command writes its artifacts plus manifest.json into --out and prints a
one-line summary ``<command> OK <metric>``.  Exit codes: 0 success, 1 input or
module error, 2 hypothesis gate closed (weight inspect).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import io

DEFAULTS = {
    "weight": None, "family": "fock", "n": 1, "m": None, "coef": None, "gamma": None, "coefs": None,
    "box": None, "h": None, "degree": None, "kappa": "rho", "out": "out",
    "points": None, "from": "0,0", "to": None, "z": "0,0", "w": "0,0",
    "window": "1,6", "eps_min": 0.05, "log_margin": 0.5, "c": 1.0,
    "covering": False, "sigma": 0.3, "r0": 1.5,
}


class InputError(ValueError):
    pass


# ---------------------------------------------------------------- parsing helpers

def floats(text, what: str) -> list[float]:
    if isinstance(text, (int, float)):
        return [float(text)]
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise InputError(f"{what}: expected comma separated numbers, got {text!r}") from None


def point_list(text, n: int, what: str) -> np.ndarray:
    """'x1,y1[,x2,y2];...' -> real array (k, 2n)."""
    if isinstance(text, (list, tuple)) and text and isinstance(text[0], (list, tuple)):
        groups = [floats(g, what) for g in text]
    else:
        groups = [floats(g, what) for g in str(text).split(";") if g.strip()]
    for g in groups:
        if len(g) != 2 * n:
            raise InputError(f"{what}: each point needs {2 * n} real coordinates")
    return np.array(groups, float)


def gamma_list(text) -> list[list[int]]:
    """'1,0;0,2' -> [[1, 0], [0, 2]]."""
    if isinstance(text, list):
        return [[int(a) for a in g] for g in text]
    try:
        return [[int(a) for a in g.split(",")] for g in str(text).split(";") if g.strip()]
    except ValueError:
        raise InputError(f"--gamma: expected exponent tuples like '1,0;0,2', got {text!r}") from None


def parse_box(spec, n: int) -> np.ndarray:
    """L (half-width), 'lo,hi' for every axis, or 2*2n numbers."""
    d = 2 * n
    v = floats(spec, "--box")
    if len(v) == 1:
        if v[0] <= 0:
            raise InputError("--box half-width must be positive")
        return np.array([[-v[0], v[0]]] * d)
    if len(v) == 2:
        box = np.array([v] * d)
    elif len(v) == 2 * d:
        box = np.array(v).reshape(d, 2)
    else:
        raise InputError(f"--box needs 1, 2 or {2 * d} numbers")
    if np.any(box[:, 1] <= box[:, 0]):
        raise InputError("--box needs lo < hi on every axis")
    return box


def weight_spec(cfg: dict) -> dict:
    if cfg.get("weight") and isinstance(cfg["weight"], dict):
        return cfg["weight"]
    family = cfg.get("weight") or cfg["family"]
    params = {}
    if cfg.get("m") is not None:
        params["m"] = cfg["m"]
    if cfg.get("coef") is not None:
        params["coef"] = cfg["coef"]
    if cfg.get("gamma") is not None:
        params["gamma"] = gamma_list(cfg["gamma"])
    if cfg.get("coefs") is not None:
        params["coefs"] = floats(cfg["coefs"], "--coefs")
    return {"family": family, "n": cfg["n"], "params": params}


# ---------------------------------------------------------------- config

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON file mirroring the flags; flags take precedence")
    common.add_argument("--weight", help="weight family (alias of --family)")
    common.add_argument("--family")
    common.add_argument("--n", type=int)
    common.add_argument("--m", type=int, help="radial_power exponent: phi = coef |z|^(2m)")
    common.add_argument("--coef", type=float)
    common.add_argument("--gamma", help="gamma_monomials exponents, e.g. '1,0;0,2'")
    common.add_argument("--coefs", help="comma separated coefficients")
    common.add_argument("--box", help="half-width L, 'lo,hi', or lo,hi per real axis")
    common.add_argument("--h", type=float, help="grid spacing")
    common.add_argument("--degree", type=int, help="kernel truncation degree")
    common.add_argument("--kappa", help="rho | scale:<c> | table:<path>")
    common.add_argument("--out", help="output directory")

    p = argparse.ArgumentParser(prog="bergman-lab", description="Weighted Bergman kernel decay lab")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    wp = sub.add_parser("weight", help="weight tools")
    wsub = wp.add_subparsers(dest="action", required=True)
    wi = wsub.add_parser("inspect", parents=[common], help="hypothesis report")
    wi.add_argument("--c", type=float, help="admissibility radius")

    r = sub.add_parser("radius", parents=[common], help="rho of the weight at points")
    r.add_argument("--points", help="'x,y;x,y' (default: 9 points per axis on the box)")
    r.add_argument("--covering", action="store_true", help="also build the ball covering of the box")

    d = sub.add_parser("distance", parents=[common], help="kappa-distance between two points")
    d.add_argument("--from", dest="from")
    d.add_argument("--to")

    k = sub.add_parser("kernel", parents=[common], help="evaluate K(z, w)")
    k.add_argument("--z")
    k.add_argument("--w")

    c = sub.add_parser("coercivity", parents=[common], help="smallest Rayleigh quotient of E against the kappa mass")

    v = sub.add_parser("verify", parents=[common], help="bound ratio regression")
    v.add_argument("--window", help="d_lo,d_hi")
    v.add_argument("--eps-min", dest="eps_min", type=float)
    v.add_argument("--log-margin", dest="log_margin", type=float)

    dc = sub.add_parser("decay", parents=[common], help="canonical solution decay profile (n = 1)")
    dc.add_argument("--sigma", type=float, help="width of the Gaussian datum at the origin")
    dc.add_argument("--r0", type=float, help="fit starts at this kappa-distance")
    return p


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults < config file < flags."""
    cfg = dict(DEFAULTS)
    flags = {k: v for k, v in vars(args).items()
             if k not in ("command", "action", "config") and v is not None and v is not False}
    path = getattr(args, "config", None)
    if path:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise InputError(f"cannot read config {path}: {e}") from None
        if not isinstance(data, dict):
            raise InputError("config must be a JSON object")
        unknown = set(data) - set(DEFAULTS)
        if unknown:
            raise InputError(f"unknown config keys: {', '.join(sorted(unknown))}")
        cfg.update(data)
    cfg.update(flags)
    if "weight" in flags and isinstance(flags["weight"], str):
        cfg["family"] = flags["weight"]
        cfg["weight"] = None
    for key in ("h", "eps_min", "c", "sigma"):
        if cfg.get(key) is not None and not float(cfg[key]) > 0:
            raise InputError(f"{key} must be positive")
    if not isinstance(cfg["n"], int) or cfg["n"] < 1:
        raise InputError("n must be a positive integer")
    return cfg


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class Outputs:
    """Collects artifacts in memory and writes them together at the end."""

    def __init__(self, out: Path):
        self.out = out
        self.files: dict[str, bytes] = {}

    def json(self, name, obj):
        self.files[name] = (io.dumps(obj) + "\n").encode("utf-8")

    def csv(self, name, header, rows):
        lines = [",".join(header)] + [",".join(io.fmt(v) for v in row) for row in rows]
        self.files[name] = ("\n".join(lines) + "\n").encode("utf-8")

    def flush(self, manifest: dict):
        self.out.mkdir(parents=True, exist_ok=True)
        for name, data in self.files.items():
            (self.out / name).write_bytes(data)
        manifest["files"] = {name: _sha(data) for name, data in sorted(self.files.items())}
        (self.out / "manifest.json").write_text(io.dumps(manifest) + "\n", encoding="utf-8", newline="\n")


def check_writable(out: Path):
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as e:
        raise InputError(f"output directory {out} is not writable: {e}") from None


# ---------------------------------------------------------------- commands

def _coords(z):
    return ",".join("%.17g" % v for v in z)


def cmd_weight_inspect(cfg, outs):
    from .verify import hypothesis_gate
    from .weights import make_weight
    w = make_weight(weight_spec(cfg))
    rep = hypothesis_gate(w, float(cfg["c"]))
    rep["weight"] = w.spec()
    outs.json("report.json", rep)
    print(io.dumps(rep))
    return (0 if rep["gate"] == "OPEN" else 2), None


def _radius_for(cfg):
    from .radius import weight_radius
    from .weights import make_weight
    w = make_weight(weight_spec(cfg))
    return w, weight_radius(w)


def cmd_radius(cfg, outs):
    from .radius import axiom_pairs, build_covering, probe_rows, radius_axiom_constant, sandwich_audit
    w, rho = _radius_for(cfg)
    box = parse_box(cfg["box"] if cfg["box"] is not None else 2.0, w.n)
    if cfg["points"] is not None:
        pts = point_list(cfg["points"], w.n, "--points")
    else:
        axes = [np.linspace(lo, hi, 9 if w.n == 1 else 3) for lo, hi in box]
        g = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([a.ravel() for a in g], -1)
    rows = probe_rows(rho, pts)
    header = [f"{a}{j}" for j in range(1, w.n + 1) for a in "xy"] + ["rho"]
    outs.csv("radius.csv", header, rows)
    x, y = axiom_pairs(rho, box, 200)
    C = radius_axiom_constant(rho, x, y)
    report = {"weight": w.spec(), "provenance": rho.provenance, "meta": rho.meta, "box": box,
              "axiom_constant_C": C.value, "axiom_witness": C.witness,
              "sandwich": sandwich_audit(rho, pts, 4.0)}
    if cfg["covering"]:
        cov = build_covering(rho, box, C.value)
        report["covering"] = {"balls": len(cov.radii), "overlap": cov.overlap, "uncovered": cov.uncovered,
                              "audit_points": cov.audit_points}
        outs.csv("covering.csv", header, cov.rows())
    outs.json("radius.json", report)
    vals = np.array([r[-1] for r in rows])
    return 0, f"rho_min={vals.min():.10g} rho_max={vals.max():.10g} C={C.value:.6g}"


def cmd_distance(cfg, outs):
    from . import agmon
    from .verify import kappa_field
    from .weights import as_points
    w, rho = _radius_for(cfg)
    kappa, note = kappa_field(rho, cfg["kappa"])
    if cfg["to"] is None:
        raise InputError("distance needs --to")
    a = point_list(cfg["from"], w.n, "--from")[0]
    b = point_list(cfg["to"], w.n, "--to")[0]
    result = {"weight": w.spec(), "kappa": note, "from": a, "to": b}
    if kappa.radial and not np.any(a) and cfg["box"] is None:
        result["d"] = agmon.distance_radial(kappa, as_points(b, w.n))
        result["method"] = "radial-quadrature"
    else:
        if cfg["box"] is not None:
            box = parse_box(cfg["box"], w.n)
        else:
            lo, hi = np.minimum(a, b), np.maximum(a, b)
            pad = 0.25 * max(1.0, float(np.max(hi - lo)))
            box = np.stack([lo - pad, hi + pad], 1)
        h = cfg["h"] if cfg["h"] is not None else agmon.box_min_radius(kappa, box) / 8
        field = agmon.distance_grid(kappa, box, float(h), as_points(a, w.n))
        result["d"] = float(field.at(b[None])[0])
        result["method"] = field.method
        result["h"] = h
        result["box"] = box
        header = [f"{c}{j}" for j in range(1, w.n + 1) for c in "xy"] + ["d"]
        outs.csv("distance_grid.csv", header, field.rows())
    outs.json("distance.json", result)
    print(io.dumps({"source": a, "target": b, "d": result["d"], "method": result["method"]}))
    return 0, f"d={result['d']:.12g} method={result['method']}"


def cmd_kernel(cfg, outs):
    from .kernel import build_kernel, eval_kernel
    from .weights import as_points, make_weight
    w = make_weight(weight_spec(cfg))
    m = build_kernel(w, cfg["degree"])
    zs = point_list(cfg["z"], w.n, "--z")
    ws = point_list(cfg["w"], w.n, "--w")
    if len(zs) != len(ws):
        raise InputError("--z and --w need the same number of points")
    rows, vals = [], []
    for a, b in zip(zs, ws):
        kv = eval_kernel(m, as_points(a, w.n), as_points(b, w.n))
        vals.append(kv)
        rows.append(list(a) + list(b) + [kv.K.real, kv.K.imag, kv.warning])
    header = ([f"z_{c}{j}" for j in range(1, w.n + 1) for c in "xy"]
              + [f"w_{c}{j}" for j in range(1, w.n + 1) for c in "xy"] + ["re_K", "im_K", "tail_flag"])
    outs.csv("kernel.csv", header, rows)
    outs.json("kernel_model.json", m.metadata())
    K = vals[0].K
    text = f"K={K.real:.7g}" if K.imag == 0 else f"K={K.real:.7g}{K.imag:+.7g}i"
    if any(v.warning for v in vals):
        print("warning: tail estimate above threshold for some pairs", file=sys.stderr)
        text += " tail_flag=1"
    return 0, text


def cmd_coercivity(cfg, outs):
    from .forms import assemble_mkh, coercivity_rayleigh
    from .verify import kappa_field
    w, rho = _radius_for(cfg)
    L = floats(cfg["box"], "--box")[0] if cfg["box"] is not None else 4.0
    h = cfg["h"] if cfg["h"] is not None else 0.1
    F = assemble_mkh(w, L, h)
    kappa, note = kappa_field(rho, cfg["kappa"])
    rep = coercivity_rayleigh(F, F.mass_kappa(kappa(F.z)))
    out = {"weight": w.spec(), "kappa": note, "L": L, "h": h, "nodes": F.grid.size, **rep.to_dict()}
    outs.json("coercivity.json", out)
    return 0, f"lambda_min={rep.value:.10g}"


def cmd_verify(cfg, outs):
    from .verify import verify_bound
    from .weights import make_weight
    w = make_weight(weight_spec(cfg))
    lo, hi = floats(cfg["window"], "--window")[:2]
    rep = verify_bound(w, cfg["kappa"], (lo, hi), float(cfg["eps_min"]), float(cfg["log_margin"]), cfg["degree"])
    outs.json("report.json", rep.to_dict())
    outs.csv("pairs.csv", rep.header(), rep.rows())
    outs.csv("plot.csv", ["d_kappa", "log_Q", "fit"], rep.plot_rows())
    return 0, f"eps={rep.eps:.6g} slope={rep.slope:.6g} verdict={rep.verdict}"


def cmd_decay(cfg, outs):
    from .forms import bump, canonical_solution, orthogonality_audit
    from .verify import decay_report, decay_rows, kappa_field, profile_distances
    w, rho = _radius_for(cfg)
    if w.n != 1:
        raise InputError("decay runs for n = 1")
    L = floats(cfg["box"], "--box")[0] if cfg["box"] is not None else 5.0
    h = cfg["h"] if cfg["h"] is not None else 0.1
    s = float(cfg["sigma"])
    datum = lambda z: np.exp(-np.abs(z[..., 0]) ** 2 / (2 * s * s)) * bump(z, 0.0, 0.48 * L)
    sol = canonical_solution(w, datum, L, h)
    ts, prof = sol.profile()
    kappa, note = kappa_field(rho, cfg["kappa"])
    d = profile_distances(kappa, ts)
    rep = decay_report(ts, prof, d, float(cfg["r0"]))
    rep.update({"weight": w.spec(), "kappa": note, "L": L, "h": h, "sigma": s, "cg_iterations": sol.iterations,
                "orthogonality": orthogonality_audit(sol)})
    outs.json("decay.json", rep)
    outs.csv("decay_profile.csv", ["t", "max_abs_f_e_minus_phi", "d_kappa"], decay_rows(ts, prof, d))
    return 0, f"eps={rep['eps_hat']:.6g}"


COMMANDS = {"radius": cmd_radius, "distance": cmd_distance, "kernel": cmd_kernel,
            "coercivity": cmd_coercivity, "verify": cmd_verify, "decay": cmd_decay}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 1
    name = "weight-inspect" if args.command == "weight" else args.command
    fn = cmd_weight_inspect if args.command == "weight" else COMMANDS[args.command]
    t0 = time.perf_counter()
    try:
        cfg = resolve(args)
        out = Path(cfg["out"])
        check_writable(out)
        outs = Outputs(out)
        code, summary = fn(cfg, outs)
    except (ValueError, KeyError, TypeError, OSError) as e:
        print(f"{name}: error: {e}", file=sys.stderr)
        return 1
    import scipy
    effective = {k: cfg[k] for k in sorted(cfg)}
    manifest = {
        "command": name,
        "argv": argv,
        "config": effective,
        "defaults": DEFAULTS,
        "input_sha256": _sha(io.dumps(effective).encode("utf-8")),
        "versions": {"bergman_lab": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "wall_time_s": time.perf_counter() - t0,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "exit_code": code,
    }
    outs.flush(manifest)
    if summary is not None:
        print(f"{name} OK {summary}")
    return code


if __name__ == "__main__":
    sys.exit(main())
