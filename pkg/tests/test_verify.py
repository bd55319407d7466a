import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bergman_lab import forms as fm
from bergman_lab import verify as vf
from bergman_lab.kernel import build_kernel
from bergman_lab.radius import constant_radius, scaled_radius, weight_radius
from bergman_lab.weights import make_weight

FOCK_Q0 = 1 / (2 * np.pi)


@pytest.fixture(scope="module")
def fock_report(fock, fock_model):
    return vf.verify_bound(fock, model=fock_model)


def ray_pairs(count=20, step=0.25):
    z = np.zeros(count, complex)
    w = step * np.arange(1, count + 1) * np.exp(0.3j)
    return z[:, None], w[:, None]


def test_fock_diagonal_ratio(fock, fock_model):
    rho = weight_radius(fock)
    zs = np.array([[0j], [0.5], [1.3 - 0.7j], [2j], [-1.8]])
    Q = vf.bound_ratio(fock_model, rho, rho, zs, zs)[0]
    assert np.allclose(Q, FOCK_Q0, rtol=1e-6)


def test_fock_off_diagonal_closed_form(fock, fock_model):
    rho = weight_radius(fock)
    zs, ws = ray_pairs()
    Q = vf.bound_ratio(fock_model, rho, rho, zs, ws)[0]
    dz = np.abs(zs - ws)[:, 0]
    assert np.allclose(Q, (2 / np.pi) * np.exp(-dz ** 2) / 4, rtol=1e-6)


def test_fock_bound_report(fock_report):
    rep = fock_report
    assert rep.slope <= -0.25
    assert rep.in_window.sum() >= 8
    assert rep.distance_method == "constant-exact"
    assert np.all(rep.Q > 0)
    diag = rep.d == 0
    assert diag.sum() == len(vf.SPOKES) and np.allclose(rep.Q[diag], FOCK_Q0, rtol=1e-6)
    assert rep.verdict == ("PASS" if rep.slope <= -rep.eps_min and rep.max_residual <= rep.log_margin else "FAIL")
    assert rep.gate["gate"] == "OPEN" and "exploratory" not in rep.kappa
    d = rep.to_dict()
    assert d["fit"]["eps_hat"] == pytest.approx(-rep.slope) and len(d["rows"]) == len(rep.Q)
    assert len(rep.rows()[0]) == len(rep.header())


def test_ratio_symmetric_for_constant_kappa(fock, fock_model):
    rho = weight_radius(fock)
    kappa = constant_radius(1.7)
    zs, ws = ray_pairs()
    zs = zs + 0.4 - 0.2j
    a = vf.bound_ratio(fock_model, rho, kappa, zs, ws)[0]
    b = vf.bound_ratio(fock_model, rho, kappa, ws, zs)[0]
    assert np.allclose(a, b, rtol=1e-12, atol=0)


def test_ratio_asymmetry_is_kappa_factor(quartic, quartic_model):
    rho = weight_radius(quartic)
    kappa = scaled_radius(rho, 3.0)
    zs = np.array([[0.1j], [0.3], [0.5 + 0.2j]])
    ws = np.array([[0.4], [-0.2j], [0.1]])
    a = vf.bound_ratio(quartic_model, rho, rho, zs, ws)[0]
    b = vf.bound_ratio(quartic_model, rho, rho, ws, zs)[0]
    assert np.allclose(a / b, 1.0, rtol=1e-12)  # kappa = rho: factor is 1
    a = vf.bound_ratio(quartic_model, rho, kappa, zs, ws)[0]
    assert np.allclose(a * 3.0, vf.bound_ratio(quartic_model, rho, rho, zs, ws)[0], rtol=1e-12)


def test_constant_shift_of_weight_leaves_ratio(fock_model):
    shifted = make_weight({"family": "custom_radial", "params": {"coefs": [0.7, 1.0]}})
    m = build_kernel(shifted, 64)
    rho = weight_radius(shifted)
    zs, ws = ray_pairs()
    a = vf.bound_ratio(m, rho, rho, zs, ws)[0]
    b = vf.bound_ratio(fock_model, rho, rho, zs, ws)[0]
    assert np.allclose(a, b, rtol=1e-10)


def test_scaled_kappa(fock, fock_model):
    pairs = ray_pairs(40, 0.1)
    base = vf.verify_bound(fock, pairs=pairs, model=fock_model, gate={"gate": "OPEN"})
    c = 2.0
    sc = vf.verify_bound(fock, kappa_mode=f"scale:{c}", pairs=pairs, model=fock_model, gate={"gate": "OPEN"},
                         window=(0.5, 3.0))
    assert np.allclose(sc.Q * c, base.Q, rtol=1e-14)
    assert np.allclose(sc.d * c, base.d, rtol=1e-14)
    # on a fixed distance axis the slope ignores the vertical shift by log c
    lo = vf.fit_line(base.d, np.log(base.Q))[0]
    hi = vf.fit_line(base.d, np.log(sc.Q))[0]
    assert abs(lo - hi) <= 1e-9
    # in kappa units the axis shrinks by c, so the fitted rate grows by c
    sel = sc.in_window
    assert vf.fit_line(sc.d[sel], np.log(sc.Q[sel]))[0] == pytest.approx(c * vf.fit_line(base.d[sel], np.log(base.Q[sel]))[0], rel=1e-9)


@given(st.floats(0.2, 5.0))
@settings(max_examples=15, deadline=None)
def test_scaled_kappa_divides_ratio(c):
    w = make_weight({"family": "fock"})
    rho = weight_radius(w)
    zs, ws = ray_pairs(6)
    a = vf.bound_ratio(test_scaled_kappa_divides_ratio.model, rho, rho, zs, ws)[0]
    b = vf.bound_ratio(test_scaled_kappa_divides_ratio.model, rho, scaled_radius(rho, c), zs, ws)[0]
    assert np.allclose(b * c, a, rtol=1e-13)


test_scaled_kappa_divides_ratio.model = build_kernel(make_weight({"family": "fock"}), 32)


def test_gate(fock2, gamma_weight):
    assert vf.hypothesis_gate(fock2)["gate"] == "OPEN"
    g = vf.hypothesis_gate(gamma_weight)
    assert g["gate"] == "CLOSED" and "comparability" in g["failed"]
    harmonic = make_weight({"family": "custom_radial", "params": {"coefs": [0.0]}})
    g = vf.hypothesis_gate(harmonic)
    assert g["gate"] == "CLOSED" and "admissibility" in g["failed"]


def test_closed_gate_marks_exploratory(fock, fock_model):
    rep = vf.verify_bound(fock, model=fock_model, gate={"gate": "CLOSED"})
    assert rep.kappa["exploratory"] is True


def test_parse_kappa():
    assert vf.parse_kappa("rho") == ("rho", None)
    assert vf.parse_kappa("scale:2.5") == ("scale", 2.5)
    assert vf.parse_kappa("table:/x.csv") == ("table", "/x.csv")
    for bad in ("scale:0", "scale:abc", "table:", "mu", "scale:-1"):
        with pytest.raises(vf.VerifyError):
            vf.parse_kappa(bad)


def test_kappa_table(tmp_path, quartic):
    rho = weight_radius(quartic)
    good = tmp_path / "good.csv"
    good.write_text("x1,y1,kappa\n0,0,5\n1,0,5\n0,1,5\n")
    k, note = vf.kappa_field(rho, f"table:{good}")
    assert note["max_with_rho_applied"] is False and note["entries"] == 3
    assert k(np.array([[0.9 + 0.1j]]))[0] == 5
    low = tmp_path / "low.csv"
    low.write_text("x1,y1,kappa\n0,0,0.01\n2,0,0.01\n")
    k, note = vf.kappa_field(rho, f"table:{low}")
    assert note["max_with_rho_applied"] is True and note["entries_below_rho"] == 2
    z = np.array([[0.1j], [1.9]])
    assert np.allclose(k(z), rho(z))
    bad = tmp_path / "bad.csv"
    bad.write_text("x1,y1,kappa\n0,0,-1\n")
    with pytest.raises(vf.VerifyError):
        vf.kappa_field(rho, f"table:{bad}")
    with pytest.raises(vf.VerifyError):
        vf.read_kappa_table(good, 2)


def test_too_few_pairs(fock, fock_model):
    with pytest.raises(vf.VerifyError, match="need 8"):
        vf.verify_bound(fock, pairs=ray_pairs(5), model=fock_model, gate={"gate": "OPEN"})
    with pytest.raises(vf.VerifyError):
        vf.verify_bound(fock, window=(3, 1), model=fock_model, gate={"gate": "OPEN"})


def test_user_pairs_with_tail_flags_raise(quartic):
    m = build_kernel(quartic, 4)
    zs = np.linspace(0.2, 3, 30)[:, None].astype(complex)
    ws = 0.5 * zs
    with pytest.raises(vf.VerifyError, match="tail-flagged"):
        vf.verify_bound(quartic, pairs=(zs, ws), model=m, gate={"gate": "OPEN"}, window=(0.5, 20))


def test_fit_line_recovers_exact_line():
    d = np.linspace(0, 5, 30)
    a, b, r = vf.fit_line(d, 2.0 - 0.7 * d)
    assert a == pytest.approx(-0.7, abs=1e-12) and b == pytest.approx(2.0, abs=1e-12) and abs(r) < 1e-12


@pytest.fixture(scope="module")
def decay_datum():
    return lambda z: np.exp(-np.abs(z[..., 0]) ** 2 / (2 * 0.09)) * fm.bump(z, 0, 2.4)


def _decay(w, datum, L, scale=1.0):
    sol = fm.canonical_solution(w, lambda z: scale * datum(z), L, 0.1)
    ts, prof = sol.profile()
    d = vf.profile_distances(weight_radius(w), ts)
    return vf.decay_report(ts, prof, d, r0=1.5, d_hi=6.0)


def test_decay(fock, decay_datum):
    rep = _decay(fock, decay_datum, 5)
    assert rep["eps_hat"] >= 0.2
    assert rep["points"] >= 3
    assert _decay(fock, decay_datum, 5, 10.0)["eps_hat"] == pytest.approx(rep["eps_hat"], rel=1e-6)
    wide = _decay(fock, decay_datum, 6)
    assert abs(wide["eps_hat"] - rep["eps_hat"]) <= 0.2 * rep["eps_hat"]


def test_decay_report_guards():
    ts = np.linspace(0, 3, 10)
    with pytest.raises(vf.VerifyError):
        vf.decay_report(ts, np.full(10, 1e-20), 2 * ts)
    rep = vf.decay_report(ts, np.exp(-2 * ts), 2 * ts, r0=0.0)
    assert rep["eps_hat"] == pytest.approx(1.0, abs=1e-12)


def test_profile_distances(fock, quartic):
    ts = np.array([0.0, 0.5, 1.0, 2.0])
    assert np.allclose(vf.profile_distances(weight_radius(fock), ts), 2 * ts, rtol=1e-8)
    d = vf.profile_distances(weight_radius(quartic), np.array([2.0]))
    assert d[0] == pytest.approx(2 * np.sqrt(5) + np.arcsinh(2) + 4, rel=1e-6)
