import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinhall import basis, berry, model
from spinhall.berry import SectorLabel
from spinhall.errors import InvalidParameter, MomentumAtOrigin, RequiresZeroRashba, StepTooLarge, UnsupportedCombination
from spinhall.model import Basis, Model, ModelParams, Valley

SO = ModelParams(delta_so=0.5)
RASHBA = ModelParams(delta_so=0.5, lambda_r=0.1)
P = np.array([0.3, 0.4])
COMBOS = [(Model.KM_SO, Basis.FW, SO), (Model.KM_RASHBA, Basis.PHI, RASHBA), (Model.KM_RASHBA, Basis.PSI, RASHBA)]

angles = st.floats(0, 2 * np.pi)
radii = st.floats(0.1, 3.0)


def test_fw_connection_values():
    # hbar v^2/(2E(E + delta)) at |p| = 0.5, E = sqrt(0.5)
    e = np.sqrt(0.5)
    pref = 1.0 / (2 * e * (e + 0.5))
    conn = berry.analytic_connection(Model.KM_SO, Basis.FW, SO, P)
    sz = np.diag([1.0, -1.0, 1.0, -1.0])
    assert np.allclose(conn.x, pref * 0.4 * sz, atol=1e-15)
    assert np.allclose(conn.y, -pref * 0.3 * sz, atol=1e-15)
    assert conn.x[0, 0].real == pytest.approx(0.23431, abs=1e-5)
    assert conn.y[0, 0].real == pytest.approx(-0.17574, abs=1e-5)


def test_numeric_connection_matches_fw_closed_form():
    num = berry.numeric_connection(berry.spinor_provider(SO, Model.KM_SO, Basis.FW), P, 1e-4)
    ana = berry.analytic_connection(Model.KM_SO, Basis.FW, SO, P)
    assert np.max(np.abs(num.x - ana.x)) < 1e-6
    assert np.max(np.abs(num.y - ana.y)) < 1e-6
    assert num.residual < 1e-6


@pytest.mark.parametrize("m,b,params", COMBOS)
def test_numeric_connection_matches_closed_forms(m, b, params):
    num = berry.numeric_connection(berry.spinor_provider(params, m, b), P, 1e-4)
    ana = berry.analytic_connection(m, b, params, P)
    assert np.max(np.abs(num.x - ana.x)) < 1e-6
    assert np.max(np.abs(num.y - ana.y)) < 1e-6


def test_phi_connection_diagonal_is_pure_vortex():
    for params in (RASHBA, ModelParams(delta_so=1.3, lambda_r=0.4, v_f=2.0)):
        conn = berry.analytic_connection(Model.KM_RASHBA, Basis.PHI, params, P)
        assert np.allclose(np.diag(conn.x), -0.4 / 0.25, atol=1e-14)
        assert np.allclose(np.diag(conn.y), 0.3 / 0.25, atol=1e-14)


def test_phi_connection_off_diagonal_value():
    conn = berry.analytic_connection(Model.KM_RASHBA, Basis.PHI, RASHBA, P)
    n = model.normalizations(RASHBA, 0.5)
    assert conn.x[0, 1].real == pytest.approx(0.4 / 0.25 * 2 * n[0] * n[1], abs=1e-14)
    assert conn.x[0, 1].real == pytest.approx(1.355952, abs=1e-6)


def test_psi_connection_is_diagonal_and_uniform_without_rashba():
    conn = berry.analytic_connection(Model.KM_RASHBA, Basis.PSI, ModelParams(delta_so=0.5, lambda_r=0.0), P)
    assert np.max(np.abs(conn.x - np.diag(np.diag(conn.x)))) == 0.0


def test_constant_family_has_zero_connection():
    v = np.linalg.qr(np.random.default_rng(0).normal(size=(4, 2)))[0].astype(complex)
    conn = berry.numeric_connection(lambda p: np.broadcast_to(v, np.shape(p)[:-1] + v.shape), P, 1e-3)
    assert np.max(np.abs(conn.x)) == 0.0 and np.max(np.abs(conn.y)) == 0.0


def test_gauge_shift_of_connection_and_invariant_curvature():
    prov = berry.sector_provider(SO, Model.KM_SO, Basis.FW, SectorLabel("K", "up"))
    gauged = berry.with_gauge(prov, lambda p: p[..., 0] * p[..., 1])
    a = berry.numeric_connection(prov, P, 1e-4)
    b = berry.numeric_connection(gauged, P, 1e-4)
    # A -> A - hbar d(theta)/dp with theta = px py
    assert b.x[0, 0].real - a.x[0, 0].real == pytest.approx(-P[1], abs=1e-8)
    assert b.y[0, 0].real - a.y[0, 0].real == pytest.approx(-P[0], abs=1e-8)
    assert abs(berry.numeric_curvature(prov, P) - berry.numeric_curvature(gauged, P)).max() < 1e-8


def test_fw_curvature_value():
    g = berry.analytic_curvature(Model.KM_SO, Basis.FW, SO, P)
    # -hbar v^2 delta/(2 E^3), E^3 = 0.5^1.5
    assert g[0, 0].real == pytest.approx(-0.5 / (2 * 0.5**1.5), abs=1e-14)
    assert g[0, 0].real == pytest.approx(-0.70711, abs=1e-5)
    num = berry.numeric_curvature(berry.sector_provider(SO, Model.KM_SO, Basis.FW, SectorLabel("K", "up")), P, 1e-3)
    assert abs(num[0, 0] - g[0, 0]) / abs(g[0, 0]) < 1e-4


def test_phi_numeric_curvature_is_off_diagonal():
    g = berry.numeric_curvature(berry.spinor_provider(RASHBA, Model.KM_RASHBA, Basis.PHI, states=[0, 1]), P)
    assert abs(g[0, 0]) < 1e-8 and abs(g[1, 1]) < 1e-8
    assert abs(g[0, 1]) > 0.1


def test_plaquette_convergence_is_second_order():
    prov = berry.spinor_provider(RASHBA, Model.KM_RASHBA, Basis.PSI)
    exact = berry.analytic_curvature(Model.KM_RASHBA, Basis.PSI, RASHBA, P)
    g1 = berry.numeric_curvature(prov, P, 2e-2)
    g2 = berry.numeric_curvature(prov, P, 1e-2)
    richardson = np.max(np.abs(g1 - g2)) / 3.0
    change = np.max(np.abs(g1 - g2))
    assert change < 4 * richardson * 3.0 + 1e-15
    # error falls by ~4x when the step halves
    assert np.max(np.abs(g1 - exact)) / np.max(np.abs(g2 - exact)) == pytest.approx(4.0, rel=0.1)


def coherent_state(k):
    """Spin-1/2 coherent state with polar angle k*px and azimuth k*py; curvature -sin(k px) k^2 / 2."""

    def provider(p):
        p = np.asarray(p, float)
        th, ph = k * p[..., 0], k * p[..., 1]
        u = np.stack([np.cos(th / 2), np.exp(1j * ph) * np.sin(th / 2)], axis=-1)
        return u[..., None]

    return provider


def test_coherent_state_curvature():
    g = berry.numeric_curvature(coherent_state(3.0), (0.5, 0.5), 1e-3)
    assert abs(g[0, 0]) == pytest.approx(4.5 * np.sin(1.5), rel=1e-6)


def test_step_too_large():
    # plaquette flux ~ 4.5 * 0.6^2 > 1 rad
    with pytest.raises(StepTooLarge):
        berry.numeric_curvature(coherent_state(3.0), (0.5, 0.5), 0.6)


def test_origin_rejected():
    with pytest.raises(MomentumAtOrigin):
        berry.analytic_curvature(Model.KM_SO, Basis.FW, SO, (0.0, 0.0))
    with pytest.raises(MomentumAtOrigin):
        berry.numeric_connection(berry.spinor_provider(RASHBA, Model.KM_RASHBA, Basis.PHI), (1e-5, 0.0), 1e-4)


@pytest.mark.parametrize("m,b", [(Model.KM_SO, Basis.PHI), (Model.KM_SO, Basis.PSI), (Model.KM_RASHBA, Basis.FW)])
def test_unsupported_combinations(m, b):
    with pytest.raises(UnsupportedCombination):
        berry.analytic_curvature(m, b, SO, P)


def test_km_so_requires_zero_rashba():
    with pytest.raises(RequiresZeroRashba):
        berry.analytic_curvature(Model.KM_SO, Basis.FW, RASHBA, P)


def test_phi_trace_with_sz_vanishes():
    g = berry.analytic_curvature(Model.KM_RASHBA, Basis.PHI, RASHBA, P)
    assert np.trace(np.diag([1, -1, 1, -1]) @ g) == 0.0


def test_psi_is_rotated_phi():
    g_phi = berry.analytic_curvature(Model.KM_RASHBA, Basis.PHI, RASHBA, P)
    g_psi = berry.analytic_curvature(Model.KM_RASHBA, Basis.PSI, RASHBA, P)
    r = np.kron(np.eye(2), basis.R_TILDE)
    assert np.max(np.abs(r @ g_phi @ r - g_psi)) < 1e-12


def test_dn1n2_against_five_point_stencil():
    h = 1e-3
    for pabs in (0.05, 0.3, 1.0, 2.5):
        f = lambda q: berry.n1n2(RASHBA, q)  # noqa: E731
        stencil = (-f(pabs + 2 * h) + 8 * f(pabs + h) - 8 * f(pabs - h) + f(pabs - 2 * h)) / (12 * h)
        assert berry.d_n1n2(RASHBA, pabs) == pytest.approx(stencil, abs=1e-8)


def test_curvature_scalar_limits():
    # without Rashba N1 N2 = 1/4 + delta/(4E), giving +v^2 delta/(2 E^3)
    p0 = ModelParams(delta_so=0.5)
    e = np.sqrt(0.25 + 0.25)
    assert berry.n1n2(p0, 0.5) == pytest.approx(0.25 + 0.5 / (4 * e), abs=1e-15)
    assert berry.rashba_curvature_scalar(p0, 0.5) == pytest.approx(0.5 / (2 * e**3), rel=1e-13)
    # regular at tiny momentum
    assert np.isfinite(berry.rashba_curvature_scalar(RASHBA, 1e-9))


@given(radii, angles, angles)
@settings(max_examples=40, deadline=None)
def test_curvature_rotational_symmetry(r, a, b):
    p1 = r * np.array([np.cos(a), np.sin(a)])
    p2 = r * np.array([np.cos(b), np.sin(b)])
    for m, bs, params in COMBOS:
        g1 = berry.analytic_curvature(m, bs, params, p1)
        g2 = berry.analytic_curvature(m, bs, params, p2)
        assert np.max(np.abs(g1 - g2)) <= 1e-8 * np.max(np.abs(g1))


@given(radii, angles, st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_curvature_frame_covariance(r, a, seed):
    rng = np.random.default_rng(seed)
    w, _ = np.linalg.qr(rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)))
    p = r * np.array([np.cos(a), np.sin(a)])
    prov = berry.spinor_provider(RASHBA, Model.KM_RASHBA, Basis.PHI)
    g = berry.numeric_curvature(prov, p)
    gw = berry.numeric_curvature(lambda q: prov(q) @ w, p)
    assert np.max(np.abs(gw - w.conj().T @ g @ w)) < 1e-8
    # plaquettes amplify link round-off by 1/step^2, leaving an absolute floor near 1e-9
    assert abs(np.trace(gw) - np.trace(g)) < 1e-8


@given(radii, angles)
@settings(max_examples=25, deadline=None)
def test_curvature_smooth_gauge_invariance(r, a):
    p = r * np.array([np.cos(a), np.sin(a)])
    prov = berry.spinor_provider(RASHBA, Model.KM_RASHBA, Basis.PSI)
    gauged = berry.with_gauge(prov, lambda q: np.sin(3 * q[..., 0]) + q[..., 0] * q[..., 1] ** 2)
    assert np.max(np.abs(berry.numeric_curvature(prov, p) - berry.numeric_curvature(gauged, p))) < 1e-8


def test_berry_data_containers_are_hermitian():
    data = berry.numeric_berry_data(berry.spinor_provider(RASHBA, Model.KM_RASHBA, Basis.PSI), P, basis="Psi", valley="full")
    for m in (data.connection.x, data.connection.y, data.curvature):
        assert np.max(np.abs(m - m.conj().T)) < 1e-10
    ana = berry.analytic_berry_data(Model.KM_RASHBA, Basis.PSI, RASHBA, P)
    assert np.max(np.abs(ana.curvature - data.curvature)) < 1e-4


def test_sector_labels():
    assert SectorLabel.parse("down-K'") == SectorLabel(Valley.KP, "down")
    assert SectorLabel.parse("K:up").key == "up-K"
    assert len({s.key for s in berry.ALL_SECTORS}) == 4
    with pytest.raises(InvalidParameter):
        SectorLabel.parse("sideways-K")
