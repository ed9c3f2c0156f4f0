import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinhall import berry, transport
from spinhall.berry import SectorLabel
from spinhall.errors import (
    BasisNotSpinDiagonal,
    GapClosing,
    MissingSector,
    NotRotationallySymmetric,
    RequiresZeroRashba,
    TailBoundExceedsTolerance,
)
from spinhall.model import Basis, Model, ModelParams
from spinhall.transport import Distribution, QuadConfig

SO = ModelParams(delta_so=0.5)
RASHBA = ModelParams(delta_so=0.5, lambda_r=0.1)


def dirac(delta, v=1.0):
    """Massive Dirac curvature -v^2 delta / (2 E^3); Chern number -sign(delta)/2."""

    def g(p):
        p = np.asarray(p, float)
        return -v * v * delta / (2 * (v * v * np.sum(p * p, axis=-1) + delta * delta) ** 1.5)

    return g


def test_dirac_chern_number():
    est = transport.chern_number(dirac(0.5))
    assert est.value == pytest.approx(-0.5, abs=1e-6)
    assert est.error < 1e-6
    assert transport.chern_number(dirac(-0.3)).value == pytest.approx(0.5, abs=1e-6)


def test_zero_curvature_gives_zero():
    assert transport.chern_number(lambda p: np.zeros(np.shape(p)[:-1])).value == 0.0


def test_sector_chern_numbers_fw_and_psi():
    for model, basis, params in ((Model.KM_SO, Basis.FW, SO), (Model.KM_RASHBA, Basis.PSI, RASHBA)):
        rep = transport.spin_hall_conductivity(params, model, basis)
        assert rep.sector_chern["up-K"] == pytest.approx(0.5, abs=1e-6)
        assert rep.sector_chern["up-K'"] == pytest.approx(0.5, abs=1e-6)
        assert rep.sector_chern["down-K"] == pytest.approx(-0.5, abs=1e-6)
        assert rep.sector_chern_raw["up-K"] == pytest.approx(-0.5, abs=1e-6)
        assert rep.spin_chern == pytest.approx(1.0, abs=1e-6)
        assert rep.sigma_ah == pytest.approx(0.0, abs=1e-9)
        assert rep.spin_chern_valley["K"] == pytest.approx(0.5, abs=1e-6)


def test_report_keys_and_convention():
    d = transport.spin_hall_conductivity(SO, Model.KM_SO).to_dict()
    assert {"sector_chern", "sector_chern_raw", "spin_chern", "sigma_sh_units_e_over_2pi", "quadrature_error",
            "tail_bound", "convention", "config"} <= set(d)
    assert d["convention"]["orientation_sign"] == transport.ORIENTATION_SIGN
    assert d["convention"]["raw_spin_chern"] == pytest.approx(-1.0, abs=1e-6)


def test_plane_integral_of_fw_scalar_agrees_with_grid():
    # independent 2D midpoint sum on a polar grid
    r = np.geomspace(1e-6, 1e4, 20001)
    rm = np.sqrt(r[1:] * r[:-1])
    g = berry.fw_curvature_scalar(SO, rm)
    grid = np.sum(rm * g * np.diff(r))
    assert transport.chern_number(transport.sector_curvature(SO, Model.KM_SO, Basis.FW, SectorLabel.parse("up-K"))).value \
        == pytest.approx(grid, abs=1e-4)


def test_spin_chern_helpers():
    vals = {"up-K": 0.5, "up-K'": 0.5, "down-K": -0.5, "down-K'": -0.5}
    assert transport.spin_chern(vals) == 1.0
    assert transport.spin_chern({**vals, "down-K'": 0.5}) == 0.5
    assert transport.valley_spin_chern(vals) == {"K": 0.5, "K'": 0.5}
    with pytest.raises(MissingSector):
        transport.spin_chern({"up-K": 0.5, "down-K": -0.5})


def test_gapless_sector_has_zero_chern_number():
    curv = transport.sector_curvature(ModelParams(delta_so=0.0), Model.KM_SO, Basis.FW, SectorLabel.parse("up-K"))
    est = transport.chern_number(curv)
    assert abs(est.value) <= max(est.error, 1e-12)
    # the conductivity refuses the gapless point instead of returning a number
    with pytest.raises(GapClosing):
        transport.spin_hall_conductivity(ModelParams(delta_so=0.0), Model.KM_SO, Basis.FW)


def test_phi_basis_rejected():
    with pytest.raises(BasisNotSpinDiagonal, match="Psi"):
        transport.spin_hall_conductivity(RASHBA, Model.KM_RASHBA, Basis.PHI)
    with pytest.raises(BasisNotSpinDiagonal):
        transport.spin_current_density(RASHBA, Model.KM_RASHBA, Basis.PHI)


def test_gap_closing_rejected():
    with pytest.raises(GapClosing):
        transport.spin_hall_conductivity(ModelParams(delta_so=0.2, lambda_r=0.1), Model.KM_RASHBA, Basis.PSI)


def test_km_so_with_rashba_rejected():
    with pytest.raises(RequiresZeroRashba):
        transport.spin_hall_conductivity(RASHBA, Model.KM_SO, Basis.FW)


def test_anomalous_hall_single_band():
    assert transport.anomalous_hall_conductivity(dirac(0.5)) == pytest.approx(-0.5, abs=1e-6)
    assert transport.anomalous_hall_conductivity(lambda p: np.zeros(np.shape(p)[:-1])) == 0.0
    energy = lambda q: math.hypot(q, 0.5)  # noqa: E731
    below = Distribution("fermi_zero_T", 0.3)
    assert transport.anomalous_hall_conductivity(dirac(0.5), below, energy=energy) == 0.0


@pytest.mark.parametrize("ef", [0.6, 1.0, 3.0])
def test_partially_filled_band(ef):
    # occupied Berry flux of a Dirac cone: -(1 - delta/E_F)/2
    energy = lambda q: math.hypot(q, 0.5)  # noqa: E731
    val = transport.anomalous_hall_conductivity(dirac(0.5), Distribution("fermi_zero_T", ef), energy=energy)
    assert val == pytest.approx(-0.5 * (1 - 0.5 / ef), abs=1e-9)


def test_rotational_symmetry_required():
    aniso = lambda p: dirac(0.5)(p) * (1 + 0.1 * np.asarray(p)[..., 0] / (1e-3 + np.linalg.norm(p, axis=-1)))  # noqa: E731
    with pytest.raises(NotRotationallySymmetric):
        transport.chern_number(aniso)


def test_tail_bound_enforced_without_tail_integration():
    quad = QuadConfig(p_max=5.0, include_tail=False)
    with pytest.raises(TailBoundExceedsTolerance):
        transport.chern_number(dirac(0.5), quad=quad, p_max=5.0)
    est = transport.chern_number(dirac(0.5), quad=QuadConfig(include_tail=False), p_max=1e4)
    # extrapolated asymptote delta/(2 p_max) bounds the exact tail delta/(2 E(p_max))
    assert est.tail_bound == pytest.approx(0.25 / 1e4, rel=1e-6)
    assert est.tail_bound >= 0.25 / np.hypot(1e4, 0.5)
    assert abs(est.value + 0.5) <= est.error


def test_numeric_chern_of_fw_sector():
    prov = berry.sector_provider(SO, Model.KM_SO, Basis.FW, SectorLabel.parse("up-K"))
    assert transport.numeric_chern_number(prov) == pytest.approx(-0.5, abs=1e-3)


def test_robust_along_path():
    values = []
    for lam in np.linspace(0.0, 0.24, 7):
        rep = transport.spin_hall_conductivity(ModelParams(delta_so=0.5, lambda_r=float(lam)), Model.KM_RASHBA, Basis.PSI)
        values.append(rep.spin_chern)
    assert np.max(np.abs(np.array(values) - 1.0)) < 1e-6


def test_sign_consistency():
    rep = transport.sign_consistency_report(SO)
    assert rep["relative_sign_psi1_vs_fw_up"] == -1.0
    assert rep["relative_sign_spin_matched"] == 1.0
    assert rep["continuity_gap"] < 1e-6
    assert rep["max_abs_diff_spin_matched"] < 1e-6


def test_spin_current_zero_without_field():
    j = transport.spin_current_density(RASHBA, Model.KM_RASHBA, Basis.PSI)
    assert np.max(np.abs(j)) < 1e-10


def test_spin_current_linear_response():
    params = RASHBA.replace(e_field=(0.1, 0.0))
    j = transport.spin_current_density(params, Model.KM_RASHBA, Basis.PSI)
    # raw j^y = -(e E_x / 2 pi) * raw C_s... up to orientation
    assert j[0] == pytest.approx(0.0, abs=1e-10)
    assert abs(j[1]) == pytest.approx(0.1 / (2 * np.pi), rel=1e-3)
    assert transport.spin_hall_from_current(RASHBA) == pytest.approx(1.0, abs=1e-3)


def test_charge_trace_of_current_vanishes():
    params = RASHBA.replace(e_field=(0.1, 0.0))
    j = transport.spin_current_density(params, Model.KM_RASHBA, Basis.PSI, spin=np.eye(4))
    assert np.max(np.abs(j)) < 1e-8


def test_spin_current_basis_independent_without_rashba():
    params = ModelParams(delta_so=0.5, e_field=(0.0, 0.1))
    j_fw = transport.spin_current_density(params, Model.KM_SO, Basis.FW)
    j_psi = transport.spin_current_density(params, Model.KM_RASHBA, Basis.PSI)
    assert np.allclose(j_fw, j_psi, atol=1e-8)


@given(st.floats(0.2, 2.0), st.floats(0.0, 0.45))
@settings(max_examples=15, deadline=None)
def test_spin_chern_constant_in_regime(delta, frac):
    params = ModelParams(delta_so=delta, lambda_r=frac * delta)
    assert transport.spin_hall_conductivity(params).spin_chern == pytest.approx(1.0, abs=1e-6)


def test_thread_cap(monkeypatch):
    monkeypatch.setenv("SPINHALL_THREADS", "1")
    assert transport.max_workers() == 1
    one = transport.spin_hall_conductivity(RASHBA).to_dict()
    monkeypatch.setenv("SPINHALL_THREADS", "8")
    assert transport.max_workers() == 8
    assert transport.spin_hall_conductivity(RASHBA).to_dict() == one
    monkeypatch.setenv("SPINHALL_THREADS", "junk")
    assert transport.max_workers() == 4
