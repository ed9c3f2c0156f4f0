"""Built-in invariant suite run by ``spinhall check``.

Each check returns a :class:`CheckResult` holding the measured worst-case
deviation and the tolerance it is held to.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import basis as basis_mod
from . import berry, model, semiclassics, transport
from .model import Basis, Model, ModelParams, Valley


@dataclass
class CheckResult:
    module: str
    name: str
    value: float
    tol: float
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.tol)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.module}.{self.name}: {self.value:.3e} (tol {self.tol:.0e})"


REGISTRY: list[tuple[str, str, float, Callable[[], float]]] = []


def check(module: str, tol: float):
    def deco(fn):
        REGISTRY.append((module, fn.__name__, tol, fn))
        return fn

    return deco


RASHBA = ModelParams(delta_so=0.5, lambda_r=0.1)
SO = ModelParams(delta_so=0.5)


def square_grid(n: int = 101, half: float = 3.0) -> np.ndarray:
    ax = np.linspace(-half, half, n)
    px, py = np.meshgrid(ax, ax, indexing="ij")
    return np.stack([px, py], axis=-1).reshape(-1, 2)


def annulus_grid(n: int = 41, p_lo: float = 0.1, p_hi: float = 3.0) -> np.ndarray:
    """Points of an ``n x n`` square grid with ``p_lo <= |p| <= p_hi``."""
    g = square_grid(n, p_hi)
    r = np.hypot(g[:, 0], g[:, 1])
    return g[(r >= p_lo) & (r <= p_hi)]


def _off_origin(g, p_min=1e-6):
    return g[np.hypot(g[:, 0], g[:, 1]) > p_min]


def random_regime_params(n: int, seed: int = 7) -> list[ModelParams]:
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        d = rng.uniform(0.1, 1.5)
        lam = rng.uniform(0.0, 0.49 * d)
        out.append(ModelParams(delta_so=d, lambda_r=lam, v_f=rng.uniform(0.5, 2.0)))
    return out


def test_matrix() -> list[ModelParams]:
    """Gapped parameter matrix: delta in {0.2, 0.5, 1} times lambda in {0, 0.05, 0.1, 0.2 delta}."""
    pts = []
    for d in (0.2, 0.5, 1.0):
        for lam in (0.0, 0.05, 0.1, 0.2 * d):
            if d > 2 * lam and (d, lam) not in pts:
                pts.append((d, lam))
    return [ModelParams(delta_so=d, lambda_r=lam) for d, lam in pts]


def spin_hall_report(params: ModelParams):
    if params.lambda_r == 0:
        return transport.spin_hall_conductivity(params, Model.KM_SO, Basis.FW)
    return transport.spin_hall_conductivity(params, Model.KM_RASHBA, Basis.PSI)


# ---------------------------------------------------------------- model


@check("model", 1e-14)
def hermiticity():
    g = square_grid()
    worst = 0.0
    for p in (SO, RASHBA):
        h = model.hamiltonian_array(p, g)
        worst = max(worst, float(np.max(np.abs(h - np.swapaxes(h.conj(), -1, -2)))))
    return worst


@check("model", 1e-10)
def spectrum_matches_eigensolver():
    g = square_grid()
    worst = 0.0
    for p in random_regime_params(5):
        num = np.linalg.eigvalsh(model.hamiltonian_array(p, g, Valley.K))
        ana = np.sort(model.analytic_spectrum(p, g).energies, axis=-1)
        worst = max(worst, float(np.max(np.abs(num - ana))))
    return worst


@check("model", 1e-12)
def valley_isospectral():
    g = square_grid()
    ek = np.linalg.eigvalsh(model.hamiltonian_array(RASHBA, g, Valley.K))
    ekp = np.linalg.eigvalsh(model.hamiltonian_array(RASHBA, g, Valley.KP))
    return float(np.max(np.abs(ek - ekp)))


@check("model", 1e-12)
def energy_sum_rules():
    g = square_grid()
    worst = 0.0
    for p in random_regime_params(5) + [RASHBA]:
        e = model.analytic_spectrum(p, g).energies
        worst = max(
            worst,
            float(np.max(np.abs(e[:, 0] + e[:, 2] - 2 * p.lambda_r))),
            float(np.max(np.abs(e[:, 1] + e[:, 3] + 2 * p.lambda_r))),
        )
    return worst


@check("model", 1e-10)
def eigenstate_residuals():
    g = _off_origin(square_grid())
    worst = 0.0
    e = model.analytic_spectrum(RASHBA, g).energies
    for v in (Valley.K, Valley.KP):
        h = model.hamiltonian_array(RASHBA, g, v)
        u = model.phi_spinors(RASHBA, g, v)
        worst = max(worst, float(np.max(np.linalg.norm(h @ u - u * e[:, None, :], axis=-2))))
    return worst


@check("model", 1e-12)
def eigenstate_orthonormality():
    g = _off_origin(square_grid())
    worst = 0.0
    for v in (Valley.K, Valley.KP):
        u = model.phi_spinors(RASHBA, g, v)
        gram = np.swapaxes(u.conj(), -1, -2) @ u
        worst = max(worst, float(np.max(np.abs(gram - np.eye(4)))))
    return worst


@check("model", 1e-12)
def fw_diagonalization():
    g = square_grid()
    u = model.fw_transform(SO, g)
    h = model.hamiltonian_array(SO, g)
    d = u @ h @ np.swapaxes(u.conj(), -1, -2)
    off = d - np.einsum("...ii->...i", d)[..., None] * np.eye(8)
    unit = np.max(np.abs(u @ np.swapaxes(u.conj(), -1, -2) - np.eye(8)))
    return float(max(np.max(np.abs(off)), unit))


# ---------------------------------------------------------------- basis


@check("basis", 1e-15)
def rotation_unitary_hermitian():
    r = basis_mod.BasisRotation().matrix
    return float(max(np.max(np.abs(r - r.conj().T)), np.max(np.abs(r @ r - np.eye(4)))))


@check("basis", 1e-12)
def psi_spans_phi_pairs():
    g = _off_origin(square_grid(21))
    worst = 0.0
    for v in (Valley.K, Valley.KP):
        phi = model.phi_spinors(RASHBA, g, v)
        psi = phi @ np.kron(np.eye(2), basis_mod.R_TILDE)
        for blk in (slice(0, 2), slice(2, 4)):
            a, b = phi[..., blk], psi[..., blk]
            pa = a @ np.swapaxes(a.conj(), -1, -2)
            pb = b @ np.swapaxes(b.conj(), -1, -2)
            worst = max(worst, float(np.max(np.abs(pa - pb))))
    return worst


@check("basis", 1e-10)
def projected_spin_diagonal_in_psi():
    g = _off_origin(square_grid(21))
    sz = model.spin_operator(4)
    worst = 0.0
    for v in (Valley.K, Valley.KP):
        psi = model.phi_spinors(RASHBA, g, v) @ np.kron(np.eye(2), basis_mod.R_TILDE)
        s = np.swapaxes(psi.conj(), -1, -2) @ sz @ psi
        worst = max(worst, float(np.max(np.abs(s[..., 0, 1]))), float(np.max(np.abs(s[..., 2, 3]))))
    return worst


@check("basis", 1e-12)
def psi_hamiltonian_block_form():
    g = _off_origin(square_grid(21))
    h = semiclassics.projected_hamiltonian(RASHBA, g, Model.KM_RASHBA, Basis.PSI)
    e = model.analytic_spectrum(RASHBA, g).energies
    want = np.stack([[(e[:, 0] + e[:, 1]) / 2, (e[:, 0] - e[:, 1]) / 2],
                     [(e[:, 0] - e[:, 1]) / 2, (e[:, 0] + e[:, 1]) / 2]], axis=-1).swapaxes(0, 1)
    return float(np.max(np.abs(h[..., :2, :2] - want)))


# ---------------------------------------------------------------- berry

COMBOS = ((Model.KM_SO, Basis.FW, SO), (Model.KM_RASHBA, Basis.PHI, RASHBA), (Model.KM_RASHBA, Basis.PSI, RASHBA))


@check("berry", 1e-4)
def curvature_analytic_vs_numeric():
    g = annulus_grid()
    worst = 0.0
    for m, b, p in COMBOS:
        num = berry.numeric_curvature(berry.spinor_provider(p, m, b), g, 1e-3, hbar=p.hbar)
        ana = berry.analytic_curvature(m, b, p, g)
        worst = max(worst, float(np.max(np.abs(num - ana))))
    return worst


@check("berry", 1e-6)
def connection_analytic_vs_numeric():
    g = annulus_grid(21)
    worst = 0.0
    for m, b, p in COMBOS:
        num = berry.numeric_connection(berry.spinor_provider(p, m, b), g, 1e-4, hbar=p.hbar)
        ana = berry.analytic_connection(m, b, p, g)
        worst = max(worst, float(np.max(np.abs(num.x - ana.x))), float(np.max(np.abs(num.y - ana.y))))
    return worst


@check("berry", 1e-12)
def phi_spin_trace_vanishes():
    g = annulus_grid()
    gphi = berry.analytic_curvature(Model.KM_RASHBA, Basis.PHI, RASHBA, g)
    sz = np.diag([1.0, -1.0, 1.0, -1.0])
    return float(np.max(np.abs(np.einsum("ij,...ji->...", sz, gphi))))


@check("berry", 1e-8)
def curvature_gauge_invariance():
    g = annulus_grid(11)
    prov = berry.spinor_provider(RASHBA, Model.KM_RASHBA, Basis.PSI)
    gauged = berry.with_gauge(prov, lambda p: p[..., 0] * p[..., 1])
    a = berry.numeric_curvature(prov, g)
    b = berry.numeric_curvature(gauged, g)
    return float(np.max(np.abs(a - b)))


@check("berry", 1e-8)
def curvature_frame_covariance():
    g = annulus_grid(11)
    rng = np.random.default_rng(3)
    w, _ = np.linalg.qr(rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)))
    prov = berry.spinor_provider(RASHBA, Model.KM_RASHBA, Basis.PHI)
    a = berry.numeric_curvature(prov, g)
    b = berry.numeric_curvature(lambda p: prov(p) @ w, g)
    return float(np.max(np.abs(b - w.conj().T @ a @ w)))


@check("berry", 1e-8)
def psi_curvature_is_rotated_phi():
    g = annulus_grid(11)
    phi = berry.numeric_curvature(berry.spinor_provider(RASHBA, Model.KM_RASHBA, Basis.PHI), g)
    psi = berry.numeric_curvature(berry.spinor_provider(RASHBA, Model.KM_RASHBA, Basis.PSI), g)
    r = np.kron(np.eye(2), basis_mod.R_TILDE)
    return float(np.max(np.abs(psi - r @ phi @ r)))


@check("berry", 1e-8)
def curvature_rotational_symmetry():
    sz = transport.spin_operator_labels(Basis.PSI)

    def tr(p):
        return np.einsum("ij,...ji->...", sz, berry.analytic_curvature(Model.KM_RASHBA, Basis.PSI, RASHBA, p)).real

    return transport.check_rotational_symmetry(tr, (0.1, 0.5, 1.0, 3.0), tol=np.inf)


# ---------------------------------------------------------------- semiclassics


@check("semiclassics", 1e-14)
def scalar_reduction():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(100):
        p = ModelParams(b_field=rng.uniform(-1, 1), e_field=tuple(rng.uniform(-1, 1, 2)), charge=rng.uniform(0.5, 2))
        g, hg = rng.uniform(-2, 2), rng.uniform(-2, 2, 2)
        sol = semiclassics.weighted_velocities(semiclassics.scalar_symplectic_data(p, g, hg))
        w, xd, pd = semiclassics.anomalous_specialize(p, g, hg)
        worst = max(
            worst,
            abs(sol.measure[0, 0] - w),
            float(np.max(np.abs(sol.weighted_velocity[:, 0, 0] - xd))),
            float(np.max(np.abs(sol.weighted_force[:, 0, 0] - pd))),
        )
    return float(worst)


@check("semiclassics", 1e-10)
def kinematics_hermitian():
    g = annulus_grid(11)
    worst = 0.0
    p = RASHBA.replace(b_field=0.3, e_field=(0.1, -0.2))
    sol = semiclassics.weighted_velocities(semiclassics.analytic_symplectic_data(p, g, Model.KM_RASHBA, Basis.PSI))
    for m in [sol.measure, *sol.weighted_velocity, *sol.weighted_force]:
        worst = max(worst, float(np.max(np.abs(m - np.swapaxes(m.conj(), -1, -2)))))
    return worst


@check("semiclassics", 1e-10)
def anomalous_velocity_linearity():
    rng = np.random.default_rng(5)
    pts = rng.uniform(-2, 2, (20, 2))
    worst = 0.0
    h = 1e-3
    for m, b, base in COMBOS:
        g = berry.analytic_curvature(m, b, base, pts)
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            vp = semiclassics.weighted_velocities(
                semiclassics.analytic_symplectic_data(base.replace(e_field=tuple(e)), pts, m, b)).weighted_velocity
            vm = semiclassics.weighted_velocities(
                semiclassics.analytic_symplectic_data(base.replace(e_field=tuple(-e)), pts, m, b)).weighted_velocity
            d = (vp - vm) / (2 * h)
            for i in range(2):
                want = base.charge * g * (0.0 if i == j else (1.0 if (i, j) == (0, 1) else -1.0))
                worst = max(worst, float(np.max(np.abs(d[i] - want))))
    return worst


@check("semiclassics", 1e-10)
def force_free_momentum():
    tr = semiclassics.integrate_trajectory(SO, Model.KM_SO, Basis.FW, "up-K", (0, 0), (0.3, 0.4), (0, 10), 1e-10)
    return float(np.max(np.abs(tr.p - tr.p[0])))


@check("semiclassics", 1e-8)
def spin_drifts_opposite():
    p = SO.replace(e_field=(0.1, 0.0))
    up = semiclassics.integrate_trajectory(p, Model.KM_SO, Basis.FW, "up-K", (0, 0), (0.3, 0.0), (0, 5), 1e-10)
    dn = semiclassics.integrate_trajectory(p, Model.KM_SO, Basis.FW, "down-K", (0, 0), (0.3, 0.0), (0, 5), 1e-10)
    return abs(up.x[-1, 1] + dn.x[-1, 1])


# ---------------------------------------------------------------- transport


@check("transport", 1e-3)
def sector_half_quantization():
    worst = 0.0
    for p in test_matrix():
        rep = spin_hall_report(p)
        worst = max(worst, max(abs(abs(v) - 0.5) for v in rep.sector_chern.values()))
    return worst


@check("transport", 1e-3)
def spin_chern_robustness():
    vals = []
    for t in np.linspace(0.0, 1.0, 5):
        d = 0.3 + 0.7 * t
        vals.append(spin_hall_report(ModelParams(delta_so=d, lambda_r=0.4 * d * t)).spin_chern)
    return float(np.ptp(vals))


@check("transport", 0.0)
def spin_chern_identity():
    rep = spin_hall_report(RASHBA)
    return abs(rep.spin_chern - 0.5 * (rep.chern_up - rep.chern_down))


@check("transport", 1e-3)
def current_matches_quadrature():
    worst = 0.0
    for p, m in ((SO, Model.KM_SO), (RASHBA, Model.KM_RASHBA)):
        cs = spin_hall_report(p).spin_chern
        worst = max(worst, abs(transport.spin_hall_from_current(p, m) - cs))
    return worst


@check("transport", 1e-12)
def spin_trace_basis_invariance():
    g = annulus_grid(21)
    sz = transport.spin_operator_labels(Basis.PSI)
    r = np.kron(np.eye(2), basis_mod.R_TILDE)
    gpsi = berry.analytic_curvature(Model.KM_RASHBA, Basis.PSI, RASHBA, g)
    gphi = berry.analytic_curvature(Model.KM_RASHBA, Basis.PHI, RASHBA, g)
    a = np.einsum("ij,...ji->...", sz, gpsi)
    b = np.einsum("ij,...ji->...", r @ sz @ r, gphi)
    return float(np.max(np.abs(a - b)))


@check("transport", 1e-3)
def spin_chern_continuity():
    rep = transport.sign_consistency_report(SO)
    return rep["continuity_gap"] + abs(rep["spin_chern_km_so"] - 1.0)


def run_checks(modules=None) -> list[CheckResult]:
    out = []
    for module, name, tol, fn in REGISTRY:
        if modules and module not in modules:
            continue
        t0 = time.perf_counter()
        try:
            value = float(fn())
        except Exception:  # a crashing check is a failing check
            value = float("nan")
        out.append(CheckResult(module, name, value, tol, time.perf_counter() - t0))
    return out
