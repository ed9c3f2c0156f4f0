"""Momentum-space integration of curvature: Chern numbers and Hall conductivities.

Orientation: with ``eps^{xy} = +1`` and the index ordering of :mod:`spinhall.model`,
the raw spin-up Chern number of every shipped model is ``-1/2`` per valley
(the curvature of a massive Dirac cone with positive mass is negative).
Reported topological numbers are multiplied by :data:`ORIENTATION_SIGN` so
that ``C_s = +1`` for ``delta_so > 0``; raw values are kept in every report.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, optimize

from .berry import (
    ALL_SECTORS,
    SectorLabel,
    analytic_curvature,
    check_combination,
    numeric_curvature,
    sector_index,
)
from .errors import (
    BasisNotSpinDiagonal,
    GapClosing,
    InvalidParameter,
    MissingSector,
    NotRotationallySymmetric,
    TailBoundExceedsTolerance,
)
from .model import P_MIN, Basis, Model, ModelParams, Valley, band_energies
from .semiclassics import analytic_symplectic_data, weighted_velocities

ORIENTATION_SIGN = -1.0
GAP_GUARD = 1e-6
RING_TOL = 1e-8

Curvature = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Distribution:
    """Occupation of the positive-energy states: whole band or ``theta(E_F - E)``."""

    kind: str = "unity"
    fermi_energy: float | None = None

    def __post_init__(self):
        if self.kind not in ("unity", "fermi_zero_T"):
            raise InvalidParameter(f"unknown distribution {self.kind!r}")
        if self.kind == "fermi_zero_T" and self.fermi_energy is None:
            raise InvalidParameter("fermi_zero_T needs a fermi_energy")

    def cutoff(self, energy: Callable[[float], float] | None, p_max: float) -> float:
        """Largest occupied ``|p|`` for a radially increasing band ``energy(|p|)``."""
        if self.kind == "unity":
            return math.inf
        if energy is None:
            raise InvalidParameter("fermi_zero_T needs a band energy function")
        ef = self.fermi_energy
        if ef <= energy(0.0):
            return 0.0
        hi = max(p_max, 1.0)
        while energy(hi) < ef:
            hi *= 2.0
        return optimize.brentq(lambda q: energy(q) - ef, 0.0, hi, xtol=1e-14, rtol=1e-14)


@dataclass(frozen=True)
class QuadConfig:
    """Radial quadrature settings.

    ``p_max=None`` selects ``50 max(delta_so, lambda_r, 1)/v_f``.  The part
    beyond ``p_max`` is integrated on ``[p_max, inf)`` when ``include_tail``;
    otherwise it is replaced by the decay bound and counted as error.
    """

    p_min: float = P_MIN
    p_max: float | None = None
    epsabs: float = 1e-12
    epsrel: float = 1e-10
    limit: int = 200
    tolerance: float = 1e-3
    include_tail: bool = True
    ring_points: int = 16

    def resolved_p_max(self, params: ModelParams | None = None) -> float:
        if self.p_max is not None:
            return float(self.p_max)
        if params is None:
            return 50.0
        return 50.0 * max(params.delta_so, params.lambda_r, 1.0) / params.v_f


@dataclass
class ChernEstimate:
    value: float
    error: float
    tail: float
    tail_bound: float
    sector: SectorLabel | None = None

    def __float__(self):
        return self.value


@dataclass
class TopologyReport:
    sector_chern: dict
    chern_up: float
    chern_down: float
    spin_chern: float
    sigma_sh: float
    sigma_ah: float
    quadrature_error: float
    convention: dict
    spin_chern_valley: dict = field(default_factory=dict)
    sector_chern_raw: dict = field(default_factory=dict)
    tail_bound: float = 0.0
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "sector_chern": dict(self.sector_chern),
            "sector_chern_raw": dict(self.sector_chern_raw),
            "chern_up": self.chern_up,
            "chern_down": self.chern_down,
            "spin_chern": self.spin_chern,
            "spin_chern_valley": dict(self.spin_chern_valley),
            "sigma_sh_units_e_over_2pi": self.sigma_sh,
            "sigma_ah_units_e2_over_2pi_hbar": self.sigma_ah,
            "quadrature_error": self.quadrature_error,
            "tail_bound": self.tail_bound,
            "convention": dict(self.convention),
            "config": dict(self.config),
        }


def max_workers() -> int:
    """Worker cap from ``SPINHALL_THREADS`` (default 4)."""
    raw = os.environ.get("SPINHALL_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = 4
    return max(1, n)


def _map(fn, items):
    items = list(items)
    n = min(max_workers(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------- curvature providers


def sector_curvature(params: ModelParams, model, basis, sector: SectorLabel) -> Curvature:
    """Closed-form curvature of one definite-spin sector as a function of momentum."""
    model, basis = check_combination(model, basis, params)
    if basis is Basis.PHI:
        raise BasisNotSpinDiagonal(_PHI_MESSAGE)
    idx = sector_index(basis, sector)

    def curvature(p):
        return analytic_curvature(model, basis, params, p)[..., idx, idx].real

    return curvature


def numeric_sector_curvature(provider, step: float = 1e-3, *, hbar: float = 1.0) -> Curvature:
    """Plaquette curvature of a single-state provider as a scalar function of momentum."""

    def curvature(p):
        return numeric_curvature(provider, p, step, hbar=hbar)[..., 0, 0].real

    return curvature


def sector_energy(params: ModelParams, basis) -> Callable[[float], float]:
    """Diagonal energy of a definite-spin positive state as a function of ``|p|``."""
    basis = Basis(basis)

    def energy(pabs):
        e = band_energies(params, pabs)
        return float(0.5 * (e[..., 0] + e[..., 1]))

    return energy


def check_rotational_symmetry(curvature: Curvature, radii, n_phi: int = 16, tol: float = RING_TOL) -> float:
    """Largest relative spread of ``curvature`` over rings of the given radii."""
    phi = 2 * np.pi * np.arange(n_phi) / n_phi
    worst = 0.0
    for r in radii:
        vals = curvature(np.stack([r * np.cos(phi), r * np.sin(phi)], axis=-1))
        scale = max(float(np.max(np.abs(vals))), 1e-300)
        worst = max(worst, float(np.ptp(vals)) / scale)
    if worst > tol:
        raise NotRotationallySymmetric(f"curvature varies by {worst:.3e} (relative) around a ring")
    return worst


def _radial(curvature):
    def f(pabs):
        return float(curvature(np.array([pabs, 0.0])))

    return f


# ---------------------------------------------------------------- Chern numbers


def chern_number(
    curvature: Curvature,
    sector: SectorLabel | None = None,
    quad: QuadConfig = QuadConfig(),
    *,
    hbar: float = 1.0,
    p_max: float | None = None,
    p_cut: float = math.inf,
) -> ChernEstimate:
    """Raw ``(1/2 pi hbar) int d^2p G`` for a rotationally symmetric curvature.

    The angular integral is done exactly (``2 pi``) after checking the
    symmetry on a few rings.  ``p_cut`` limits the integration to ``|p| < p_cut``
    (occupied region of a Fermi sea).
    """
    p_lo = quad.p_min
    p_hi = quad.resolved_p_max() if p_max is None else p_max
    if not p_hi > p_lo:
        raise InvalidParameter("p_max must exceed p_min")
    check_rotational_symmetry(curvature, [0.1 * p_hi / 50, p_hi / 50, p_hi / 5], quad.ring_points)
    g = _radial(curvature)

    def integrand(q):
        return q * g(q) / hbar

    top = min(p_hi, p_cut)
    if top <= p_lo:
        return ChernEstimate(0.0, 0.0, 0.0, 0.0, sector)
    core, core_err = integrate.quad(integrand, p_lo, top, epsabs=quad.epsabs, epsrel=quad.epsrel, limit=quad.limit)
    # disc |p| < p_min: area times the (smooth, nearly constant) curvature there
    disc = 0.5 * p_lo**2 * abs(g(2.0 * p_lo)) / hbar
    tail = tail_err = tail_bound = 0.0
    if p_cut > p_hi:
        # integrand ~ K(p)/p^2 beyond p_max with K(p) = K_inf (1 - a/p^2) for curvature
        # decaying like |p|^-3; K(p_max) alone undershoots, so extrapolate K_inf
        k1 = p_hi**2 * abs(integrand(p_hi))
        k2 = 4 * p_hi**2 * abs(integrand(2 * p_hi))
        tail_bound = max(k1, k2, (4 * k2 - k1) / 3) / p_hi
        if quad.include_tail:
            tail, tail_err = integrate.quad(
                integrand, p_hi, p_cut, epsabs=quad.epsabs, epsrel=quad.epsrel, limit=quad.limit
            )
            if tail_err > quad.tolerance:
                raise TailBoundExceedsTolerance(f"tail error {tail_err:.3e} exceeds {quad.tolerance:g}")
        else:
            if tail_bound > quad.tolerance:
                raise TailBoundExceedsTolerance(
                    f"tail bound {tail_bound:.3e} beyond p_max = {p_hi:g} exceeds {quad.tolerance:g}"
                )
            tail_err = tail_bound
    return ChernEstimate(core + tail, core_err + tail_err + disc, tail, tail_bound, sector)


def _link_phase(a, b):
    d = np.linalg.det(np.swapaxes(a.conj(), -1, -2) @ b)
    return d / np.abs(d)


def numeric_chern_number(
    provider,
    *,
    p_min: float = 1e-4,
    p_max: float = 1e5,
    n_r: int = 400,
    n_phi: int = 64,
) -> float:
    """Raw Chern number of a provider's multiplet by plaquette link products.

    The annulus ``p_min < |p| < p_max`` is covered by a polar grid with
    logarithmic radii; each plaquette contributes the phase of the product of
    its four ``det`` links, so any smooth phase (or frame) redefinition of the
    provider cancels exactly.  The excluded disc and tail are of order
    ``p_min^2`` and ``1/p_max`` respectively.
    """
    r = np.geomspace(p_min, p_max, n_r + 1)
    phi = 2 * np.pi * np.arange(n_phi + 1) / n_phi
    rr, pp = np.meshgrid(r, phi, indexing="ij")
    pts = np.stack([rr * np.cos(pp), rr * np.sin(pp)], axis=-1)
    u = provider(pts)
    u[:, -1] = u[:, 0]
    u1 = _link_phase(u[:-1, :-1], u[1:, :-1])
    u2 = _link_phase(u[1:, :-1], u[1:, 1:])
    u3 = _link_phase(u[1:, 1:], u[:-1, 1:])
    u4 = _link_phase(u[:-1, 1:], u[:-1, :-1])
    # W = exp(-i flux): the Berry flux through each plaquette is -arg(W)
    flux = -np.angle(u1 * u2 * u3 * u4)
    return float(np.sum(flux) / (2 * np.pi))


def spin_chern(sector_values: dict) -> float:
    """``C_s = (1/2)(N_up - N_down)`` summed over both valleys."""
    vals = _normalise_sectors(sector_values)
    up = vals["up-K"] + vals["up-K'"]
    down = vals["down-K"] + vals["down-K'"]
    return 0.5 * (up - down)


def valley_spin_chern(sector_values: dict) -> dict:
    vals = _normalise_sectors(sector_values)
    return {v: 0.5 * (vals[f"up-{v}"] - vals[f"down-{v}"]) for v in ("K", "K'")}


def _normalise_sectors(sector_values: dict) -> dict:
    out = {}
    for k, v in sector_values.items():
        key = k.key if isinstance(k, SectorLabel) else SectorLabel.parse(k).key
        out[key] = v
    missing = [s.key for s in ALL_SECTORS if s.key not in out]
    if missing:
        raise MissingSector(f"missing sectors: {', '.join(missing)}")
    return out


# ---------------------------------------------------------------- conductivities

_PHI_MESSAGE = (
    "the Phi basis has no definite-spin states: Tr[S_z G_Phi] = 0 identically, so a "
    "spin Hall conductivity computed there would vanish; use the Psi basis"
)


def default_basis(model) -> Basis:
    return Basis.FW if Model(model) is Model.KM_SO else Basis.PSI


def _validate_spin_hall(params: ModelParams, model, basis):
    model, basis = Model(model), Basis(basis)
    if basis is Basis.PHI:
        raise BasisNotSpinDiagonal(_PHI_MESSAGE)
    check_combination(model, basis, params)
    if abs(params.delta_so - 2.0 * params.lambda_r) < GAP_GUARD:
        raise GapClosing(
            f"|delta_so - 2 lambda_r| = {abs(params.delta_so - 2 * params.lambda_r):.3e} < {GAP_GUARD:g}"
        )
    return model, basis


def convention_record(raw_spin_chern: float | None = None) -> dict:
    rec = {
        "eps_xy": 1,
        "orientation_sign": ORIENTATION_SIGN,
        "index_order": "tau (outer) x sigma x s; (A up, A down, B up, B down) per valley",
        "reported": "orientation_sign * raw",
        "note": "spin Hall value is the leading (spin Chern) contribution",
    }
    if raw_spin_chern is not None:
        rec["raw_spin_chern"] = raw_spin_chern
    return rec


def spin_hall_conductivity(
    params: ModelParams,
    model=Model.KM_RASHBA,
    basis=None,
    dist: Distribution = Distribution(),
    quad: QuadConfig = QuadConfig(),
) -> TopologyReport:
    """Per-sector Chern numbers, spin Chern number and ``sigma_SH`` (units ``e/2 pi``)."""
    basis = default_basis(model) if basis is None else basis
    model, basis = _validate_spin_hall(params, model, basis)
    p_max = quad.resolved_p_max(params)
    p_cut = dist.cutoff(sector_energy(params, basis), p_max)

    def one(sector):
        curv = sector_curvature(params, model, basis, sector)
        return chern_number(curv, sector, quad, hbar=params.hbar, p_max=p_max, p_cut=p_cut)

    estimates = _map(one, ALL_SECTORS)
    raw = {e.sector.key: e.value for e in estimates}
    rep = {k: ORIENTATION_SIGN * v for k, v in raw.items()}
    cs = spin_chern(rep)
    up = rep["up-K"] + rep["up-K'"]
    down = rep["down-K"] + rep["down-K'"]
    config = {"model": model.value, "basis": basis.value, "params": _params_dict(params), "distribution": asdict(dist),
              "quad": {**asdict(quad), "p_max": p_max}}
    return TopologyReport(
        sector_chern=rep,
        chern_up=up,
        chern_down=down,
        spin_chern=cs,
        sigma_sh=cs,
        sigma_ah=up + down,
        quadrature_error=float(sum(e.error for e in estimates)),
        convention=convention_record(spin_chern(raw)),
        spin_chern_valley=valley_spin_chern(rep),
        sector_chern_raw=raw,
        tail_bound=float(max(e.tail_bound for e in estimates)),
        config=config,
    )


def _params_dict(params: ModelParams) -> dict:
    d = asdict(params)
    d["e_field"] = list(d["e_field"])
    return d


def anomalous_hall_conductivity(
    curvature: Curvature,
    dist: Distribution = Distribution(),
    *,
    energy: Callable[[float], float] | None = None,
    quad: QuadConfig = QuadConfig(),
    hbar: float = 1.0,
) -> float:
    """``sigma_AH`` of a single band in units ``e^2/2 pi hbar`` (raw orientation).

    With the unity distribution this is the band's Chern number.
    """
    p_max = quad.resolved_p_max()
    p_cut = dist.cutoff(energy, p_max)
    return chern_number(curvature, None, quad, hbar=hbar, p_max=p_max, p_cut=p_cut).value


def spin_operator_labels(basis) -> np.ndarray:
    """Spin labels of the four positive-energy states as a diagonal operator."""
    basis = Basis(basis)
    if basis is Basis.PHI:
        raise BasisNotSpinDiagonal(_PHI_MESSAGE)
    diag = np.empty(4)
    for s in ALL_SECTORS:
        diag[sector_index(basis, s)] = 1.0 if s.spin == "up" else -1.0
    return np.diag(diag)


def spin_current_density(
    params: ModelParams,
    model=Model.KM_RASHBA,
    basis=None,
    dist: Distribution = Distribution(),
    *,
    spin: np.ndarray | None = None,
    p_min: float = 1e-8,
    p_max: float = 1e4,
    n_phi: int = 16,
    panels: int = 48,
    order: int = 16,
) -> np.ndarray:
    """``j^a = (hbar/2) int d^2p/(2 pi hbar)^2 Tr[S xdot^a w f]`` (raw orientation).

    The angular integral uses the trapezoid rule on ``n_phi`` points (exact for
    the low harmonics present); the radial integral is composite
    Gauss-Legendre in ``log |p|``, evaluated in one batch.  The group-velocity
    term cancels only between opposite momenta, leaving round-off of order
    ``p^2 eps``, so ``p_max`` stays moderate; the field-linear part neglected
    beyond it is about ``delta_so/(v_f p_max)`` of ``C_s``.  ``spin`` defaults
    to the spin-label operator of the basis; passing the identity gives the
    charge-current trace.
    """
    basis = default_basis(model) if basis is None else Basis(basis)
    if basis is Basis.PHI:
        raise BasisNotSpinDiagonal(_PHI_MESSAGE)
    model, basis = check_combination(model, basis, params)
    s_op = spin_operator_labels(basis) if spin is None else np.asarray(spin)
    p_cut = dist.cutoff(sector_energy(params, basis), p_max)
    top = min(p_max, p_cut)
    if top <= p_min:
        return np.zeros(2)
    x, wts = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(math.log(p_min), math.log(top), panels + 1)
    half = 0.5 * np.diff(edges)
    t = (edges[:-1, None] + half[:, None] * (x + 1.0)).ravel()
    wt = (half[:, None] * wts).ravel()
    r = np.exp(t)[:, None]
    phi = 2 * np.pi * np.arange(n_phi) / n_phi
    pts = np.stack([r * np.cos(phi), r * np.sin(phi)], axis=-1)
    sol = weighted_velocities(analytic_symplectic_data(params, pts, model, basis))
    tr = np.einsum("ij,arpji->arp", s_op, sol.weighted_velocity).real
    hb = params.hbar
    pref = 0.5 * hb / (2 * np.pi * hb) ** 2 * (2 * np.pi / n_phi)
    return pref * np.einsum("arp,r->a", tr, wt * np.exp(2 * t))


def spin_hall_from_current(params: ModelParams, model=Model.KM_RASHBA, basis=None, e_field=(0.1, 0.0), **kw) -> float:
    """Oriented ``sigma_SH`` (units ``e/2 pi``) from the field-linear part of the spin current."""
    pe = params.replace(e_field=tuple(e_field))
    p0 = params.replace(e_field=(0.0, 0.0))
    dj = spin_current_density(pe, model, basis, **kw) - spin_current_density(p0, model, basis, **kw)
    ex, ey = e_field
    # j^i = sigma eps^{ij} E_j; least squares over both components
    drive = np.array([ey, -ex])
    sigma_raw = float(dj @ drive / (drive @ drive))
    return ORIENTATION_SIGN * sigma_raw * 2 * np.pi / params.charge


# ---------------------------------------------------------------- sign report


def sign_consistency_report(params: ModelParams, *, radii=(0.1, 0.5, 1.0, 3.0), lambda_small: float = 1e-7) -> dict:
    """Compare the vanishing-Rashba limit of the Psi-basis curvature with the FW closed form.

    Records the relative sign of ``G[Psi_1]`` against the FW spin-up entry
    (``-1``: Psi_1 is the spin-down state) and of the spin-matched entries
    (``+1``), and checks continuity of the reported ``C_s`` across the limit.
    """
    p0 = params.replace(lambda_r=0.0)
    pl = params.replace(lambda_r=lambda_small)
    pts = np.array([[r, 0.0] for r in radii])
    g_fw = analytic_curvature(Model.KM_SO, Basis.FW, p0, pts)
    g_psi = analytic_curvature(Model.KM_RASHBA, Basis.PSI, pl, pts)
    up_fw = g_fw[:, 0, 0].real
    psi1 = g_psi[:, 0, 0].real
    k_up = sector_index(Basis.PSI, SectorLabel(Valley.K, "up"))
    psi_up = g_psi[:, k_up, k_up].real
    rel_psi1 = float(np.sign(np.mean(psi1 / up_fw)))
    rel_matched = float(np.sign(np.mean(psi_up / up_fw)))
    cs_so = spin_hall_conductivity(p0, Model.KM_SO, Basis.FW).spin_chern
    cs_r = spin_hall_conductivity(pl, Model.KM_RASHBA, Basis.PSI).spin_chern
    return {
        "radii": list(radii),
        "lambda_small": lambda_small,
        "relative_sign_psi1_vs_fw_up": rel_psi1,
        "relative_sign_spin_matched": rel_matched,
        "max_abs_diff_spin_matched": float(np.max(np.abs(psi_up - up_fw))),
        "spin_chern_km_so": cs_so,
        "spin_chern_km_rashba_limit": cs_r,
        "continuity_gap": abs(cs_so - cs_r),
        "convention": convention_record(),
    }
