"""Matrix-valued Berry connections and curvatures.

A *spinor provider* is any pure function ``p -> u`` mapping momenta of shape
``(..., 2)`` to spinor columns of shape ``(..., n, m)``.  The connection is
``A^i = i hbar u^dagger du/dp_i`` and the curvature
``G^xy = dA^y/dp_x - dA^x/dp_y - i [A^x, A^y]`` (orientation ``eps^xy = +1``).

Closed forms cover the positive-energy sector of both valleys as 4x4 matrices:

* FW basis (``lambda_r = 0``): states ordered ``(K up, K down, K' up, K' down)``.
* Phi basis: ``(Phi_1, Phi_2, Phi_5, Phi_6)``.
* Psi basis: ``(Psi_1, Psi_2, Psi_5, Psi_6)``; Psi_1 and Psi_5 carry negative
  spin polarization, see :func:`spinhall.basis.psi_polarization`.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .basis import R_TILDE
from .errors import (
    BasisNotSpinDiagonal,
    InvalidParameter,
    MomentumAtOrigin,
    RequiresZeroRashba,
    StepTooLarge,
    UnsupportedCombination,
)
from .model import (
    P_MIN,
    Basis,
    Model,
    ModelParams,
    Valley,
    _momentum,
    _r_plus_c,
    _roots,
    fw_spinors,
    fw_transform,
    normalizations,
    phi_spinors,
)

Provider = Callable[[np.ndarray], np.ndarray]

CONNECTION_RESIDUAL_MAX = 1e-4

SUPPORTED = {(Model.KM_SO, Basis.FW), (Model.KM_RASHBA, Basis.PHI), (Model.KM_RASHBA, Basis.PSI)}

SPINS = ("up", "down")


@dataclass(frozen=True)
class SectorLabel:
    """One (valley, spin) sector of the positive-energy states."""

    valley: Valley
    spin: str

    def __post_init__(self):
        object.__setattr__(self, "valley", Valley(self.valley))
        if self.valley is Valley.FULL:
            raise InvalidParameter("a sector needs valley K or K'")
        if self.spin not in SPINS:
            raise InvalidParameter(f"spin must be 'up' or 'down', got {self.spin!r}")

    @classmethod
    def parse(cls, text: str) -> "SectorLabel":
        """Parse ``"up-K"``, ``"down-K'"`` (also ``"K:up"``)."""
        parts = [t for t in re.split(r"[-:,/ ]", text.strip()) if t]
        spin = [t for t in parts if t.lower() in SPINS]
        valley = [t for t in parts if t.lower() not in SPINS]
        if len(spin) != 1 or len(valley) != 1:
            raise InvalidParameter(f"cannot parse sector label {text!r}")
        name = valley[0].upper().replace("P", "'")
        return cls(Valley(name), spin[0].lower())

    @property
    def key(self) -> str:
        return f"{self.spin}-{self.valley.value}"


ALL_SECTORS = tuple(SectorLabel(v, s) for v in (Valley.K, Valley.KP) for s in SPINS)

# position of each (valley, spin) sector among the four positive-energy states
SECTOR_INDEX = {
    Basis.FW: {("K", "up"): 0, ("K", "down"): 1, ("K'", "up"): 2, ("K'", "down"): 3},
    Basis.PSI: {("K", "down"): 0, ("K", "up"): 1, ("K'", "down"): 2, ("K'", "up"): 3},
}


@dataclass
class Connection:
    x: np.ndarray
    y: np.ndarray
    residual: float = 0.0

    def __iter__(self):
        return iter((self.x, self.y))


@dataclass
class BerryData:
    momentum: np.ndarray
    connection: Connection
    curvature: np.ndarray
    basis: Basis
    valley: Valley


def check_combination(model, basis, params: ModelParams | None = None) -> tuple[Model, Basis]:
    model, basis = Model(model), Basis(basis)
    if (model, basis) not in SUPPORTED:
        raise UnsupportedCombination(f"no closed form for model={model.value}, basis={basis.value}")
    if model is Model.KM_SO and params is not None and params.lambda_r != 0:
        raise RequiresZeroRashba("model km-so has lambda_r = 0")
    return model, basis


# ---------------------------------------------------------------- providers


def positive_spinors(params: ModelParams, p, model, basis) -> np.ndarray:
    """Positive-energy states of both valleys embedded in the 8-dim space, shape ``(..., 8, 4)``."""
    model, basis = check_combination(model, basis, params)
    p = _momentum(p)
    if basis is Basis.FW:
        u = np.swapaxes(fw_transform(params, p).conj(), -1, -2)
        return u[..., [0, 3, 6, 5]]
    out = np.zeros(p.shape[:-1] + (8, 4), dtype=complex)
    out[..., :4, 0:2] = phi_spinors(params, p, Valley.K)[..., :2]
    out[..., 4:, 2:4] = phi_spinors(params, p, Valley.KP)[..., :2]
    if basis is Basis.PSI:
        out = out @ np.kron(np.eye(2), R_TILDE)
    return out


def spinor_provider(params: ModelParams, model, basis, states=None) -> Provider:
    """Provider of positive-energy states; ``states`` selects a subset of the four columns."""
    model, basis = check_combination(model, basis, params)

    def provider(p):
        u = positive_spinors(params, p, model, basis)
        return u if states is None else u[..., list(states)]

    return provider


def sector_index(basis, sector: SectorLabel) -> int:
    basis = Basis(basis)
    if basis not in SECTOR_INDEX:
        raise BasisNotSpinDiagonal(f"basis {basis.value} has no definite-spin states")
    return SECTOR_INDEX[basis][(sector.valley.value, sector.spin)]


def sector_provider(params: ModelParams, model, basis, sector: SectorLabel) -> Provider:
    """Single-state provider for one (valley, spin) sector in a spin-diagonal basis."""
    model, basis = check_combination(model, basis, params)
    return spinor_provider(params, model, basis, states=[sector_index(basis, sector)])


def valley_provider(params: ModelParams, basis, valley) -> Provider:
    """All four spinors of one valley (4-dim), in the Phi, Psi or FW basis."""
    basis, valley = Basis(basis), Valley(valley)

    def provider(p):
        if basis is Basis.FW:
            return fw_spinors(params, p, valley)
        u = phi_spinors(params, p, valley)
        if basis is Basis.PSI:
            u = u @ np.kron(np.eye(2), R_TILDE)
        return u

    return provider


def with_gauge(provider: Provider, theta: Callable[[np.ndarray], np.ndarray]) -> Provider:
    """Multiply every spinor by ``exp(i theta(p))``."""

    def gauged(p):
        p = np.asarray(p, dtype=float)
        return provider(p) * np.exp(1j * theta(p))[..., None, None]

    return gauged


# ---------------------------------------------------------------- numerics


def _dagger(a):
    return np.swapaxes(a.conj(), -1, -2)


def _guard_origin(p, radius):
    pabs = np.hypot(p[..., 0], p[..., 1])
    if np.any(pabs <= radius):
        raise MomentumAtOrigin(f"stencil would reach |p| <= {P_MIN:g}")


def numeric_connection(provider: Provider, p, step: float = 1e-4, *, hbar: float = 1.0) -> Connection:
    """Central-difference connection ``i hbar u^dagger du/dp_i`` at ``p``.

    The provider must return a smooth section (closed-form spinors do); the
    connection is gauge dependent, so raw eigensolver output is not suitable.
    The Hermitian part is returned; the discarded anti-Hermitian part is
    reported as ``residual``.
    """
    p = _momentum(p)
    if step <= 0:
        raise ValueError("step must be > 0")
    _guard_origin(p, P_MIN + step)
    u0 = provider(p)
    comps = []
    residual = 0.0
    for i in range(2):
        d = np.zeros(2)
        d[i] = step
        du = (provider(p + d) - provider(p - d)) / (2.0 * step)
        a = 1j * hbar * _dagger(u0) @ du
        anti = 0.5 * (a - _dagger(a))
        residual = max(residual, float(np.max(np.abs(anti), initial=0.0)))
        comps.append(0.5 * (a + _dagger(a)))
    if residual > CONNECTION_RESIDUAL_MAX:
        raise StepTooLarge(f"anti-Hermitian residual {residual:.3e} exceeds {CONNECTION_RESIDUAL_MAX:g}")
    return Connection(comps[0], comps[1], residual)


def _unitarize(m):
    w, _, vh = np.linalg.svd(m)
    return w @ vh


def _link(a, b):
    return _unitarize(_dagger(a) @ b)


def hermitian_log(w: np.ndarray) -> np.ndarray:
    """Hermitian ``X`` with ``W = exp(-i X)`` and spectrum of ``X`` in ``(-pi, pi)``, for unitary ``W``."""
    eye = np.eye(w.shape[-1])
    y = 1j * (w - eye) @ np.linalg.inv(w + eye)
    y = 0.5 * (y + _dagger(y))
    vals, vecs = np.linalg.eigh(y)
    return (vecs * (2.0 * np.arctan(vals))[..., None, :]) @ _dagger(vecs)


def numeric_curvature(provider: Provider, p, step: float = 1e-3, *, hbar: float = 1.0) -> np.ndarray:
    """Curvature ``G^xy`` of the multiplet spanned by the provider's columns.

    A square plaquette of side ``step`` centred on ``p`` is traversed
    counter-clockwise; the ordered product of polar-unitarized overlap
    matrices is transported back to the centre basis, so the result is
    covariant (``G -> V^dagger G V`` under ``u -> u V``) and independent of any
    phase or frame choice at the corners.
    """
    p = _momentum(p)
    if step <= 0:
        raise ValueError("step must be > 0")
    h = 0.5 * step
    _guard_origin(p, P_MIN + h * np.sqrt(2.0))
    corners = [p + np.array(d) for d in ((-h, -h), (h, -h), (h, h), (-h, h))]
    u0 = provider(p)
    uc = [provider(c) for c in corners]
    w = _link(u0, uc[0])
    for a, b in ((0, 1), (1, 2), (2, 3), (3, 0)):
        w = w @ _link(uc[a], uc[b])
    w = w @ _link(uc[0], u0)
    x = hermitian_log(w)
    flux = np.max(np.abs(np.linalg.eigvalsh(x)), initial=0.0)
    if flux > 1.0:
        raise StepTooLarge(f"plaquette flux {flux:.3f} rad is too large for step {step:g}")
    return hbar * x / (step * step)


def numeric_berry_data(provider: Provider, p, *, basis, valley, conn_step=1e-4, curv_step=1e-3, hbar=1.0):
    p = _momentum(p)
    return BerryData(
        momentum=p,
        connection=numeric_connection(provider, p, conn_step, hbar=hbar),
        curvature=numeric_curvature(provider, p, curv_step, hbar=hbar),
        basis=Basis(basis),
        valley=Valley(valley),
    )


# ---------------------------------------------------------------- closed forms


def n1n2(params: ModelParams, pabs) -> np.ndarray:
    n = normalizations(params, pabs)
    return n[..., 0] * n[..., 1]


def d_n1n2(params: ModelParams, pabs) -> np.ndarray:
    """Radial derivative of ``N_1 N_2``.

    With ``N_a = sqrt(1 + c_a/R_a)/2``, ``R_a = sqrt(c_a^2 + v^2 p^2)``,
    ``c_1 = delta - lambda``, ``c_2 = delta + lambda``:
    ``d(N_1 N_2)/dp = -N_1 N_2 v^2 p sum_a c_a / (2 R_a^2 (R_a + c_a))``.
    """
    pabs = np.asarray(pabs, dtype=float)
    q, cs, rs = _roots(params, pabs)
    s = sum(c / (2.0 * r * r * _r_plus_c(r, c, q)) for c, r in zip(cs, rs))
    return -n1n2(params, pabs) * params.v_f**2 * pabs * s


def rashba_curvature_scalar(params: ModelParams, pabs) -> np.ndarray:
    """``g(p) = -(2 hbar/p) d(N_1 N_2)/dp``, written without the 1/p cancellation."""
    q, cs, rs = _roots(params, pabs)
    s = sum(c / (r * r * _r_plus_c(r, c, q)) for c, r in zip(cs, rs))
    return params.hbar * n1n2(params, pabs) * params.v_f**2 * s


def fw_curvature_scalar(params: ModelParams, pabs) -> np.ndarray:
    """``-hbar v^2 delta / (2 E^3)``: spin-up entry of the FW curvature."""
    e = np.sqrt((params.v_f * np.asarray(pabs, dtype=float)) ** 2 + params.delta_so**2)
    return -params.hbar * params.v_f**2 * params.delta_so / (2.0 * e**3)


def _tau_blocks(block):
    """``1_tau (x) block`` for a batched 2x2 block."""
    out = np.zeros(block.shape[:-2] + (4, 4), dtype=complex)
    out[..., :2, :2] = block
    out[..., 2:, 2:] = block
    return out


_SZ = np.diag([1.0, -1.0])
_SX = np.array([[0.0, 1.0], [1.0, 0.0]])
_ONE = np.eye(2)


def analytic_connection(model, basis, params: ModelParams, p) -> Connection:
    """Closed-form positive-energy connection (4x4 per component)."""
    model, basis = check_combination(model, basis, params)
    p = _momentum(p)
    pabs = np.hypot(p[..., 0], p[..., 1])
    if np.any(pabs <= P_MIN):
        raise MomentumAtOrigin(f"closed-form connection needs |p| > {P_MIN:g}")
    # eps^{ij} p_j: x -> p_y, y -> -p_x
    eps_p = (p[..., 1], -p[..., 0])
    hb = params.hbar
    comps = []
    if basis is Basis.FW:
        e = np.sqrt((params.v_f * pabs) ** 2 + params.delta_so**2)
        pref = hb * params.v_f**2 / (2.0 * e * (e + params.delta_so))
        for ep in eps_p:
            comps.append(_tau_blocks((pref * ep)[..., None, None] * _SZ))
    else:
        nn = n1n2(params, pabs)[..., None, None]
        inner = -_ONE + 2.0 * nn * (_SX if basis is Basis.PHI else _SZ)
        for ep in eps_p:
            comps.append(_tau_blocks((hb * ep / pabs**2)[..., None, None] * inner))
    return Connection(comps[0], comps[1], 0.0)


def analytic_curvature(model, basis, params: ModelParams, p) -> np.ndarray:
    """Closed-form positive-energy curvature ``G^xy`` (4x4)."""
    model, basis = check_combination(model, basis, params)
    p = _momentum(p)
    pabs = np.hypot(p[..., 0], p[..., 1])
    if np.any(pabs <= P_MIN):
        raise MomentumAtOrigin(f"closed-form curvature needs |p| > {P_MIN:g}")
    if basis is Basis.FW:
        g = fw_curvature_scalar(params, pabs)
        return _tau_blocks(g[..., None, None] * _SZ)
    g = rashba_curvature_scalar(params, pabs)[..., None, None]
    return _tau_blocks(g * (_SX if basis is Basis.PHI else _SZ))


def analytic_berry_data(model, basis, params: ModelParams, p) -> BerryData:
    p = _momentum(p)
    return BerryData(
        momentum=p,
        connection=analytic_connection(model, basis, params, p),
        curvature=analytic_curvature(model, basis, params, p),
        basis=Basis(basis),
        valley=Valley.FULL,
    )
