"""Continuum Kane-Mele Hamiltonians, closed-form spectra and eigenstates.

Index convention (used everywhere in the package): inside a valley block the
basis is ``sublattice (sigma) x spin (s)``, i.e. ``(A up, A down, B up, B down)``;
the valley index ``tau`` is the outermost factor of the 8x8 Hamiltonian,
``(K block, K' block)``.  Pauli matrices use ``sigma_z = s_z = tau_z = diag(1, -1)``.

All array-valued functions broadcast over leading momentum dimensions: a
momentum argument of shape ``(..., 2)`` yields results of shape ``(..., n, n)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InvalidParameter,
    MomentumAtOrigin,
    RequiresZeroRashba,
    UnsupportedDimension,
)

P_MIN = 1e-8

SIGMA_0 = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)


class Valley(str, enum.Enum):
    K = "K"
    KP = "K'"
    FULL = "full"


class Basis(str, enum.Enum):
    PHI = "Phi"
    PSI = "Psi"
    FW = "FW"


class Model(str, enum.Enum):
    KM_SO = "km-so"
    KM_RASHBA = "km-rashba"


@dataclass(frozen=True)
class ModelParams:
    """Couplings and external fields of a Dirac-like system (natural units)."""

    v_f: float = 1.0
    delta_so: float = 0.5
    lambda_r: float = 0.0
    hbar: float = 1.0
    charge: float = 1.0
    e_field: tuple[float, float] = (0.0, 0.0)
    b_field: float = 0.0
    fermi_energy: float | None = None

    def __post_init__(self):
        for name in ("v_f", "hbar", "charge"):
            if not getattr(self, name) > 0:
                raise InvalidParameter(f"{name} must be > 0, got {getattr(self, name)!r}")
        for name in ("delta_so", "lambda_r"):
            if not getattr(self, name) >= 0:
                raise InvalidParameter(f"{name} must be >= 0, got {getattr(self, name)!r}")
        ef = tuple(float(x) for x in self.e_field)
        if len(ef) != 2:
            raise InvalidParameter("e_field must be a 2-vector")
        object.__setattr__(self, "e_field", ef)

    @property
    def spin_hall_regime(self) -> bool:
        """True iff ``delta_so > 2 lambda_r`` (both positive bands above both negative ones)."""
        return self.delta_so > 2.0 * self.lambda_r

    @property
    def weak_regime(self) -> bool:
        """The looser condition ``delta_so > lambda_r``."""
        return self.delta_so > self.lambda_r

    def regime(self) -> dict:
        return {
            "delta_so_gt_2_lambda_r": self.spin_hall_regime,
            "delta_so_gt_lambda_r": self.weak_regime,
        }

    def replace(self, **changes) -> "ModelParams":
        data = {k: getattr(self, k) for k in self.__dataclass_fields__}
        data.update(changes)
        return ModelParams(**data)


@dataclass
class HamiltonianMatrix:
    dim: int
    entries: np.ndarray
    valley: Valley


@dataclass
class SpectrumResult:
    """Band energies ``(E1, E2, E3, E4)``; E1, E2 positive and E3, E4 negative in the spin Hall regime."""

    energies: np.ndarray
    gap: np.ndarray


@dataclass
class SpinorSet:
    """Spinors at one momentum, stored as the columns of ``spinors``."""

    basis: Basis
    valley: Valley
    momentum: np.ndarray
    labels: tuple[str, ...]
    energies: np.ndarray
    spinors: np.ndarray
    spins: tuple[str | None, ...] = ()
    polarization: np.ndarray | None = field(default=None)

    def __len__(self):
        return self.spinors.shape[-1]

    def __getitem__(self, label: str) -> np.ndarray:
        return self.spinors[:, self.labels.index(label)]

    def gram(self) -> np.ndarray:
        return self.spinors.conj().T @ self.spinors


def _momentum(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != 2:
        raise InvalidParameter(f"momentum must have trailing dimension 2, got shape {p.shape}")
    return p


def _as_valley(valley) -> Valley:
    return valley if isinstance(valley, Valley) else Valley(valley)


def _kron(*ms):
    out = ms[0]
    for m in ms[1:]:
        out = np.kron(out, m)
    return out


def valley_hamiltonian(params: ModelParams, p, tau: int) -> np.ndarray:
    """4x4 block of the Kane-Mele Hamiltonian for ``tau_z = tau`` (+1: K, -1: K')."""
    p = _momentum(p)
    px = p[..., 0, None, None]
    py = p[..., 1, None, None]
    h = (
        params.v_f * tau * px * _kron(SIGMA_X, SIGMA_0)
        + params.v_f * py * _kron(SIGMA_Y, SIGMA_0)
        + params.delta_so * tau * _kron(SIGMA_Z, SIGMA_Z)
        + params.lambda_r * (tau * _kron(SIGMA_X, SIGMA_Y) - _kron(SIGMA_Y, SIGMA_X))
    )
    return h


def hamiltonian_array(params: ModelParams, p, valley=Valley.FULL) -> np.ndarray:
    valley = _as_valley(valley)
    if valley is Valley.K:
        return valley_hamiltonian(params, p, +1)
    if valley is Valley.KP:
        return valley_hamiltonian(params, p, -1)
    hk = valley_hamiltonian(params, p, +1)
    hkp = valley_hamiltonian(params, p, -1)
    out = np.zeros(hk.shape[:-2] + (8, 8), dtype=complex)
    out[..., :4, :4] = hk
    out[..., 4:, 4:] = hkp
    return out


def build_hamiltonian(params: ModelParams, p, valley=Valley.K) -> HamiltonianMatrix:
    """Kane-Mele Hamiltonian at momentum ``p`` for one valley or both (``"full"``, 8x8)."""
    valley = _as_valley(valley)
    h = hamiltonian_array(params, p, valley)
    return HamiltonianMatrix(dim=h.shape[-1], entries=h, valley=valley)


def _roots(params: ModelParams, pabs):
    """Helper quantities ``q = v^2 p^2``, ``c_a`` and ``R_a = sqrt(c_a^2 + q)`` for a = 1, 2."""
    q = (params.v_f * np.asarray(pabs, dtype=float)) ** 2
    c1 = params.delta_so - params.lambda_r
    c2 = params.delta_so + params.lambda_r
    r1 = np.sqrt(c1 * c1 + q)
    r2 = np.sqrt(c2 * c2 + q)
    return q, (c1, c2), (r1, r2)


def _r_plus_c(r, c, q):
    # R + c without cancellation when c < 0
    return np.where(c >= 0, r + c, q / np.where(r - c > 0, r - c, 1.0))


def _r_minus_c(r, c, q):
    return np.where(c <= 0, r - c, q / np.where(r + c > 0, r + c, 1.0))


def band_energies(params: ModelParams, pabs) -> np.ndarray:
    _, _, (r1, r2) = _roots(params, pabs)
    lam = params.lambda_r
    return np.stack([lam + r1, -lam + r2, lam - r1, -lam - r2], axis=-1)


def analytic_spectrum(params: ModelParams, p) -> SpectrumResult:
    """Closed-form energies of one valley block; both valleys share them."""
    p = _momentum(p)
    e = band_energies(params, np.hypot(p[..., 0], p[..., 1]))
    gap = np.minimum(e[..., 0], e[..., 1]) - np.maximum(e[..., 2], e[..., 3])
    return SpectrumResult(energies=e, gap=gap)


def normalizations(params: ModelParams, pabs) -> np.ndarray:
    """``N_a = v p / sqrt(2 (v^2 p^2 + (E_a - delta)^2))`` for a = 1..4, evaluated stably."""
    q, (c1, c2), (r1, r2) = _roots(params, pabs)
    n1 = 0.5 * np.sqrt(_r_plus_c(r1, c1, q) / r1)
    n2 = 0.5 * np.sqrt(_r_plus_c(r2, c2, q) / r2)
    n3 = 0.5 * np.sqrt(_r_minus_c(r1, c1, q) / r1)
    n4 = 0.5 * np.sqrt(_r_minus_c(r2, c2, q) / r2)
    return np.stack([n1, n2, n3, n4], axis=-1)


def phi_spinors(params: ModelParams, p, valley=Valley.K) -> np.ndarray:
    """Energy eigenstates Phi_1..4 (K) or Phi_5..8 (K') as columns, shape ``(..., 4, 4)``.

    The K' states are the textbook closed forms verbatim.  For K, the closed
    forms are used with the sign pattern that actually solves ``H_K Phi = E Phi``:
    ``Phi_a = N_a (-i s w, r_a, -i s r_a, 1)`` with ``s = +1`` for a = 1, 3 and
    ``s = -1`` for a = 2, 4, where ``w = (p_x - i p_y)/(p_x + i p_y)`` and
    ``r_a = (E_a - delta)/(v (p_x + i p_y))``.  Products ``N_a r_a`` are
    rewritten so that nothing but the phase ``w`` is singular at p = 0.
    """
    valley = _as_valley(valley)
    p = _momentum(p)
    pabs = np.hypot(p[..., 0], p[..., 1])
    if np.any(pabs <= P_MIN):
        raise MomentumAtOrigin(f"closed-form eigenstates need |p| > {P_MIN:g}")
    q, cs, rs = _roots(params, pabs)
    v = params.v_f
    pc = p[..., 0] + 1j * p[..., 1]
    w = pc.conj() / pc
    e_phase = pc.conj() / pabs
    ns = normalizations(params, pabs)
    nr = []
    for c, r in zip(cs, rs):
        # positive band: N r = v conj(pc) / (2 sqrt(R (R + c)))
        nr.append(0.5 * v * pc.conj() / np.sqrt(r * _r_plus_c(r, c, q)))
    for c, r in zip(cs, rs):
        # negative band: N r = -(1/2) sqrt((R + c)/R) conj(pc)/|p|
        nr.append(-0.5 * np.sqrt(_r_plus_c(r, c, q) / r) * e_phase)
    signs = (1.0, -1.0, 1.0, -1.0)
    cols = []
    for a in range(4):
        n, s, nra = ns[..., a], signs[a], nr[a]
        if valley is Valley.K:
            col = [-1j * s * w * n, nra, -1j * s * nra, n + 0j]
        elif valley is Valley.KP:
            col = [-1j * s * nra, n + 0j, 1j * s * w * n, -nra]
        else:
            raise InvalidParameter("phi_spinors needs valley K or K'")
        cols.append(np.stack(col, axis=-1))
    return np.stack(cols, axis=-1)


def analytic_eigenstates(params: ModelParams, p, valley=Valley.K) -> SpinorSet:
    """Closed-form eigenstates of one valley at a single momentum (basis Phi)."""
    valley = _as_valley(valley)
    p = _momentum(p)
    u = phi_spinors(params, p, valley)
    offset = 0 if valley is Valley.K else 4
    labels = tuple(f"Phi{a + 1 + offset}" for a in range(4))
    energies = analytic_spectrum(params, p).energies
    return SpinorSet(Basis.PHI, valley, p, labels, energies, u)


def fw_transform(params: ModelParams, p) -> np.ndarray:
    """Foldy-Wouthuysen unitary ``U = (Gamma H + E)/sqrt(2E(E + delta))``, ``Gamma = sigma_z tau_z s_z``.

    ``U H U^dagger = E Gamma``; only defined for vanishing Rashba coupling.
    """
    if params.lambda_r != 0:
        raise RequiresZeroRashba("the Foldy-Wouthuysen closed form needs lambda_r = 0")
    p = _momentum(p)
    h = hamiltonian_array(params, p, Valley.FULL)
    e = np.sqrt((params.v_f * np.hypot(p[..., 0], p[..., 1])) ** 2 + params.delta_so**2)
    denom = 2.0 * e * (e + params.delta_so)
    if np.any(denom <= 0):
        raise MomentumAtOrigin("E + delta_so must be > 0 (gapless Dirac point at p = 0)")
    gamma = _kron(SIGMA_Z, SIGMA_Z, SIGMA_Z)
    num = gamma @ h + e[..., None, None] * np.eye(8)
    return num / np.sqrt(denom)[..., None, None]


# column order (pos up, pos down, neg up, neg down) inside each valley block
_FW_ORDER = {Valley.K: (0, 3, 2, 1), Valley.KP: (2, 1, 0, 3)}
FW_SPINS = ("up", "down", "up", "down")


def fw_spinors(params: ModelParams, p, valley=Valley.K) -> np.ndarray:
    """s_z-adapted FW eigenstates of one valley, columns (E up, E down, -E up, -E down)."""
    valley = _as_valley(valley)
    u = np.swapaxes(fw_transform(params, p).conj(), -1, -2)
    block = slice(0, 4) if valley is Valley.K else slice(4, 8)
    return u[..., block, block][..., list(_FW_ORDER[valley])]


def fw_eigenstates(params: ModelParams, p, valley=Valley.K) -> SpinorSet:
    valley = _as_valley(valley)
    p = _momentum(p)
    e = np.sqrt((params.v_f * np.hypot(*p)) ** 2 + params.delta_so**2)
    labels = ("+up", "+down", "-up", "-down")
    return SpinorSet(
        Basis.FW, valley, p, labels, np.array([e, e, -e, -e]), fw_spinors(params, p, valley),
        spins=FW_SPINS, polarization=np.array([1.0, -1.0, 1.0, -1.0]),
    )


def spin_operator(dim: int) -> np.ndarray:
    """``S_z`` in the package's index ordering: ``s_z``, ``1_sigma s_z`` or ``1_tau 1_sigma s_z``."""
    if dim == 2:
        return SIGMA_Z.copy()
    if dim == 4:
        return _kron(SIGMA_0, SIGMA_Z)
    if dim == 8:
        return _kron(SIGMA_0, SIGMA_0, SIGMA_Z)
    raise UnsupportedDimension(f"spin operator defined for dim in {{2, 4, 8}}, got {dim}")
