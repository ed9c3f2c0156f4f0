"""Rotation from the energy eigenbasis Phi to the spin basis Psi.

``Psi_1,2 = (Phi_1 +- Phi_2)/sqrt(2)`` and ``Psi_3,4 = (Phi_3 +- Phi_4)/sqrt(2)``.
With Rashba coupling the energy eigenstates carry no definite spin, and no
state inside the positive-energy pair is an exact ``S_z`` eigenstate.  What the
rotation does achieve exactly is to diagonalize the spin operator projected on
each energy pair: in the Phi basis that projection is ``c(p) sigma_x`` with
real ``c``, so its eigenvectors are the +- combinations.  ``|c| = 1`` at
``lambda_r = 0`` and slightly less otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, NotSpinDiagonalizable, NotUnitary
from .model import Basis, ModelParams, SpinorSet, Valley, _roots, _r_plus_c, normalizations, spin_operator

R_TILDE = np.array([[1.0, 1.0], [1.0, -1.0]]) / np.sqrt(2.0)

SPIN_TOL = 1e-8


@dataclass(frozen=True)
class BasisRotation:
    matrix: np.ndarray = field(default_factory=lambda: np.kron(np.eye(2), R_TILDE))
    source: Basis = Basis.PHI
    target: Basis = Basis.PSI


def spin_eigenbasis(phi: SpinorSet) -> SpinorSet:
    """Build the Psi set from a Phi set (four orthonormal spinors of one valley).

    Raises :class:`NotSpinDiagonalizable` when the projected spin operator is
    not diagonal in the result, which means the input phases do not follow the
    closed-form convention.
    """
    if phi.basis is not Basis.PHI or len(phi) != 4:
        raise DimensionMismatch("spin_eigenbasis expects four Phi spinors")
    rot = BasisRotation().matrix
    psi = phi.spinors @ rot
    sz = spin_operator(4)
    pol = np.empty(4)
    for block in (slice(0, 2), slice(2, 4)):
        s_proj = psi[:, block].conj().T @ sz @ psi[:, block]
        off = abs(s_proj[0, 1])
        if off > SPIN_TOL:
            raise NotSpinDiagonalizable(
                f"projected S_z has off-diagonal element {off:.3e} in the Psi basis"
            )
        pol[block] = s_proj.diagonal().real
    h_diag = rot @ np.diag(phi.energies) @ rot
    offset = 0 if phi.valley is Valley.K else 4
    labels = tuple(f"Psi{a + 1 + offset}" for a in range(4))
    spins = tuple("up" if s > 0 else "down" for s in pol)
    return SpinorSet(
        Basis.PSI, phi.valley, phi.momentum, labels, h_diag.diagonal().real.copy(), psi,
        spins=spins, polarization=pol,
    )


def psi_polarization(params: ModelParams, pabs) -> np.ndarray:
    """``<Psi_1|S_z|Psi_1>`` in closed form (equal and opposite for Psi_2; same in K')."""
    q, cs, rs = _roots(params, pabs)
    n = normalizations(params, pabs)
    n1n2 = n[..., 0] * n[..., 1]
    prod = _r_plus_c(rs[0], cs[0], q) * _r_plus_c(rs[1], cs[1], q)
    return -2.0 * n1n2 * (1.0 + q / prod)


def transform_observable(u: np.ndarray, o: np.ndarray, *, atol: float = 1e-10) -> np.ndarray:
    """Return ``U O U^dagger``."""
    u = np.asarray(u)
    o = np.asarray(o)
    if u.shape[-1] != u.shape[-2] or o.shape[-2:] != u.shape[-2:]:
        raise DimensionMismatch(f"cannot conjugate {o.shape} by {u.shape}")
    eye = np.eye(u.shape[-1])
    dev = np.max(np.abs(u @ np.swapaxes(u.conj(), -1, -2) - eye))
    if dev > atol:
        raise NotUnitary(f"U U^dagger deviates from identity by {dev:.3e}")
    return u @ o @ np.swapaxes(u.conj(), -1, -2)
