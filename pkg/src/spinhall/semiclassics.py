"""Matrix-valued symplectic data, Pfaffian measure, velocities and trajectories.

Conventions: Euclidean metric, ``eps^{xy} = eps_{xy} = +1``.  Antisymmetric
two-form components are stored by their ``xy`` entry only.  The external
magnetic field enters the position-space two-form as ``F_xy = -e B``, which
makes the matrix measure reduce to ``sqrt(w) = 1 + e B G^xy`` and the force
to ``e E_i + e B eps_ij dH/dp_j``.

For each momentum point the data are ``n x n`` matrices; every routine
broadcasts over leading batch dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .berry import (
    SectorLabel,
    analytic_connection,
    analytic_curvature,
    check_combination,
    sector_index,
)
from .basis import R_TILDE
from .errors import (
    BasisNotSpinDiagonal,
    DimensionMismatch,
    MeasureSingular,
    ToleranceNotMet,
)
from .model import Basis, ModelParams, _momentum, _roots, band_energies

MEASURE_DET_MIN = 1e-8


def _anti(a, b):
    return a @ b + b @ a


def _comm(a, b):
    return a @ b - b @ a


@dataclass
class SymplecticData:
    """Two-form components and drive terms at one momentum (or a batch).

    ``M[a, b]`` holds ``M^a_b``; ``e_drive[a]`` and ``f_drive[a]`` hold
    ``e_a`` and ``f^a``.
    """

    F_xy: np.ndarray
    M: np.ndarray
    G_xy: np.ndarray
    e_drive: np.ndarray
    f_drive: np.ndarray

    @property
    def dim(self) -> int:
        return self.G_xy.shape[-1]

    def F(self, i: int, j: int) -> np.ndarray:
        return _antisym(self.F_xy, i, j)

    def G(self, i: int, j: int) -> np.ndarray:
        return _antisym(self.G_xy, i, j)


def _antisym(xy, i, j):
    if i == j:
        return np.zeros_like(xy)
    return xy if (i, j) == (0, 1) else -xy


@dataclass
class KinematicSolution:
    measure: np.ndarray
    weighted_velocity: np.ndarray
    weighted_force: np.ndarray


@dataclass
class Trajectory:
    band: str
    t: np.ndarray
    x: np.ndarray
    p: np.ndarray
    integrator_stats: dict = field(default_factory=dict)

    @property
    def samples(self):
        return list(zip(self.t, self.x, self.p))


# ---------------------------------------------------------------- assembly


def _split_connection(conn):
    if hasattr(conn, "x"):
        return np.asarray(conn.x), np.asarray(conn.y)
    ax, ay = conn
    return np.asarray(ax), np.asarray(ay)


def form_components(h0, conn_x_space, conn_p_space, params: ModelParams, p, *, step: float = 1e-5) -> SymplecticData:
    """Assemble the symplectic data from a Hamiltonian and Berry connections.

    Parameters
    ----------
    h0 : callable
        ``p -> H_0(p)``, Hermitian ``n x n``.
    conn_x_space : pair of matrices or None
        Position-space connection ``(a_x, a_y)``, taken constant in ``x``.
        ``None`` means zero.
    conn_p_space : callable
        ``p -> (A^x, A^y)`` (a pair or a :class:`~spinhall.berry.Connection`),
        taken independent of ``x``.
    step : float
        Central-difference step for momentum derivatives.
    """
    p = _momentum(p)
    h = np.asarray(h0(p))
    n = h.shape[-1]
    ax, ay = _split_connection(conn_p_space(p))
    if h.shape[-2] != n or ax.shape[-2:] != (n, n) or ay.shape[-2:] != (n, n):
        raise DimensionMismatch(f"H0 {h.shape} and connection {ax.shape} disagree")
    if conn_x_space is None:
        a = (np.zeros((n, n), complex), np.zeros((n, n), complex))
    else:
        a = tuple(np.asarray(c) for c in conn_x_space)
        if any(c.shape[-2:] != (n, n) for c in a):
            raise DimensionMismatch("position-space connection has the wrong size")
    eye = np.broadcast_to(np.eye(n), h.shape)

    dh, da = [], []
    for i in range(2):
        d = np.zeros(2)
        d[i] = step
        dh.append((np.asarray(h0(p + d)) - np.asarray(h0(p - d))) / (2 * step))
        plus = _split_connection(conn_p_space(p + d))
        minus = _split_connection(conn_p_space(p - d))
        da.append([(plus[k] - minus[k]) / (2 * step) for k in range(2)])
    big_a = (ax, ay)
    g_xy = da[0][1] - da[1][0] - 1j * _comm(ax, ay)
    # constant a: only the commutator parts of F and M survive
    f_xy = -params.charge * params.b_field * eye - 1j * _comm(a[0], a[1])
    m = np.stack([np.stack([-1j * _comm(a[i], big_a[j]) for j in range(2)]) for i in range(2)])
    e_drive = np.stack([params.charge * params.e_field[i] * eye - 1j * _comm(h, a[i]) for i in range(2)])
    f_drive = np.stack([-dh[i] - 1j * _comm(h, big_a[i]) for i in range(2)])
    return SymplecticData(f_xy.astype(complex), m.astype(complex), g_xy, e_drive.astype(complex), f_drive)


def projected_hamiltonian(params: ModelParams, p, model, basis) -> np.ndarray:
    """Hamiltonian restricted to the positive-energy states, in the order of
    :func:`spinhall.berry.positive_spinors` (shape ``(..., 4, 4)``)."""
    model, basis = check_combination(model, basis, params)
    p = _momentum(p)
    e = band_energies(params, np.hypot(p[..., 0], p[..., 1]))
    return _positive_block(basis, e[..., 0], e[..., 1])


def projected_hamiltonian_gradient(params: ModelParams, p, model, basis) -> np.ndarray:
    """``dH_0/dp_i`` stacked along a new leading axis of length 2."""
    model, basis = check_combination(model, basis, params)
    p = _momentum(p)
    _, _, (r1, r2) = _roots(params, np.hypot(p[..., 0], p[..., 1]))
    v2 = params.v_f**2
    return np.stack([_positive_block(basis, v2 * p[..., i] / r1, v2 * p[..., i] / r2) for i in range(2)])


def _positive_block(basis, e1, e2):
    if basis is Basis.FW:
        # lambda_r = 0: both spins share E = R_1 = R_2
        d = np.stack([e1, e1, e1, e1], axis=-1)
        return d[..., None, :] * np.eye(4)
    pair = np.stack([e1, e2], axis=-1)[..., None, :] * np.eye(2)
    if basis is Basis.PSI:
        pair = R_TILDE @ pair @ R_TILDE
    out = np.zeros(pair.shape[:-2] + (4, 4))
    out[..., :2, :2] = pair
    out[..., 2:, 2:] = pair
    return out.astype(complex)


def analytic_symplectic_data(params: ModelParams, p, model, basis) -> SymplecticData:
    """Symplectic data of the positive-energy states from closed forms (no x-space connection)."""
    model, basis = check_combination(model, basis, params)
    p = _momentum(p)
    h = projected_hamiltonian(params, p, model, basis)
    dh = projected_hamiltonian_gradient(params, p, model, basis)
    conn = analytic_connection(model, basis, params, p)
    g = analytic_curvature(model, basis, params, p)
    eye = np.broadcast_to(np.eye(4, dtype=complex), h.shape)
    f_xy = -params.charge * params.b_field * eye
    m = np.zeros((2, 2) + h.shape, complex)
    e_drive = np.stack([params.charge * params.e_field[i] * eye for i in range(2)])
    f_drive = np.stack([-dh[i] - 1j * _comm(h, a) for i, a in enumerate((conn.x, conn.y))])
    return SymplecticData(np.array(f_xy), m, g, e_drive, f_drive)


def scalar_symplectic_data(params: ModelParams, g_xy: float, h_grad) -> SymplecticData:
    """1x1 symplectic data of a single Abelian band with curvature ``g_xy`` and velocity ``h_grad``."""
    one = np.ones((1, 1), complex)
    return SymplecticData(
        F_xy=-params.charge * params.b_field * one,
        M=np.zeros((2, 2, 1, 1), complex),
        G_xy=g_xy * one,
        e_drive=np.stack([params.charge * params.e_field[i] * one for i in range(2)]),
        f_drive=np.stack([-h_grad[i] * one for i in range(2)]),
    )


# ---------------------------------------------------------------- kinematics


def pfaffian_measure(data: SymplecticData) -> np.ndarray:
    """``1 + M^i_i - (1/4) sum_ij {F_ij, G^ij}``."""
    n = data.dim
    w = np.eye(n) + data.M[0, 0] + data.M[1, 1]
    for i in range(2):
        for j in range(2):
            w = w - 0.25 * _anti(data.F(i, j), data.G(i, j))
    return w


def weighted_velocities(data: SymplecticData) -> KinematicSolution:
    """Measure-weighted velocity ``xdot^i w`` and force ``w pdot_i`` (products, not quotients)."""
    m, e, f = data.M, data.e_drive, data.f_drive
    trace_m = m[0, 0] + m[1, 1]
    vel, force = [], []
    for i in range(2):
        v = -f[i] + _anti(trace_m, f[i])
        k = e[i] - _anti(trace_m, e[i])
        for j in range(2):
            v = v - _anti(m[i, j], f[j]) + 0.5 * _anti(data.G(i, j), e[j])
            k = k + _anti(m[j, i], e[j]) - 0.5 * _anti(data.F(j, i), f[j])
        vel.append(v)
        force.append(k)
    return KinematicSolution(pfaffian_measure(data), np.stack(vel), np.stack(force))


def anomalous_specialize(params: ModelParams, g_xy: float, h_grad):
    """Single-band equations of motion in a perpendicular magnetic field.

    Returns ``(sqrt_w, sqrt_w * xdot, sqrt_w * pdot)`` with
    ``sqrt_w = 1 + e B G``, ``sqrt_w xdot^i = dH/dp_i + e eps^ij E_j G`` and
    ``sqrt_w pdot_i = e E_i + e B eps_ij dH/dp_j``.
    """
    e, b = params.charge, params.b_field
    ex, ey = params.e_field
    hx, hy = float(h_grad[0]), float(h_grad[1])
    sqrt_w = 1.0 + e * b * g_xy
    xdot = np.array([hx + e * ey * g_xy, hy - e * ex * g_xy])
    pdot = np.array([e * ex + e * b * hy, e * ey - e * b * hx])
    return sqrt_w, xdot, pdot


def band_rates(params: ModelParams, p, model, basis, index: int):
    """``(xdot, pdot, dropped)`` of one band: the diagonal entries of
    ``(xdot w) w^-1`` and ``w^-1 (w pdot)``; ``dropped`` is the largest
    discarded inter-band entry in that band's row/column."""
    data = analytic_symplectic_data(params, p, model, basis)
    sol = weighted_velocities(data)
    w = sol.measure
    det = np.linalg.det(w)
    if np.any(np.abs(det) <= MEASURE_DET_MIN):
        raise MeasureSingular(f"|det w| = {np.min(np.abs(det)):.3e} along the path")
    w_inv = np.linalg.inv(w)
    xdot = [sol.weighted_velocity[i] @ w_inv for i in range(2)]
    pdot = [w_inv @ sol.weighted_force[i] for i in range(2)]
    mask = np.ones(w.shape[-1], bool)
    mask[index] = False
    dropped = max(
        float(np.max(np.abs(np.concatenate([m[..., index, mask], m[..., mask, index]], axis=-1)), initial=0.0))
        for m in xdot + pdot
    )
    xd = np.array([m[..., index, index].real for m in xdot])
    pd = np.array([m[..., index, index].real for m in pdot])
    return xd, pd, dropped


# ---------------------------------------------------------------- integration

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


def dopri5(fun: Callable, t_span, y0, tol: float, *, max_steps: int = 200_000, h0: float | None = None):
    """Adaptive Dormand-Prince 5(4) with per-step error control.

    A step is accepted when ``max |y5 - y4| / (tol (1 + |y|)) <= 1``; the
    fifth-order solution is propagated.  Returns ``(t, y, stats)``.
    """
    t0, t1 = map(float, t_span)
    if not t1 > t0:
        raise ValueError("t_span must be increasing")
    y = np.asarray(y0, dtype=float).copy()
    t = t0
    h = h0 if h0 is not None else min(t1 - t0, 0.01 * (t1 - t0) + tol ** 0.2)
    ts, ys = [t], [y.copy()]
    steps = rejected = 0
    max_err = 0.0
    k1 = np.asarray(fun(t, y), float)
    while t < t1:
        if steps + rejected >= max_steps:
            raise ToleranceNotMet(f"more than {max_steps} steps needed for tol {tol:g}")
        h = min(h, t1 - t)
        if h <= 1e-14 * max(1.0, abs(t)):
            raise ToleranceNotMet(f"step size underflow at t = {t:g}")
        k = [k1]
        for s in range(1, 7):
            ys_ = y + h * sum(a * kk for a, kk in zip(_A[s], k))
            k.append(np.asarray(fun(t + _C[s] * h, ys_), float))
        y5 = y + h * sum(b * kk for b, kk in zip(_B5, k))
        err_vec = h * sum((b5 - b4) * kk for b5, b4, kk in zip(_B5, _B4, k))
        scale = tol * (1.0 + np.maximum(np.abs(y), np.abs(y5)))
        ratio = float(np.max(np.abs(err_vec) / scale))
        if ratio <= 1.0:
            t = t + h
            y = y5
            k1 = k[6]  # first-same-as-last
            ts.append(t)
            ys.append(y.copy())
            steps += 1
            max_err = max(max_err, float(np.max(np.abs(err_vec))))
        else:
            rejected += 1
        factor = 0.9 * ratio ** -0.2 if ratio > 0 else 5.0
        h = h * min(5.0, max(0.2, factor))
    stats = {"steps": steps, "rejected": rejected, "max_local_error": max_err}
    return np.array(ts), np.array(ys), stats


def integrate_trajectory(
    params: ModelParams,
    model,
    basis,
    band,
    x0,
    p0,
    t_span,
    tol: float = 1e-8,
    *,
    max_steps: int = 200_000,
) -> Trajectory:
    """Integrate one positive-energy, definite-spin band.

    Inter-band entries of the matrix velocities are dropped (adiabatic
    approximation); their largest magnitude along the path is reported in
    ``integrator_stats["max_dropped_offdiagonal"]``.
    """
    model, basis = check_combination(model, basis, params)
    if basis is Basis.PHI:
        raise BasisNotSpinDiagonal("trajectories need definite-spin bands; use the Psi or FW basis")
    sector = band if isinstance(band, SectorLabel) else SectorLabel.parse(band)
    index = sector_index(basis, sector)
    dropped = [0.0]

    def rhs(_t, y):
        xd, pd, drop = band_rates(params, y[2:], model, basis, index)
        dropped[0] = max(dropped[0], drop)
        return np.concatenate([xd, pd])

    y0 = np.concatenate([np.asarray(x0, float), np.asarray(p0, float)])
    t, y, stats = dopri5(rhs, t_span, y0, tol, max_steps=max_steps)
    stats["max_dropped_offdiagonal"] = dropped[0]
    stats["tol"] = tol
    return Trajectory(sector.key, t, y[:, :2], y[:, 2:], stats)
