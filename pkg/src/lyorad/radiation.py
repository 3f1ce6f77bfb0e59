"""Diffuse-gray radiation engine.

Surface and space resistances, closed-form two-surface exchange, the
per-vial decoupled ("simplified") exchange, the data-trained resistance
form, and the full radiosity network solve

    J_i = eps_i * sigma * T_i^4 + (1 - eps_i) * sum_j F_ij * J_j
    Q_i = eps_i * A_i / (1 - eps_i) * (sigma * T_i^4 - J_i)

Positive Q means net radiant energy leaving the surface. Black surfaces
(eps = 1) get J = sigma*T^4 directly with Q from the exchange sums;
adiabatic surfaces satisfy J_i = sum_j F_ij J_j with Q_i = 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model_core import STEFAN_BOLTZMANN
from .view_factors import ViewFactorMatrix

SIGMA = STEFAN_BOLTZMANN


class SingularSystem(RuntimeError):
    """Radiosity system could not be solved (should not happen for gray eps)."""


@dataclass(frozen=True)
class SurfaceSet:
    """Inputs to one radiosity solve."""

    temperatures: np.ndarray  # K; entries under an adiabatic mask are ignored
    eps: np.ndarray
    areas: np.ndarray
    F: np.ndarray  # completed view-factor matrix
    adiabatic: np.ndarray | None = None  # bool mask, default none


@dataclass(frozen=True)
class RadiosityResult:
    J: np.ndarray  # radiosity, W/m^2
    Q: np.ndarray  # net radiant energy leaving each surface, W


def surface_resistance(eps, A):
    """(1 - eps) / (eps * A); zero for a black surface."""
    if eps <= 0.0 or eps > 1.0:
        raise ValueError("emissivity must be in (0, 1]")
    if A <= 0.0:
        raise ValueError("area must be positive")
    return (1.0 - eps) / (eps * A)


def pair_resistance(eps1, A1, F12, eps2, A2):
    """Total resistance of an isolated two-surface exchange."""
    if not 0.0 < F12 <= 1.0:
        raise ValueError("F12 must be in (0, 1]")
    return surface_resistance(eps1, A1) + 1.0 / (A1 * F12) + surface_resistance(eps2, A2)


def two_surface_qrad(T1, T2, eps1, A1, F12, eps2, A2):
    """Net exchange from surface 1 to surface 2 (positive leaves 1)."""
    return SIGMA * (T1**4 - T2**4) / pair_resistance(eps1, A1, F12, eps2, A2)


def simplified_qrad(T_i, chamber, eps_vial, A_vial, F_i_wall):
    """Per-vial net loss to the wall, ignoring vial-to-vial exchange."""
    return two_surface_qrad(
        T_i, chamber.T2, eps_vial, A_vial, F_i_wall, chamber.eps_wall, chamber.A2
    )


def hybrid_qrad(T_i, T2, R_rad):
    """Exchange with a fitted lumped resistance."""
    if R_rad <= 0:
        raise ValueError("R_rad must be positive")
    return SIGMA * (T_i**4 - T2**4) / R_rad


def radiosity_system(eps, F, adiabatic=None):
    """Assemble the linear system matrix for the radiosity balance."""
    k = len(eps)
    M = np.eye(k) - (1.0 - eps)[:, None] * F
    if adiabatic is not None and adiabatic.any():
        M[adiabatic] = np.eye(k)[adiabatic] - F[adiabatic]
    black = eps >= 1.0
    if black.any():
        M[black] = np.eye(k)[black]
    return M


def assert_diagonally_dominant(M, adiabatic=None):
    """The gray-surface rows must be strictly diagonally dominant."""
    excess = 2.0 * np.abs(np.diag(M)) - np.abs(M).sum(axis=1)
    strict = excess > 1e-12
    if adiabatic is not None:
        strict |= adiabatic & (excess > -1e-12)  # weak dominance is enough here
    if not strict.all():
        bad = int(np.flatnonzero(~strict)[0])
        raise SingularSystem(f"radiosity row {bad} is not diagonally dominant")


def solve_radiosity_network(surfaces: SurfaceSet) -> RadiosityResult:
    """Direct dense solve of the radiosity balance for all surfaces."""
    eps = np.asarray(surfaces.eps, dtype=float)
    T = np.asarray(surfaces.temperatures, dtype=float)
    A = np.asarray(surfaces.areas, dtype=float)
    F = surfaces.F.F if isinstance(surfaces.F, ViewFactorMatrix) else surfaces.F
    adia = surfaces.adiabatic
    if adia is None:
        adia = np.zeros(len(eps), dtype=bool)

    M = radiosity_system(eps, F, adia)
    assert_diagonally_dominant(M, adia)
    b = eps * SIGMA * T**4
    b[adia] = 0.0
    black = eps >= 1.0
    b[black] = SIGMA * T[black] ** 4
    try:
        J = np.linalg.solve(M, b)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - guarded above
        raise SingularSystem(str(exc)) from exc

    Q = np.empty_like(J)
    gray = ~adia & ~black
    Q[gray] = eps[gray] * A[gray] / (1.0 - eps[gray]) * (SIGMA * T[gray] ** 4 - J[gray])
    if black.any():
        ex = A[:, None] * F * (J[:, None] - J[None, :])
        Q[black] = ex[black].sum(axis=1)
    Q[adia] = 0.0
    return RadiosityResult(J=J, Q=Q)


class NetworkOperator:
    """Reusable radiosity solver for a fixed roster (factorized once).

    Temperatures change every time step of a coupled run while emissivities,
    areas and view factors stay fixed, so the system matrix is inverted a
    single time and each solve reduces to matrix-vector (or matrix-matrix,
    for per-node slices) products.
    """

    def __init__(self, eps, areas, F, adiabatic=None, fixed_T=None):
        self.eps = np.asarray(eps, dtype=float)
        self.areas = np.asarray(areas, dtype=float)
        self.F = np.asarray(F, dtype=float)
        k = len(self.eps)
        self.adiabatic = (
            np.zeros(k, dtype=bool) if adiabatic is None else np.asarray(adiabatic)
        )
        if np.any((self.eps <= 0) | (self.eps >= 1)):
            raise ValueError("network surfaces need emissivities in (0, 1)")
        M = radiosity_system(self.eps, self.F, self.adiabatic)
        assert_diagonally_dominant(M, self.adiabatic)
        self.Minv = np.linalg.inv(M)
        self.qcoef = self.eps * self.areas / (1.0 - self.eps)
        self.emis = self.eps * SIGMA
        self.emis[self.adiabatic] = 0.0

    def net_flows(self, T):
        """Q per surface for temperatures T of shape (k,) or (k, m)."""
        T = np.asarray(T, dtype=float)
        T4 = T**4
        b = self.emis[..., None] * T4 if T.ndim == 2 else self.emis * T4
        J = self.Minv @ b
        if T.ndim == 2:
            Q = self.qcoef[:, None] * (SIGMA * T4 - J)
            Q[self.adiabatic] = 0.0
        else:
            Q = self.qcoef * (SIGMA * T4 - J)
            Q[self.adiabatic] = 0.0
        return Q
