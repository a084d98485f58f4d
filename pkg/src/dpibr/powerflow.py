"""Positive-sequence Newton-Raphson power flow (polar form)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PowerFlowDiverged

SLACK, PV, PQ = 0, 1, 2


@dataclass
class PowerFlowResult:
    V: np.ndarray          # complex bus voltages, pu magnitude
    S: np.ndarray          # complex net injections, pu
    iterations: int
    mismatch: float


def build_ybus(n, branches, shunts):
    """``branches``: iterable of (i, j, z_series, b_total); ``shunts``: (i, y)."""
    Y = np.zeros((n, n), dtype=complex)
    for i, j, z, b in branches:
        y = 1.0 / z
        Y[i, i] += y + 0.5j * b
        Y[j, j] += y + 0.5j * b
        Y[i, j] -= y
        Y[j, i] -= y
    for i, y in shunts:
        Y[i, i] += y
    return Y


def newton_raphson(Y, bus_type, P_spec, Q_spec, V_spec, tol=1e-12, max_iter=30):
    """Solve for bus voltages.

    ``bus_type`` uses :data:`SLACK`, :data:`PV`, :data:`PQ`.  ``V_spec``
    holds magnitudes for slack/PV buses (and the slack angle is zero).
    Raises :class:`PowerFlowDiverged` when the mismatch does not fall
    below ``tol`` within ``max_iter`` iterations.
    """
    bus_type = np.asarray(bus_type)
    n = len(bus_type)
    Vm = np.where(bus_type == PQ, 1.0, V_spec).astype(float)
    Va = np.zeros(n)
    pvpq = np.where(bus_type != SLACK)[0]
    pq = np.where(bus_type == PQ)[0]

    def mismatch(Vm, Va):
        V = Vm * np.exp(1j * Va)
        S = V * np.conj(Y @ V)
        F = np.concatenate([P_spec[pvpq] - S.real[pvpq], Q_spec[pq] - S.imag[pq]])
        return V, S, F

    V, S, F = mismatch(Vm, Va)
    mis = np.max(np.abs(F)) if F.size else 0.0
    it = 0
    for it in range(max_iter + 1):
        if not np.isfinite(mis):
            break
        if mis < tol:
            return PowerFlowResult(V=V, S=S, iterations=it, mismatch=mis)
        if it == max_iter:
            break
        # Jacobian from complex derivatives
        Ibus = Y @ V
        diagV = np.diag(V)
        dS_dVa = 1j * diagV @ np.conj(np.diag(Ibus) - Y @ diagV)
        dS_dVm = diagV @ np.conj(Y @ np.diag(np.exp(1j * Va))) + np.diag(np.exp(1j * Va)) @ np.conj(np.diag(Ibus))
        J = np.block([
            [dS_dVa.real[np.ix_(pvpq, pvpq)], dS_dVm.real[np.ix_(pvpq, pq)]],
            [dS_dVa.imag[np.ix_(pq, pvpq)], dS_dVm.imag[np.ix_(pq, pq)]],
        ])
        try:
            dx = np.linalg.solve(J, F)
        except np.linalg.LinAlgError:
            break
        # backtracking on the mismatch norm keeps flat starts from diverging
        norm0 = np.linalg.norm(F)
        alpha = 1.0
        for _ in range(12):
            Va_t = Va.copy()
            Vm_t = Vm.copy()
            Va_t[pvpq] += alpha * dx[:len(pvpq)]
            Vm_t[pq] += alpha * dx[len(pvpq):]
            if np.all(Vm_t > 0):
                V_t, S_t, F_t = mismatch(Vm_t, Va_t)
                if np.linalg.norm(F_t) < norm0:
                    break
            alpha *= 0.5
        else:
            break
        Va, Vm, V, S, F = Va_t, Vm_t, V_t, S_t, F_t
        mis = np.max(np.abs(F)) if F.size else 0.0
    raise PowerFlowDiverged(f"power flow did not converge (mismatch {mis:.3e} after {it} iterations)",
                            iterations=it, mismatch=mis)
