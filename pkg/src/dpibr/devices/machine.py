"""Synchronous generator (stator in pnz, rotor in dq) with a DC1A exciter.

Stator flux linkages are carried as k=1 positive and negative sequence
DPs.  Rotor circuits (field, one d-axis damper, two q-axis dampers) are
carried at k=0 and k=+-2 in the rotor frame, whose angle ``delta_g`` is a
k=0 mechanical state.  The step-up transformer is folded into the stator
leakage so the machine injects directly at the HV bus; its delta winding
blocks zero sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..phasor import SQRT2

ROTOR = ("psi_fd", "psi_1d", "psi_1q", "psi_2q")


@dataclass
class SGParams:
    """Fundamental (equivalent-circuit) machine constants, per unit on the
    system base.  Use :meth:`from_standard` for datasheet parameters."""

    R_a: float
    L_l: float
    L_ad: float
    L_aq: float
    L_fd: float
    R_fd: float
    L_1d: float
    R_1d: float
    L_1q: float
    R_1q: float
    L_2q: float
    R_2q: float
    H: float
    D: float = 0.0
    omega_s: float = 2 * np.pi * 60.0
    omega_b: float = 2 * np.pi * 60.0

    @classmethod
    def from_standard(cls, *, Xd, Xq, Xl, Xd_p, Xq_p, Xd_pp, Xq_pp, Td0_p, Tq0_p,
                      Td0_pp, Tq0_pp, Ra, H, D=0.0, mva=100.0, base_mva=100.0,
                      R_t=0.0, X_t=0.0, f=60.0):
        """Convert standard reactances/time constants (machine base) to
        fundamental parameters on ``base_mva``.

        The transformer ``(R_t, X_t)`` is given on the machine base and is
        added in series with the stator.
        """
        wb = 2 * np.pi * f
        L_ad = Xd - Xl
        L_aq = Xq - Xl
        L_fd = L_ad * (Xd_p - Xl) / (L_ad - (Xd_p - Xl))
        R_fd = (L_ad + L_fd) / (wb * Td0_p)
        L_1d = (Xd_pp - Xl) * L_ad * L_fd / (L_ad * L_fd - (Xd_pp - Xl) * (L_ad + L_fd))
        R_1d = (L_1d + L_ad * L_fd / (L_ad + L_fd)) / (wb * Td0_pp)
        L_1q = L_aq * (Xq_p - Xl) / (L_aq - (Xq_p - Xl))
        R_1q = (L_aq + L_1q) / (wb * Tq0_p)
        L_2q = (Xq_pp - Xl) * L_aq * L_1q / (L_aq * L_1q - (Xq_pp - Xl) * (L_aq + L_1q))
        R_2q = (L_2q + L_aq * L_1q / (L_aq + L_1q)) / (wb * Tq0_pp)
        z = base_mva / mva
        return cls(
            R_a=(Ra + R_t) * z, L_l=(Xl + X_t) * z, L_ad=L_ad * z, L_aq=L_aq * z,
            L_fd=L_fd * z, R_fd=R_fd * z, L_1d=L_1d * z, R_1d=R_1d * z,
            L_1q=L_1q * z, R_1q=R_1q * z, L_2q=L_2q * z, R_2q=R_2q * z,
            H=H / z, D=D / z, omega_s=wb, omega_b=wb,
        )

    @property
    def L_ffd(self):
        return self.L_ad + self.L_fd

    @property
    def T_d0_open(self):
        """Open-circuit field time constant ``L_ffd / (omega_b R_fd)`` in seconds."""
        return self.L_ffd / (self.omega_b * self.R_fd)

    def inductance_d(self):
        La, Ll = self.L_ad, self.L_l
        return np.array([[-(La + Ll), La, La],
                         [-La, La + self.L_fd, La],
                         [-La, La, La + self.L_1d]])

    def inductance_q(self):
        La, Ll = self.L_aq, self.L_l
        return np.array([[-(La + Ll), La, La],
                         [-La, La + self.L_1q, La],
                         [-La, La, La + self.L_2q]])


@dataclass
class ExciterParams:
    T_F: float
    T_r: float
    T_A: float
    T_E: float
    K_A: float
    K_F: float
    K_E: float
    A_ex: float
    B_ex: float
    V_rmax: float = np.inf
    V_rmin: float = -np.inf

    def __post_init__(self):
        if min(self.T_F, self.T_r, self.T_A, self.T_E) <= 0:
            raise ValueError("exciter time constants must be positive")


def exciter_saturation(e_fd, params: ExciterParams):
    return params.A_ex * np.exp(params.B_ex * e_fd) * e_fd


def exciter_dc1a_derivatives(R_f, V_tr, V_r, e_fd, v_mag, v_ref, params: ExciterParams,
                             R_fd_over_L_adu=1.0):
    """Rates of ``(R_f, V_tr, V_r, e_fd)`` and the field voltage ``v_f``."""
    p = params
    V_r = np.clip(V_r, p.V_rmin, p.V_rmax)
    dR_f = (e_fd - R_f) / p.T_F
    dV_tr = (v_mag - V_tr) / p.T_r
    dV_r = (p.K_A * p.K_F / p.T_F * (R_f - e_fd) + p.K_A * (v_ref - V_tr) - V_r) / p.T_A
    de_fd = -(p.K_E * e_fd + exciter_saturation(e_fd, p) - V_r) / p.T_E
    v_f = R_fd_over_L_adu * e_fd
    return dR_f, dV_tr, dV_r, de_fd, v_f


class SynchronousMachine:
    """State layout (22 reals)::

        psi_p1 (re, im), psi_n1 (re, im)          stator, k=1
        psi_fd, psi_1d, psi_1q, psi_2q            rotor, k=0
        4 x (re, im)                              rotor, k=2
        delta_g, omega                            mechanical, k=0
        R_f, V_tr, V_r, e_fd                      exciter, k=0
    """

    n_states = 22
    inputs = ("v_ref", "t_mech")

    def __init__(self, name: str, bus, params: SGParams, exciter: ExciterParams):
        self.name = name
        self.bus = bus
        self.params = params
        self.exciter = exciter
        self._inv_d = np.linalg.inv(params.inductance_d())
        self._inv_q = np.linalg.inv(params.inductance_q())
        self.v_ref = 1.0
        self.t_mech = 0.0

    def state_names(self):
        n = self.name
        names = [f"{n}.psi_p[1].re", f"{n}.psi_p[1].im", f"{n}.psi_n[1].re", f"{n}.psi_n[1].im"]
        names += [f"{n}.{s}[0]" for s in ROTOR]
        for s in ROTOR:
            names += [f"{n}.{s}[2].re", f"{n}.{s}[2].im"]
        names += [f"{n}.delta_g", f"{n}.omega", f"{n}.R_f", f"{n}.V_tr", f"{n}.V_r", f"{n}.e_fd"]
        return names

    def currents(self, psi_d, psi_q, rotor):
        """Solve the flux-current relations for one harmonic."""
        id_, ifd, i1d = self._inv_d @ np.array([psi_d, rotor[0], rotor[1]])
        iq, i1q, i2q = self._inv_q @ np.array([psi_q, rotor[2], rotor[3]])
        return id_, iq, np.array([ifd, i1d, i1q, i2q])

    def evaluate(self, x, vp1, vn1, u=None):
        p = self.params
        u = u or {}
        wb, ws = p.omega_b, p.omega_s
        psi_p = x[0] + 1j * x[1]
        psi_n = x[2] + 1j * x[3]
        rot0 = x[4:8]
        rot2 = x[8:16:2] + 1j * x[9:16:2]
        delta, omega = x[16], x[17]
        R_f, V_tr, V_r, e_fd = x[18:22]

        e = np.exp(1j * delta)
        # stator flux in the rotor frame
        psi_d0 = -SQRT2 * np.imag(np.conj(e) * psi_p)
        psi_q0 = SQRT2 * np.real(np.conj(e) * psi_p)
        psi_d2 = e * psi_n / (SQRT2 * 1j)
        psi_q2 = e * psi_n / SQRT2

        id0, iq0, ir0 = self.currents(psi_d0, psi_q0, rot0)
        id2, iq2, ir2 = self.currents(psi_d2, psi_q2, rot2)
        ip1 = e * (iq0 - 1j * id0) / SQRT2
        in1 = np.conj(e) * (iq2 + 1j * id2) / SQRT2

        dpsi_p = wb * (vp1 + p.R_a * ip1) - 1j * ws * psi_p
        dpsi_n = wb * (vn1 + p.R_a * in1) - 1j * ws * psi_n

        v_mag = SQRT2 * abs(vp1)
        dR_f, dV_tr, dV_r, de_fd, v_f = exciter_dc1a_derivatives(
            R_f, V_tr, V_r, e_fd, v_mag, u.get("v_ref", self.v_ref), self.exciter,
            p.R_fd / p.L_ad)

        res = np.array([p.R_fd, p.R_1d, p.R_1q, p.R_2q])
        drot0 = -wb * res * ir0
        drot0[0] += wb * v_f
        drot2 = -wb * res * ir2 - 2j * ws * rot2

        t_e = (psi_d0 * iq0 - psi_q0 * id0
               + 2 * np.real(psi_d2 * np.conj(iq2) - psi_q2 * np.conj(id2)))
        t_m = u.get("t_mech", self.t_mech)
        domega = (t_m - t_e - p.D * (omega - 1.0)) / (2 * p.H)
        ddelta = wb * (omega - 1.0)

        dx = np.empty(self.n_states)
        dx[0], dx[1] = dpsi_p.real, dpsi_p.imag
        dx[2], dx[3] = dpsi_n.real, dpsi_n.imag
        dx[4:8] = drot0
        dx[8:16:2] = drot2.real
        dx[9:16:2] = drot2.imag
        dx[16], dx[17] = ddelta, domega
        dx[18:22] = dR_f, dV_tr, dV_r, de_fd
        aux = {"t_e": t_e, "omega": omega, "i_fd": ir0[0], "v_mag": v_mag, "e_fd": e_fd}
        return dx, ip1, in1, aux

    def equilibrium(self, vp1: complex, ip1: complex):
        """Balanced steady state for a terminal voltage/current pair.

        Sets ``v_ref`` and ``t_mech`` on the device and returns the state.
        """
        p = self.params
        ex = self.exciter
        psi_p = (vp1 + p.R_a * ip1) / 1j * (p.omega_b / p.omega_s)
        Lq = p.L_aq + p.L_l
        delta = np.angle(psi_p + Lq * ip1) + np.pi / 2
        e = np.exp(1j * delta)
        psi_d = -SQRT2 * np.imag(np.conj(e) * psi_p)
        psi_q = SQRT2 * np.real(np.conj(e) * psi_p)
        i_d = -SQRT2 * np.imag(np.conj(e) * ip1)
        i_q = SQRT2 * np.real(np.conj(e) * ip1)
        i_fd = (psi_d + (p.L_ad + p.L_l) * i_d) / p.L_ad
        if i_fd <= 0:
            from ..errors import DeviceInitInfeasible
            raise DeviceInitInfeasible(f"{self.name}: negative field current at equilibrium")
        rot0 = np.array([-p.L_ad * i_d + p.L_ffd * i_fd,
                         -p.L_ad * i_d + p.L_ad * i_fd,
                         -p.L_aq * i_q,
                         -p.L_aq * i_q])
        e_fd = p.L_ad * i_fd  # v_f = R_fd i_fd = (R_fd / L_ad) e_fd
        V_r = ex.K_E * e_fd + exciter_saturation(e_fd, ex)
        v_mag = SQRT2 * abs(vp1)
        self.v_ref = v_mag + V_r / ex.K_A
        self.t_mech = psi_d * i_q - psi_q * i_d
        x = np.zeros(self.n_states)
        x[0], x[1] = psi_p.real, psi_p.imag
        x[4:8] = rot0
        x[16], x[17] = delta, 1.0
        x[18:22] = e_fd, v_mag, V_r, e_fd
        return x
