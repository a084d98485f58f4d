"""Grid-following inverter in its own PLL-oriented dq frame.

Controller and filter states are carried at harmonics k = 0 and k = +-2
(positive and negative sequence seen from the rotating frame).  The k=0
coefficients are real and stored as real states; k=2 coefficients are
complex and k=-2 follows by conjugation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import LowVoltage
from ..phasor import dq_to_network, network_to_dq, rotation_dps

K0_NAMES = ("x_pll", "delta_pll", "v_dm", "v_qm", "x_id", "x_iq", "i_td", "i_tq", "x_f", "x_v")
K2_NAMES = ("x_pll", "delta_pll", "v_dm", "v_qm", "x_id", "x_iq", "i_td", "i_tq")
KS = np.array([0, 2])

V_GUARD = 0.2


def pll_gains_from_bandwidth(bw_hz: float, zeta: float = 0.707, v_nom: float = 1.0):
    """PI gains placing the linearised PLL at ``omega_n = 2 pi bw_hz``.

    Around lock ``v_q ~ -v_nom * (delta - delta_eq)``, giving the loop
    ``s^2 + kp v s + ki v``.
    """
    wn = 2 * np.pi * bw_hz
    return 2 * zeta * wn / v_nom, wn**2 / v_nom


@dataclass
class GFLParams:
    kp_pll: float
    ki_pll: float
    tau_m: float
    tau_f: float
    kp_v: float
    ki_v: float
    kp_i: float
    ki_i: float
    R: float
    L: float
    R_t: float
    L_t: float
    I_max: float
    P_ref: float = 0.0       # P_c*, as it enters the 2/3-scaled reference
    V_ref: float = 1.0       # |v_dq|*
    omega_s: float = 2 * np.pi * 60.0
    omega_b: float = 2 * np.pi * 60.0

    def __post_init__(self):
        if self.tau_m <= 0 or self.tau_f <= 0:
            raise ValueError("GFL time constants must be positive")
        if self.L + self.L_t <= 0:
            raise ValueError("GFL filter inductance L + L_t must be positive")
        if self.I_max <= 0:
            raise ValueError("I_max must be positive")

    @property
    def L_tot(self):
        return self.L + self.L_t

    @property
    def R_tot(self):
        return self.R + self.R_t


def pll_derivatives(x_pll, delta, v_q, params: GFLParams, ks=KS):
    """Rates of the PLL integrator and angle at each harmonic in ``ks``."""
    rot = 1j * np.asarray(ks) * params.omega_s
    dx = params.ki_pll * v_q - rot * x_pll
    dd = params.kp_pll * v_q + x_pll - rot * delta
    return dx, dd


def measured_magnitude(v_dm0, v_qm0):
    return np.hypot(v_dm0, v_qm0)


def outer_loop_eval(v_dm, v_qm, v_d, v_q, x_f, x_v, params: GFLParams,
                    u_d=0.0, u_q=0.0, p_ref=None, v_ref=None, ks=KS):
    """Measurement filters, voltage PI and k=0 current references.

    Returns ``(dv_dm, dv_qm, dx_f, dx_v, i_td_ref, i_tq_ref, q_ref)``.
    ``v_dm`` etc. are arrays over ``ks``; entry 0 must be the k=0 term.
    """
    p_ref = params.P_ref if p_ref is None else p_ref
    v_ref = params.V_ref if v_ref is None else v_ref
    rot = 1j * np.asarray(ks) * params.omega_s
    dv_dm = (v_d - v_dm) / params.tau_m - rot * v_dm
    dv_qm = (v_q - v_qm) / params.tau_m - rot * v_qm
    vd0 = np.real(v_dm[0])
    vmag = measured_magnitude(vd0, np.real(v_qm[0]))
    dx_f = (vmag - x_f) / params.tau_f
    dx_v = params.ki_v * (v_ref - x_f)
    q_ref = x_v + params.kp_v * (v_ref - x_f)
    if not vd0 > V_GUARD:
        raise LowVoltage(f"measured v_d,m = {vd0:.4f} pu below guard {V_GUARD}")
    i_td_ref = (2.0 / 3.0) * p_ref / vd0 + u_d
    i_tq_ref = -(2.0 / 3.0) * q_ref / vd0 + u_q
    return dv_dm, dv_qm, dx_f, dx_v, i_td_ref, i_tq_ref, q_ref


def apply_current_limit(i_td_ref: float, i_tq_ref: float, I_max: float):
    """Constant-angle limiter: scale both axes when the magnitude exceeds I_max."""
    mag = np.hypot(i_td_ref, i_tq_ref)
    if mag <= I_max:
        return i_td_ref, i_tq_ref
    scale = I_max / mag
    return i_td_ref * scale, i_tq_ref * scale


def inner_loop_and_filter_derivatives(x_id, x_iq, i_td, i_tq, i_td_ref, i_tq_ref,
                                      v_d, v_q, v_dm, v_qm, params: GFLParams, ks=KS):
    """Current PI loops, decoupling feed-forward and the series R-L plant.

    ``i_td_ref``/``i_tq_ref`` are arrays over ``ks`` (the k=2 entries are
    zero by control design).  Returns
    ``(dx_id, dx_iq, di_td, di_tq, v_td, v_tq)``.
    """
    p = params
    rot = 1j * np.asarray(ks) * p.omega_s
    X = p.L_tot  # reactance at nominal frequency, per unit
    e_d = i_td_ref - i_td
    e_q = i_tq_ref - i_tq
    dx_id = p.ki_i * e_d - rot * x_id
    dx_iq = p.ki_i * e_q - rot * x_iq
    v_td = p.kp_i * e_d + x_id + v_dm - X * i_tq
    v_tq = p.kp_i * e_q + x_iq + v_qm + X * i_td
    wl = p.omega_b / p.L_tot
    di_td = wl * (v_td - v_d - p.R_tot * i_td) + p.omega_b * i_tq - rot * i_td
    di_tq = wl * (v_tq - v_q - p.R_tot * i_tq) - p.omega_b * i_td - rot * i_tq
    return dx_id, dx_iq, di_td, di_tq, v_td, v_tq


class GFLInverter:
    """GFL IBR device: maps (states, POI voltage DPs, inputs) to rates and
    the positive/negative sequence current injected into the network."""

    n0 = len(K0_NAMES)
    n2 = len(K2_NAMES)
    n_states = n0 + 2 * n2
    inputs = ("u_d", "u_q", "p_ref", "v_ref")

    def __init__(self, name: str, bus, params: GFLParams):
        self.name = name
        self.bus = bus
        self.params = params

    def state_names(self):
        names = [f"{self.name}.{s}[0]" for s in K0_NAMES]
        for s in K2_NAMES:
            names += [f"{self.name}.{s}[2].re", f"{self.name}.{s}[2].im"]
        return names

    @staticmethod
    def unpack(x):
        x0 = x[:GFLInverter.n0]
        x2 = x[GFLInverter.n0::2] + 1j * x[GFLInverter.n0 + 1::2]
        return x0, x2

    @staticmethod
    def pack(d0, d2):
        out = np.empty(GFLInverter.n_states)
        out[:GFLInverter.n0] = np.real(d0)
        out[GFLInverter.n0::2] = np.real(d2)
        out[GFLInverter.n0 + 1::2] = np.imag(d2)
        return out

    def measured_vmag(self, x):
        """|v_dq| from the measured k=0 components (a function of state only)."""
        return measured_magnitude(x[2], x[3])

    def terminal_dq(self, x0, x2, vp1, vn1):
        pos, neg = rotation_dps(x0[1], x2[1])
        (vd0, vq0), (vd2, vq2) = network_to_dq(vp1, vn1, pos, neg)
        return pos, neg, np.array([vd0, vd2]), np.array([vq0, vq2])

    def evaluate(self, x, vp1, vn1, u=None):
        """Return ``(dx, i_p1, i_n1, aux)`` for the flat device state ``x``."""
        p = self.params
        u = u or {}
        x0, x2 = self.unpack(x)
        h = lambda i: np.array([x0[i], x2[i]])  # noqa: E731  harmonic pair (k=0, k=2)
        x_pll, delta, v_dm, v_qm, x_id, x_iq, i_td, i_tq = (h(i) for i in range(8))
        x_f, x_v = x0[8], x0[9]

        pos, neg, v_d, v_q = self.terminal_dq(x0, x2, vp1, vn1)
        dx_pll, ddelta = pll_derivatives(x_pll, delta, v_q, p)
        dv_dm, dv_qm, dx_f, dx_v, itd_ref, itq_ref, q_ref = outer_loop_eval(
            v_dm, v_qm, v_d, v_q, x_f, x_v, p,
            u_d=u.get("u_d", 0.0), u_q=u.get("u_q", 0.0),
            p_ref=u.get("p_ref"), v_ref=u.get("v_ref"))
        itd_lim, itq_lim = apply_current_limit(itd_ref, itq_ref, p.I_max)
        refs_d = np.array([itd_lim, 0.0])
        refs_q = np.array([itq_lim, 0.0])
        dx_id, dx_iq, di_td, di_tq, v_td, v_tq = inner_loop_and_filter_derivatives(
            x_id, x_iq, i_td, i_tq, refs_d, refs_q, v_d, v_q, v_dm, v_qm, p)

        d0 = np.array([dx_pll[0], ddelta[0], dv_dm[0], dv_qm[0], dx_id[0], dx_iq[0],
                       di_td[0], di_tq[0], dx_f, dx_v])
        d2 = np.array([dx_pll[1], ddelta[1], dv_dm[1], dv_qm[1], dx_id[1], dx_iq[1],
                       di_td[1], di_tq[1]])
        ip1, in1 = dq_to_network(i_td[0].real, i_tq[0].real, i_td[1], i_tq[1], pos, neg)
        aux = {
            "vmag": measured_magnitude(np.real(v_dm[0]), np.real(v_qm[0])),
            "q_ref": q_ref,
            "i_ref": np.hypot(itd_ref, itq_ref),
            "i_mag": np.hypot(np.real(i_td[0]), np.real(i_tq[0])),
            "v_d": v_d, "v_q": v_q,
            "limited": bool(np.hypot(itd_ref, itq_ref) > p.I_max),
        }
        return self.pack(d0, d2), ip1, in1, aux

    def equilibrium(self, vp1: complex, ip1: complex):
        """Balanced steady state reproducing the power-flow injection.

        Sets ``P_ref`` and ``V_ref`` on the params so that the references
        are self-consistent, and returns the flat state vector.
        """
        p = self.params
        delta = np.angle(vp1) + np.pi / 2
        pos, neg = rotation_dps(delta)
        (vd, vq), _ = network_to_dq(vp1, 0j, pos, neg)
        (idq, iqq), _ = network_to_dq(ip1, 0j, pos, neg)
        if vd <= V_GUARD:
            from ..errors import DeviceInitInfeasible
            raise DeviceInitInfeasible(f"{self.name}: terminal voltage too low for initialisation")
        if np.hypot(idq, iqq) > p.I_max:
            from ..errors import DeviceInitInfeasible
            raise DeviceInitInfeasible(
                f"{self.name}: equilibrium current {np.hypot(idq, iqq):.3f} exceeds I_max {p.I_max}")
        P = vd * idq + vq * iqq
        Q = vq * idq - vd * iqq
        p.P_ref = 1.5 * P
        p.V_ref = float(np.hypot(vd, vq))
        q_ref = 1.5 * Q
        x0 = np.array([0.0, delta, vd, vq, p.R_tot * idq, p.R_tot * iqq, idq, iqq,
                       p.V_ref, q_ref])
        return self.pack(x0, np.zeros(self.n2, dtype=complex))
