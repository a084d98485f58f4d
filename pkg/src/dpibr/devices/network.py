"""Transmission network, impedance loads, constant-power loads and faults.

All network quantities are k=1 sequence DPs laid out as ``3*node + seq``
with ``seq`` in (p, n, z).  The k=-1 coefficients follow from
``p_{-1} = conj(n_1)`` and are never stored.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import SingularTopology, VoltageCollapse, ConfigError
from ..phasor import T_PNZ, T_PNZ_INV

SEQ = ("p", "n", "z")


@dataclass
class Branch:
    name: str
    from_bus: int
    to_bus: int | None        # None: branch to ground
    R: np.ndarray             # per sequence (p, n, z)
    L: np.ndarray
    seq: np.ndarray = field(default_factory=lambda: np.ones(3, dtype=bool))
    G_par: np.ndarray = field(default_factory=lambda: np.zeros(3))  # parallel damping conductance

    def __post_init__(self):
        self.R = np.broadcast_to(np.asarray(self.R, float), (3,)).copy()
        self.L = np.broadcast_to(np.asarray(self.L, float), (3,)).copy()
        self.seq = np.broadcast_to(np.asarray(self.seq, bool), (3,)).copy()
        self.G_par = np.where(self.seq, np.broadcast_to(np.asarray(self.G_par, float), (3,)), 0.0)
        if np.any(self.G_par < 0):
            raise ConfigError("parallel damping conductance must be non-negative", f"branches.{self.name}")
        if np.any(self.L[self.seq] <= 0):
            raise ConfigError("branch inductance must be positive", f"branches.{self.name}")


@dataclass
class Load:
    """Parallel R-L(-C) impedance load; the capacitance is merged into the
    node shunt by :class:`Network`."""

    name: str
    bus: int
    R: np.ndarray              # inf for no resistive part
    L: np.ndarray              # inf for no inductive part
    C: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.R = np.broadcast_to(np.asarray(self.R, float), (3,)).copy()
        self.L = np.broadcast_to(np.asarray(self.L, float), (3,)).copy()
        self.C = np.broadcast_to(np.asarray(self.C, float), (3,)).copy()


@dataclass
class DCLoad:
    name: str
    bus: int
    P: float = 0.0
    v_min: float = 0.3


@dataclass
class FaultSpec:
    bus: int
    R_fa: float = 1e6
    R_fb: float = 1e6
    R_fc: float = 1e6
    R_g: float = 0.0
    t_apply: float = 0.0
    t_clear: float = np.inf

    def __post_init__(self):
        if min(self.R_fa, self.R_fb, self.R_fc) <= 0 or self.R_g < 0:
            raise ConfigError("fault resistances must be positive", "fault")
        if self.t_clear <= self.t_apply:
            raise ConfigError("t_clear must exceed t_apply", "fault")


def fault_matrix(spec: FaultSpec) -> np.ndarray:
    """Sequence-domain fault resistance ``T^-1 R_fabcg T``."""
    rg = spec.R_g
    r_abc = np.full((3, 3), rg, dtype=float) + np.diag([spec.R_fa, spec.R_fb, spec.R_fc])
    return T_PNZ_INV @ r_abc @ T_PNZ


def fault_current(R_fpnz: np.ndarray, v_pnz, active: bool) -> np.ndarray:
    """Fault current DP (p, n, z) drawn from the bus while ``active``."""
    if not active:
        return np.zeros(3, dtype=complex)
    return np.linalg.solve(R_fpnz, np.asarray(v_pnz, dtype=complex))


def dc_load_current(v_p1: complex, P_dc: float, v_min: float = 0.0) -> np.ndarray:
    """Unity-power-factor constant-power current ``P / (2 conj(v_p))``.

    ``v_min`` is a guard on the per-unit voltage ``sqrt(2) |v_p|``.
    """
    if np.sqrt(2) * abs(v_p1) < v_min:
        raise VoltageCollapse(f"DC load bus voltage {np.sqrt(2) * abs(v_p1):.3f} pu below {v_min}")
    if P_dc == 0:
        return np.zeros(3, dtype=complex)
    return np.array([P_dc / (2 * np.conj(v_p1)), 0j, 0j])


def load_eval(i_LL, v_N, load: Load, omega_b, omega_s):
    """Inductor-current rates and total current drawn by an R-L load."""
    v_N = np.asarray(v_N, dtype=complex)
    with np.errstate(divide="ignore"):
        g = np.where(np.isfinite(load.R), 1.0 / load.R, 0.0)
        b = np.where(np.isfinite(load.L), omega_b / load.L, 0.0)
    i_LR = g * v_N
    di_LL = b * v_N - 1j * omega_s * i_LL
    return di_LL, i_LL + i_LR


class Network:
    """Lumped pi-section network with incidence matrices CCI and CCU.

    Parameters
    ----------
    buses : sequence of bus ids
    branches : list of :class:`Branch`
    node_C : dict bus -> (3,) shunt capacitance (pi halves already summed)
    ports : list of (device name, bus) for transformer-coupled devices
    """

    def __init__(self, buses, branches, node_C, loads=(), dc_loads=(), ports=(),
                 omega_s=2 * np.pi * 60.0, omega_b=2 * np.pi * 60.0):
        self.buses = list(buses)
        self.index = {b: i for i, b in enumerate(self.buses)}
        self.branches = list(branches)
        self.loads = list(loads)
        self.dc_loads = list(dc_loads)
        self.ports = list(ports)
        self.omega_s = omega_s
        self.omega_b = omega_b
        n = len(self.buses)
        C = np.zeros((n, 3))
        for bus, c in node_C.items():
            C[self._idx(bus, "node_C")] += np.broadcast_to(c, (3,))
        for ld in self.loads:
            C[self._idx(ld.bus, f"loads.{ld.name}")] += ld.C
        if np.any(C <= 0):
            bad = [self.buses[i] for i in np.where(np.any(C <= 0, axis=1))[0]]
            raise SingularTopology(f"nodes without shunt capacitance: {bad}", "node_C")
        self.C = C.ravel()
        self._build_incidence()
        self.load_L_mask = np.array([np.isfinite(ld.L) for ld in self.loads]).reshape(-1)
        self.n_branch_states = int(self.branch_mask.sum())
        self.n_load_states = int(self.load_L_mask.sum())
        self.n_states = 2 * (self.n_branch_states + 3 * n + self.n_load_states)

    def _idx(self, bus, where):
        try:
            return self.index[bus]
        except KeyError:
            raise ConfigError(f"unknown bus {bus!r}", where) from None

    def _build_incidence(self):
        n, nl, nt = len(self.buses), len(self.branches), len(self.ports)
        CCI = np.zeros((3 * n, 3 * (nt + nl)))
        CCU = np.zeros((3 * nl, 3 * n))
        for j, (name, bus) in enumerate(self.ports):
            i = self._idx(bus, f"devices.{name}")
            for s in range(3):
                CCI[3 * i + s, 3 * j + s] = 1.0
        for j, br in enumerate(self.branches):
            f = self._idx(br.from_bus, f"branches.{br.name}")
            t = None if br.to_bus is None else self._idx(br.to_bus, f"branches.{br.name}")
            col = 3 * (nt + j)
            for s in range(3):
                CCI[3 * f + s, col + s] = -1.0
                CCU[3 * j + s, 3 * f + s] = 1.0
                if t is not None:
                    CCI[3 * t + s, col + s] = 1.0
                    CCU[3 * j + s, 3 * t + s] = -1.0
        self.CCI = CCI
        self.CCU = CCU
        self.branch_mask = np.concatenate([br.seq for br in self.branches]) if nl else np.zeros(0, bool)
        self.R_l = np.concatenate([br.R for br in self.branches]) if nl else np.zeros(0)
        self.L_l = (np.concatenate([np.where(br.seq, br.L, 1.0) for br in self.branches])
                    if nl else np.ones(0))
        self.G_par = np.concatenate([br.G_par for br in self.branches]) if nl else np.zeros(0)
        self.CCI_br = CCI[:, 3 * nt:]
        self.has_parallel = bool(np.any(self.G_par > 0))

    def parallel_currents(self, v_N):
        """Currents through the branches' parallel damping conductances."""
        return self.G_par * (self.CCU @ v_N)

    # -- state handling ----------------------------------------------------
    def state_names(self):
        names = []
        for br, s in self._branch_slots():
            names += [f"i_l[{br.name}].{SEQ[s]}.re", f"i_l[{br.name}].{SEQ[s]}.im"]
        for b in self.buses:
            for s in SEQ:
                names += [f"v_N[{b}].{s}.re", f"v_N[{b}].{s}.im"]
        for ld in self.loads:
            for s in range(3):
                if np.isfinite(ld.L[s]):
                    names += [f"i_LL[{ld.name}].{SEQ[s]}.re", f"i_LL[{ld.name}].{SEQ[s]}.im"]
        return names

    def _branch_slots(self):
        for br in self.branches:
            for s in range(3):
                if br.seq[s]:
                    yield br, s

    def unpack(self, x):
        z = x[0::2] + 1j * x[1::2]
        nb, n = self.n_branch_states, 3 * len(self.buses)
        i_l = np.zeros(self.branch_mask.size, dtype=complex)
        i_l[self.branch_mask] = z[:nb]
        v_N = z[nb:nb + n]
        i_LL = np.zeros(self.load_L_mask.size, dtype=complex)
        i_LL[self.load_L_mask] = z[nb + n:]
        return i_l, v_N, i_LL

    def pack(self, di_l, dv_N, di_LL):
        z = np.concatenate([di_l[self.branch_mask], dv_N, di_LL[self.load_L_mask]])
        out = np.empty(2 * z.size)
        out[0::2] = z.real
        out[1::2] = z.imag
        return out

    def node_voltage(self, v_N, bus):
        i = self.index[bus]
        return v_N[3 * i:3 * i + 3]

    # -- equations ---------------------------------------------------------
    def load_currents(self, v_N, i_LL):
        """Per-load (rates, total current) using :func:`load_eval`."""
        di = np.zeros_like(i_LL)
        i_tot = np.zeros(3 * len(self.buses), dtype=complex)
        for j, ld in enumerate(self.loads):
            b = self.index[ld.bus]
            d, tot = load_eval(i_LL[3 * j:3 * j + 3], v_N[3 * b:3 * b + 3], ld,
                               self.omega_b, self.omega_s)
            di[3 * j:3 * j + 3] = d
            i_tot[3 * b:3 * b + 3] += tot
        return di, i_tot

    def evaluate(self, x, i_t, shunt_draw=None):
        """Branch, node and load-inductor rates.

        ``i_t`` holds the (3 * ports) device injections, ``shunt_draw`` any
        additional current drawn at nodes (DC loads, faults).  Returns the
        packed rate vector and a dict with intermediate currents.
        """
        i_l, v_N, i_LL = self.unpack(x)
        di_l, dv_N, i_N, i_c = network_eval(
            i_l, v_N, i_t, self.CCI, self.CCU, self.R_l, self.L_l, self.C,
            self.omega_b, self.omega_s)
        di_LL, i_L = self.load_currents(v_N, i_LL)
        if self.has_parallel:
            # parallel branch conductances act as extra node draws
            i_L = i_L - self.CCI_br @ self.parallel_currents(v_N)
        draw = i_L if shunt_draw is None else i_L + shunt_draw
        i_c = i_N - draw
        dv_N = self.omega_b / self.C * i_c - 1j * self.omega_s * v_N
        di_l[~self.branch_mask] = 0
        return self.pack(di_l, dv_N, di_LL), {"i_l": i_l, "v_N": v_N, "i_N": i_N,
                                               "i_c": i_c, "i_L": i_L, "i_LL": i_LL}


def network_eval(i_l, v_N, i_t, CCI, CCU, R_l, L_l, C, omega_b, omega_s):
    """KCL/KVL of the pi-section network (no shunt loads).

    Returns ``(di_l, dv_N, i_N, i_c)`` where ``i_c = i_N`` is the current
    into the node capacitances before loads are subtracted.
    """
    i_N = CCI @ np.concatenate([i_t, i_l])
    v_l = CCU @ v_N
    di_l = omega_b / L_l * (v_l - R_l * i_l) - 1j * omega_s * i_l
    dv_N = omega_b / C * i_N - 1j * omega_s * v_N
    return di_l, dv_N, i_N, i_N
