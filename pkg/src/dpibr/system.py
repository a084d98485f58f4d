"""Assembly of devices and network into one real-valued ODE system.

The flat state vector is ``[network | device_1 | device_2 | ...]``.
Complex coefficients occupy adjacent (re, im) slots; k=0 coefficients of
real signals occupy a single real slot.  Inputs and outputs are named
channels such as ``"u_q:IBR1"``, ``"p_dc:DC7"`` or ``"tie_power"``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import SystemConfig
from .devices.gfl import GFLInverter, GFLParams, pll_gains_from_bandwidth
from .devices.machine import ExciterParams, SGParams, SynchronousMachine
from .devices.network import (Branch, DCLoad, FaultSpec, Load, Network, dc_load_current,
                              fault_current, fault_matrix)
from .errors import ConfigError, DeviceError
from .powerflow import PQ, PV, SLACK, build_ybus, newton_raphson
from .phasor import SQRT2


@dataclass
class ActiveFault:
    bus: int
    R_fpnz: np.ndarray

    @classmethod
    def from_spec(cls, spec: FaultSpec):
        return cls(bus=spec.bus, R_fpnz=fault_matrix(spec))


@dataclass
class SystemModel:
    config: SystemConfig
    network: Network
    devices: list
    slices: dict
    input_names: list
    output_names: list
    u0: np.ndarray = None
    x0: np.ndarray = None
    powerflow: object = None
    state_names: list = field(default_factory=list)

    @property
    def n_states(self):
        return self.network.n_states + sum(d.n_states for d in self.devices)

    def device(self, name):
        for d in self.devices:
            if d.name == name:
                return d
        raise KeyError(name)

    def input_index(self, name):
        try:
            return self.input_names.index(name)
        except ValueError:
            from .errors import MissingChannel
            raise MissingChannel(f"unknown input channel {name!r}") from None

    def output_index(self, name):
        try:
            return self.output_names.index(name)
        except ValueError:
            from .errors import MissingChannel
            raise MissingChannel(f"unknown output channel {name!r}") from None

    def manifest(self):
        counts = {"network": self.network.n_states}
        counts.update({d.name: d.n_states for d in self.devices})
        return {"n_states": self.n_states, "states_by_block": counts,
                "n_inputs": len(self.input_names), "n_outputs": len(self.output_names),
                "buses": list(self.network.buses), "config_hash": self.config.digest()}


def _transformer_z(tr) -> complex:
    """Series impedance seen by the power flow (r + jx in parallel with r_par)."""
    z = complex(tr["r"], tr["x"])
    r_par = float(tr.get("r_par", np.inf))
    return z if np.isinf(r_par) else 1.0 / (1.0 / z + 1.0 / r_par)


def _network_from_config(cfg: SystemConfig, ports):
    zs = {"r_factor": 3.0, "x_factor": 3.0, "b_factor": 0.6}
    zs.update(cfg.zero_sequence or {})
    branches = []
    node_C = {b: np.zeros(3) for b in cfg.buses}
    for ln in cfg.lines:
        r, x, b = float(ln["r"]), float(ln["x"]), float(ln.get("b", 0.0))
        R = np.array([r, r, r * zs["r_factor"]])
        L = np.array([x, x, x * zs["x_factor"]])
        branches.append(Branch(ln["name"], ln["from"], ln["to"], R, L))
        half = 0.5 * np.array([b, b, b * zs["b_factor"]])
        node_C[ln["from"]] = node_C[ln["from"]] + half
        node_C[ln["to"]] = node_C[ln["to"]] + half
    for tr in cfg.transformers:
        # YNd/Dyn units: the delta winding blocks zero sequence
        r_par = float(tr.get("r_par", np.inf))
        branches.append(Branch(tr["name"], tr["from"], tr["to"], float(tr["r"]), float(tr["x"]),
                               seq=[True, True, False], G_par=0.0 if np.isinf(r_par) else 1.0 / r_par))
    for sh in cfg.shunts:
        b = float(sh["b"])
        node_C[sh["bus"]] = node_C[sh["bus"]] + np.array([b, b, b])
    for g in cfg.grounding:
        r_par = float(g.get("r_par", np.inf))
        branches.append(Branch(g["name"], g["bus"], None, float(g["r"]), float(g["x"]),
                               seq=[False, False, True], G_par=0.0 if np.isinf(r_par) else 1.0 / r_par))
    loads = []
    for ld in cfg.loads:
        p, q, qc = float(ld["p"]), float(ld.get("q", 0.0)), float(ld.get("qc", 0.0))
        loads.append(Load(ld["name"], ld["bus"], R=1.0 / p if p > 0 else np.inf,
                          L=1.0 / q if q > 0 else np.inf, C=qc))
    dcs = [DCLoad(dc["name"], dc["bus"], float(dc.get("p", 0.0)), float(dc.get("v_min", 0.3)))
           for dc in cfg.dc_loads]
    return Network(cfg.buses, branches, node_C, loads, dcs, ports,
                   omega_s=cfg.omega_s, omega_b=cfg.omega_s)


def _gfl_params(ib, omega):
    if "kp_pll" in ib:
        kp, ki = float(ib["kp_pll"]), float(ib["ki_pll"])
    else:
        kp, ki = pll_gains_from_bandwidth(float(ib["pll_bw"]), float(ib.get("pll_zeta", 0.707)),
                                          float(ib.get("pll_v_nom", 1.0)))
    return GFLParams(kp_pll=kp, ki_pll=ki, tau_m=float(ib["tau_m"]), tau_f=float(ib["tau_f"]),
                     kp_v=float(ib["kp_v"]), ki_v=float(ib["ki_v"]), kp_i=float(ib["kp_i"]),
                     ki_i=float(ib["ki_i"]), R=float(ib["R"]), L=float(ib["L"]),
                     R_t=float(ib["R_t"]), L_t=float(ib["L_t"]), I_max=float(ib["I_max"]),
                     omega_s=omega, omega_b=omega)


def assemble(cfg: SystemConfig) -> SystemModel:
    """Build the system model (not yet initialised)."""
    omega = cfg.omega_s
    devices = []
    for g in cfg.generators:
        m = dict(g["machine"])
        m.pop("mva", None)
        try:
            sg = SGParams.from_standard(**m, mva=float(g.get("mva", cfg.base_mva)),
                                        base_mva=cfg.base_mva, f=cfg.frequency)
            ex = ExciterParams(**g["exciter"])
        except TypeError as exc:
            raise ConfigError(str(exc), f"generators.{g['name']}") from None
        devices.append(SynchronousMachine(g["name"], g["bus"], sg, ex))
    for ib in cfg.ibrs:
        try:
            params = _gfl_params(ib, omega)
        except ValueError as exc:
            raise ConfigError(str(exc), f"ibrs.{ib['name']}") from None
        devices.append(GFLInverter(ib["name"], ib["bus"], params))
    ports = [(d.name, d.bus) for d in devices]
    net = _network_from_config(cfg, ports)

    slices = {}
    pos = net.n_states
    names = list(net.state_names())
    for d in devices:
        slices[d.name] = slice(pos, pos + d.n_states)
        names += d.state_names()
        pos += d.n_states
    assert len(names) == pos, "state map must be a bijection"

    inputs = []
    for d in devices:
        inputs += [f"{ch}:{d.name}" for ch in d.inputs]
    inputs += [f"p_dc:{dc.name}" for dc in net.dc_loads]
    outputs = []
    if cfg.tie_line is not None:
        outputs.append("tie_power")
    for d in devices:
        outputs.append(f"p:{d.name}")
        if isinstance(d, GFLInverter):
            outputs += [f"vmag:{d.name}", f"imag:{d.name}"]
        else:
            outputs += [f"omega:{d.name}", f"vmag:{d.name}"]
    for b in net.buses:
        outputs.append(f"vmag:bus{b}")
    return SystemModel(config=cfg, network=net, devices=devices, slices=slices,
                       input_names=inputs, output_names=outputs, state_names=names)


def initialize(model: SystemModel, tol=1e-12):
    """Power flow, then device and network back-solve.  Fills ``x0``/``u0``."""
    cfg, net = model.config, model.network
    n = len(net.buses)
    idx = net.index
    pf_br = [(idx[ln["from"]], idx[ln["to"]], complex(ln["r"], ln["x"]), float(ln.get("b", 0.0)))
             for ln in cfg.lines]
    pf_br += [(idx[tr["from"]], idx[tr["to"]], _transformer_z(tr), 0.0) for tr in cfg.transformers]
    shunts = [(idx[sh["bus"]], 1j * float(sh["b"])) for sh in cfg.shunts]
    # Loads enter the flow as constant P + jQ (their capacitors as fixed
    # susceptance); R and L are then fitted to the solved bus voltages so
    # the dynamic model consumes exactly the specified power.
    P = np.zeros(n)
    Q = np.zeros(n)
    for ld_cfg, ld in zip(cfg.loads, net.loads):
        i = idx[ld.bus]
        P[i] -= float(ld_cfg["p"])
        Q[i] -= float(ld_cfg.get("q", 0.0))
        shunts.append((i, 1j * ld.C[0]))
    Y = build_ybus(n, pf_br, shunts)
    btype = np.full(n, PQ)
    V = np.ones(n)
    for g in cfg.generators:
        i = idx[g["bus"]]
        btype[i] = SLACK if g.get("slack") else PV
        P[i] += float(g.get("p", 0.0))
        V[i] = float(g["v"])
    for ib in cfg.ibrs:
        i = idx[ib["bus"]]
        btype[i] = PV
        P[i] += float(ib["p"])
        V[i] = float(ib["v"])
    for dc in net.dc_loads:
        P[idx[dc.bus]] -= dc.P
    if not np.any(btype == SLACK):
        btype[0] = SLACK
    pf = newton_raphson(Y, btype, P, Q, V, tol=tol)
    model.powerflow = pf
    for ld_cfg, ld in zip(cfg.loads, net.loads):
        v2 = abs(pf.V[idx[ld.bus]]) ** 2
        p, q = float(ld_cfg["p"]), float(ld_cfg.get("q", 0.0))
        ld.R = np.full(3, v2 / p if p > 0 else np.inf)
        ld.L = np.full(3, v2 / q if q > 0 else np.inf)

    vp = pf.V / SQRT2
    x = np.zeros(model.n_states)
    # network steady state
    v_N = np.zeros(3 * n, dtype=complex)
    v_N[0::3] = vp
    i_l = np.zeros(net.branch_mask.size, dtype=complex)
    v_l = net.CCU @ v_N
    ws_wb = net.omega_s / net.omega_b
    z_l = net.R_l + 1j * ws_wb * net.L_l
    i_l[net.branch_mask] = (v_l / z_l)[net.branch_mask]
    i_LL = np.zeros(net.load_L_mask.size, dtype=complex)
    for j, ld in enumerate(net.loads):
        for s in range(3):
            if np.isfinite(ld.L[s]):
                i_LL[3 * j + s] = v_N[3 * idx[ld.bus] + s] / (1j * ws_wb * ld.L[s])
    x[:net.n_states] = net.pack(i_l, v_N, i_LL)

    dc_at = {dc.bus: dc.P for dc in net.dc_loads}
    for d in model.devices:
        i = idx[d.bus]
        S_dev = pf.S[i] + dc_at.get(d.bus, 0.0)
        I = np.conj(S_dev / pf.V[i])
        x[model.slices[d.name]] = d.equilibrium(vp[i], I / SQRT2)
    model.x0 = x
    model.u0 = nominal_inputs(model)
    return x


def nominal_inputs(model: SystemModel) -> np.ndarray:
    u = np.zeros(len(model.input_names))
    for j, name in enumerate(model.input_names):
        ch, owner = name.split(":", 1)
        if ch == "p_dc":
            u[j] = next(dc.P for dc in model.network.dc_loads if dc.name == owner)
            continue
        d = model.device(owner)
        if ch == "p_ref":
            u[j] = d.params.P_ref
        elif ch == "v_ref":
            u[j] = d.params.V_ref if isinstance(d, GFLInverter) else d.v_ref
        elif ch == "t_mech":
            u[j] = d.t_mech
    return u


def _device_inputs(model, u):
    per = {d.name: {} for d in model.devices}
    dc = {}
    for name, val in zip(model.input_names, u):
        ch, owner = name.split(":", 1)
        if ch == "p_dc":
            dc[owner] = val
        else:
            per[owner][ch] = val
    return per, dc


def _evaluate(model: SystemModel, x, u=None, t=0.0, fault: ActiveFault | None = None):
    net = model.network
    u = model.u0 if u is None else u
    per, dc_p = _device_inputs(model, u)
    nn = net.n_states
    _, v_N, _ = net.unpack(x[:nn])
    i_t = np.zeros(3 * len(model.devices), dtype=complex)
    dx = np.empty_like(x)
    auxes = {}
    for j, d in enumerate(model.devices):
        b = 3 * net.index[d.bus]
        try:
            ddev, ip1, in1, aux = d.evaluate(x[model.slices[d.name]], v_N[b], v_N[b + 1],
                                             per[d.name])
        except DeviceError as exc:
            exc.device = d.name
            exc.time = t
            raise type(exc)(str(exc), device=d.name, time=t) from None
        dx[model.slices[d.name]] = ddev
        i_t[3 * j] = ip1
        i_t[3 * j + 1] = in1
        auxes[d.name] = aux
    draw = np.zeros(3 * len(net.buses), dtype=complex)
    for dc in net.dc_loads:
        b = 3 * net.index[dc.bus]
        P = dc_p.get(dc.name, dc.P)
        try:
            draw[b:b + 3] += dc_load_current(v_N[b], P, dc.v_min)
        except DeviceError as exc:
            raise type(exc)(str(exc), device=dc.name, time=t) from None
    i_fault = None
    if fault is not None:
        b = 3 * net.index[fault.bus]
        i_fault = fault_current(fault.R_fpnz, v_N[b:b + 3], True)
        draw[b:b + 3] += i_fault
    dnet, info = net.evaluate(x[:nn], i_t, draw)
    dx[:nn] = dnet
    info.update(i_t=i_t, aux=auxes, draw=draw, i_fault=i_fault)
    return dx, info


def evaluate_derivative(model: SystemModel, x, u=None, t=0.0, fault=None):
    """Flat state derivative; pure function of its arguments."""
    return _evaluate(model, np.asarray(x, dtype=float), u, t, fault)[0]


def evaluate_outputs(model: SystemModel, x, u=None, t=0.0, fault=None, info=None):
    if info is None:
        _, info = _evaluate(model, x, u, t, fault)
    net = model.network
    v_N, i_l, i_t = info["v_N"], info["i_l"], info["i_t"]
    y = np.empty(len(model.output_names))
    k = 0
    if model.config.tie_line is not None:
        y[k] = tie_power(model, v_N, i_l)
        k += 1
    for j, d in enumerate(model.devices):
        b = 3 * net.index[d.bus]
        y[k] = 2 * np.real(np.vdot(i_t[3 * j:3 * j + 3], v_N[b:b + 3]))
        aux = info["aux"][d.name]
        if isinstance(d, GFLInverter):
            y[k + 1] = aux["vmag"]
            y[k + 2] = aux["i_mag"]
        else:
            y[k + 1] = aux["omega"]
            y[k + 2] = aux["v_mag"]
        k += 3
    for i, _ in enumerate(net.buses):
        y[k] = SQRT2 * abs(v_N[3 * i])
        k += 1
    return y


def tie_power(model, v_N, i_l):
    """Average power leaving the tie ``from`` bus on every line to ``to``."""
    tie = model.config.tie_line
    net = model.network
    f, t = tie["from"], tie["to"]
    bf = 3 * net.index[f]
    total = 0.0
    for j, br in enumerate(net.branches):
        ends = (br.from_bus, br.to_bus)
        if set(ends) != {f, t}:
            continue
        sign = 1.0 if br.from_bus == f else -1.0
        total += sign * 2 * np.real(np.vdot(i_l[3 * j:3 * j + 3], v_N[bf:bf + 3]))
    return total


def power_balance(model: SystemModel, x, u=None):
    """Generation, loads, DC loads and losses (pu) at state ``x``."""
    _, info = _evaluate(model, x, u)
    net = model.network
    v_N, i_l, i_t = info["v_N"], info["i_l"], info["i_t"]
    gen = 0.0
    for j, d in enumerate(model.devices):
        b = 3 * net.index[d.bus]
        gen += 2 * np.real(np.vdot(i_t[3 * j:3 * j + 3], v_N[b:b + 3]))
    losses = 2 * np.sum(net.R_l * np.abs(i_l) ** 2)
    if net.has_parallel:
        losses += 2 * np.sum(net.G_par * np.abs(net.CCU @ v_N) ** 2)
    load = 0.0
    for ld in net.loads:
        b = 3 * net.index[ld.bus]
        g = np.where(np.isfinite(ld.R), 1.0 / ld.R, 0.0)
        load += 2 * np.sum(g * np.abs(v_N[b:b + 3]) ** 2)
    dc = 2 * np.real(np.vdot(info["draw"], v_N))
    return {"generation": gen, "load": load, "dc_and_fault": dc, "losses": losses}


def kcl_residual(model: SystemModel, x, dx, u=None, fault=None):
    """Node current balance recomputed from the node-voltage rates.

    ``C/omega_b (dv/dt + j omega_s v)`` must equal the net current
    ``CCI [i_t; i_l] - i_L - i_DC - i_fault`` at every node.
    """
    net = model.network
    _, info = _evaluate(model, x, u, fault=fault)
    nn = net.n_states
    _, dv, _ = net.unpack(dx[:nn])
    i_cap = net.C / net.omega_b * (dv + 1j * net.omega_s * info["v_N"])
    net_in = net.CCI @ np.concatenate([info["i_t"], info["i_l"]]) - info["i_L"] - info["draw"]
    return float(np.max(np.abs(i_cap - net_in)))
