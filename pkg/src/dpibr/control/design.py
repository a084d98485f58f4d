"""Settling-time verification, loop closure and the sequential (Steps 1–4)
decentralized design procedure."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from ..analysis.linear import LinearModel, append_washout
from ..analysis.modal import Mode, eigenanalysis, find_mode
from ..errors import AlgebraicLoop, DPError, MissingChannel, UnstableClosedLoop
from .controller import Controller
from .filters import FilterSpec, paper_weight, washout_filter
from .hinf import build_generalized_plant, hinf_synthesize
from .reduction import schur_balanced_truncation, split_stable

TS_CONSTANT = 4.0          # 2% band
MARGINAL_TOL = 1e-6
CONTROLLER_PREFIXES = ("K[", "washout[")
MIN_OSC_HZ = 0.1           # below this a complex pair counts as aperiodic
DEFAULT_RHO = 0.03
DEFAULT_SENSOR_NOISE = 0.01


def sso_mode(lm: LinearModel, f_range=(4.0, 8.0)):
    """Least-damped plant-dominated mode in ``f_range`` (controller-state
    dominated modes excluded)."""
    return find_mode(eigenanalysis(lm), f_range, names=lm.state_names, exclude=CONTROLLER_PREFIXES)


@dataclass
class SettlingReport:
    passed: bool
    bound: float
    worst_settling: float
    worst_mode: Mode | None
    n_checked: int

    def __str__(self):
        if self.worst_mode is None:
            return f"no oscillatory modes checked (bound {self.bound:g} s)"
        m = self.worst_mode
        verdict = "PASS" if self.passed else "FAIL"
        return (f"{verdict}: T_s = {self.worst_settling:.3f} s vs bound {self.bound:g} s "
                f"(mode {m.frequency:.4f} Hz, ζ = {100 * m.damping:.3f}%)")


def settling_time_check(A, bound: float, band=None, tol: float = MARGINAL_TOL) -> SettlingReport:
    """Pass iff every oscillatory mode (in ``band`` Hz; default
    ``[MIN_OSC_HZ, ∞)``) settles within ``bound`` seconds, using
    T_s = 4/(ζ|λ|) = −4/Re λ.

    Modes with ``|Re λ| ≤ tol`` are treated as decoupled marginal modes
    (reference angle, isolated zero-sequence nodes) and skipped; any mode
    with ``Re λ > tol`` raises :class:`UnstableClosedLoop`.
    """
    modes = eigenanalysis(A if isinstance(A, LinearModel) else np.asarray(A, dtype=float))
    bad = [m for m in modes if m.eigenvalue.real > tol]
    if bad:
        raise UnstableClosedLoop(f"closed loop unstable: λ = {bad[0].eigenvalue:.6g}")
    cand = [m for m in modes if m.eigenvalue.imag > 0 and m.eigenvalue.real < -tol]
    lo, hi = (MIN_OSC_HZ, np.inf) if band is None else band
    cand = [m for m in cand if lo <= m.frequency <= hi]
    if not cand:
        return SettlingReport(True, float(bound), 0.0, None, 0)
    worst = max(cand, key=lambda m: -TS_CONSTANT / m.eigenvalue.real)
    ts = -TS_CONSTANT / worst.eigenvalue.real
    return SettlingReport(bool(ts < bound), float(bound), float(ts), worst, len(cand))


def _washed(plant: LinearModel, channel: str, T_w: float):
    if channel + "~" in plant.output_names:
        return plant, channel + "~"
    if channel not in plant.output_names:
        raise MissingChannel(f"controller input {channel!r} not in plant outputs")
    return append_washout(plant, [channel], T_w), channel + "~"


def close_loop(plant: LinearModel, ctrl: Controller, washout: bool = True) -> LinearModel:
    """Feedback interconnection ``u_ch += K · washout(y_ch)``.

    All plant inputs and outputs are kept as external channels; the
    controller states are appended as ``K[<ibr>][i]``.  When
    ``washout`` is set and the plant has no ``<y>~`` output yet the
    washout filter is appended first (as the simulator realises it).
    """
    u_name = ctrl.output_channel
    if u_name not in plant.input_names:
        raise MissingChannel(f"controller output {u_name!r} not in plant inputs")
    if washout:
        plant, y_name = _washed(plant, ctrl.input_channel, ctrl.washout_T)
    else:
        y_name = ctrl.input_channel
        if y_name not in plant.output_names:
            raise MissingChannel(f"controller input {y_name!r} not in plant outputs")
    e, r = plant._in(u_name), plant._out(y_name)
    A, B, C, D = plant.A, plant.B, plant.C, plant.D
    Ak, Bk, Ck, Dk = ctrl.A, ctrl.B, ctrl.C, ctrl.D
    d = D[r, e]
    dk = Dk[0, 0]
    den = 1.0 - d * dk
    if abs(den) < 1e-9:
        raise AlgebraicLoop(f"ill-posed feedback: 1 − D·D_K = {den:.3e}")
    s = 1.0 / den
    Bu, Du = B[:, [e]], D[:, [e]]
    Cy, Dy = C[[r]], D[[r]]
    # y = s (Cy x + d Ck xk + Dy u_ext);  uc = Ck xk + Dk y
    Yx, Yk, Yu = s * Cy, s * d * Ck, s * Dy
    Ux, Uk, Uu = Dk @ Yx, Ck + Dk @ Yk, Dk @ Yu
    Acl = np.block([[A + Bu @ Ux, Bu @ Uk], [Bk @ Yx, Ak + Bk @ Yk]])
    Bcl = np.vstack([B + Bu @ Uu, Bk @ Yu])
    Ccl = np.hstack([C + Du @ Ux, Du @ Uk])
    Dcl = D + Du @ Uu
    names = list(plant.state_names) + [f"K[{ctrl.ibr}][{i}]" for i in range(ctrl.order)]
    return LinearModel(Acl, Bcl, Ccl, Dcl, names, list(plant.input_names), list(plant.output_names))


@dataclass
class StageReport:
    ibr: str
    stage: int
    reduced_order: int
    hsv: np.ndarray = field(repr=False)
    truncation_bound: float
    gamma: float
    gamma_lower: float
    tzw_peak: float
    settling: SettlingReport
    sso_before: Mode | None
    sso_after: Mode | None
    marginal_discarded: int
    notes: list = field(default_factory=list)


class DesignError(DPError):
    def __init__(self, message, stage=None, ibr=None):
        self.stage, self.ibr = stage, ibr
        super().__init__(f"stage {stage} ({ibr}): {message}")


def design_single(plant: LinearModel, ibr: str, order: int = 15, W: FilterSpec | None = None,
                  washout_T: float = 2.0, u_channel: str = "u_q", y_channel: str = "vmag",
                  rho: float = DEFAULT_RHO, input_disturbance: float = 1.0, sensor_noise: float = DEFAULT_SENSOR_NOISE):
    """Steps 1–3 for one IBR: reduce the local channel pair, build the
    generalized plant, synthesize.  Returns ``(Controller, info)``."""
    W = paper_weight() if W is None else W
    uc, yc = f"{u_channel}:{ibr}", f"{y_channel}:{ibr}"
    local = plant.select([uc], [yc])
    sp = split_stable(local)
    red, hsv = schur_balanced_truncation(sp.stable, min(order, sp.stable.n_states))
    bound = float(2 * np.sum(hsv[red.n_states:]))
    prob = build_generalized_plant(red, ibr, W, washout_filter(washout_T), u_channel, y_channel,
                                   rho=rho, input_disturbance=input_disturbance,
                                   sensor_noise=sensor_noise)
    res = hinf_synthesize(prob)
    ctrl = Controller(res.Ak, res.Bk, res.Ck, res.Dk, ibr=ibr, input=y_channel, output=u_channel,
                      washout_T=washout_T, gamma=res.gamma,
                      meta={"reduced_order": int(red.n_states), "gamma_lower": float(res.gamma_lower),
                            "tzw_peak": float(res.peak_on_grid), "weight": W.to_dict(),
                            "rho": float(rho), "input_disturbance": float(input_disturbance),
                            "sensor_noise": float(sensor_noise)})
    info = dict(hsv=hsv, bound=bound, reduced=red, result=res, marginal=sp.marginal_eigenvalues)
    return ctrl, info


def sequential_design(lm: LinearModel, ibrs, ts_schedule, W: FilterSpec | None = None,
                      washout_T: float = 2.0, order: int = 15, f_range=(4.0, 8.0),
                      u_channel: str = "u_q", y_channel: str = "vmag", rho: float = DEFAULT_RHO,
                      input_disturbance: float = 1.0, sensor_noise: float = DEFAULT_SENSOR_NOISE,
                      band=None, strict: bool = False):
    """Steps 1–4: design for each IBR in turn on the plant closed with all
    previous controllers, verify the stage's settling-time bound, and use
    the closed loop as the next plant.

    Returns ``(controllers, reports, closed_loop)``.
    """
    ibrs, ts_schedule = list(ibrs), [float(t) for t in ts_schedule]
    if len(ibrs) != len(ts_schedule):
        raise ValueError("one settling-time bound per IBR is required")
    if any(b >= a for a, b in zip(ts_schedule, ts_schedule[1:])):
        raise ValueError("settling-time schedule must be strictly decreasing")
    plant = lm
    controllers, reports = [], []
    for k, (ibr, ts) in enumerate(zip(ibrs, ts_schedule), start=1):
        before = sso_mode(plant, f_range)
        try:
            ctrl, info = design_single(plant, ibr, order, W, washout_T, u_channel, y_channel,
                                       rho, input_disturbance, sensor_noise)
            closed = close_loop(plant, ctrl)
            st = settling_time_check(closed.A, ts, band)
        except DPError as exc:
            raise DesignError(str(exc), k, ibr) from exc
        after = sso_mode(closed, f_range)
        rep = StageReport(ibr, k, info["reduced"].n_states, info["hsv"], info["bound"],
                          ctrl.gamma, info["result"].gamma_lower, info["result"].peak_on_grid,
                          st, before, after, int(info["marginal"].size), info["result"].notes)
        if strict and not st.passed:
            raise DesignError(str(st), k, ibr)
        controllers.append(ctrl)
        reports.append(rep)
        plant = closed
    return controllers, reports, plant


class HinfDamper(BaseEstimator):
    """Estimator form of :func:`sequential_design`.

    ``HinfDamper(ibrs=("IBR2", "IBR1"), ts_schedule=(45, 15)).fit(lm)``
    sets ``controllers_``, ``reports_`` and ``closed_loop_``.
    """

    def __init__(self, ibrs=("IBR2", "IBR1"), ts_schedule=(45.0, 15.0), order=15,
                 weight=None, washout_T=2.0, rho=DEFAULT_RHO, input_disturbance=1.0,
                 sensor_noise=DEFAULT_SENSOR_NOISE,
                 band=None, f_range=(4.0, 8.0)):
        self.ibrs = ibrs
        self.ts_schedule = ts_schedule
        self.order = order
        self.weight = weight
        self.washout_T = washout_T
        self.rho = rho
        self.input_disturbance = input_disturbance
        self.sensor_noise = sensor_noise
        self.band = band
        self.f_range = f_range

    def fit(self, lm: LinearModel, y=None):
        self.controllers_, self.reports_, self.closed_loop_ = sequential_design(
            lm, self.ibrs, self.ts_schedule, self.weight, self.washout_T, self.order,
            self.f_range, rho=self.rho, input_disturbance=self.input_disturbance,
            sensor_noise=self.sensor_noise, band=self.band)
        return self

    def predict(self, X=None):
        return sso_mode(self.closed_loop_, self.f_range)
