"""Generalized plant construction and two-Riccati H∞ synthesis."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from ..analysis.linear import LinearModel
from ..analysis.modal import frequency_response
from ..errors import AssumptionViolated, GammaInfeasible, MissingChannel
from .filters import FilterSpec, identity_filter, washout_filter

REG_EPS = 1e-6


@dataclass
class SynthesisProblem:
    """Generalized plant ``P`` partitioned as ``[w; u] → [z; y]``.

    ``n_w``/``n_z`` give the exogenous/performance channel counts; the
    remaining single input/output is the control pair.
    """

    plant: LinearModel
    n_w: int
    n_z: int
    ibr: str = ""
    weight: FilterSpec = field(default_factory=identity_filter)
    washout: FilterSpec = field(default_factory=identity_filter)
    u_channel: str = "u_q"
    y_channel: str = "vmag"
    gamma_target: float | None = None
    notes: list = field(default_factory=list)

    def blocks(self):
        P = self.plant
        nw, nz = self.n_w, self.n_z
        return (P.A, P.B[:, :nw], P.B[:, nw:], P.C[:nz], P.C[nz:],
                P.D[:nz, :nw], P.D[:nz, nw:], P.D[nz:, :nw], P.D[nz:, nw:])


def _series(first: LinearModel, second: LinearModel) -> LinearModel:
    """``second ∘ first`` for SISO blocks."""
    n1, n2 = first.n_states, second.n_states
    A = np.zeros((n1 + n2, n1 + n2))
    A[:n1, :n1] = first.A
    A[n1:, :n1] = second.B @ first.C
    A[n1:, n1:] = second.A
    B = np.vstack([first.B, second.B @ first.D])
    C = np.hstack([second.D @ first.C, second.C])
    return LinearModel(A, B, C, second.D @ first.D)


def build_generalized_plant(lm: LinearModel, ibr: str, W: FilterSpec | None = None,
                            washout: FilterSpec | None = None, u_channel: str = "u_q",
                            y_channel: str = "vmag", rho: float = 1e-2,
                            input_disturbance: float = 1.0,
                            sensor_noise: float = 1.0) -> SynthesisProblem:
    """Damping-design plant for one IBR.

    Channels: ``w = [w_v, w_u]`` where ``w_v`` is added to the measured
    |v_dq| and ``w_u`` (scaled by ``input_disturbance``) enters at the
    control input so the open-loop SSO resonance appears in ``T_zw``;
    ``z = [W·(|v_dq| − |v_dq|*), ρ·u]``; ``y = washout·|v_dq| + ν·w_v`` (ν = ``sensor_noise``)
    (the washout removes |v_dq|*, so ``y`` is the measured deviation the
    simulator feeds to the controller).
    The sensor disturbance enters after the washout: placed before it, the
    washout zero at s = 0 would be an imaginary-axis zero of ``P21`` and
    violate the Riccati solvability assumptions.  The ``ρ·u`` channel gives ``D12`` full column rank.
    """
    W = W or identity_filter()
    washout = washout or identity_filter()
    uc, yc = f"{u_channel}:{ibr}", f"{y_channel}:{ibr}"
    if uc not in lm.input_names:
        raise MissingChannel(f"control input {uc!r} not in model")
    if yc not in lm.output_names:
        raise MissingChannel(f"measurement {yc!r} not in model")
    G = lm.select([uc], [yc])
    n = G.n_states
    Wss, Fss = W.to_ss("W"), washout.to_ss("washout")
    nW, nF = Wss.n_states, Fss.n_states
    N = n + nW + nF
    # plant output e = G u_tot, u_tot = u + a w_u (sign matches the simulator's
    # washout(|v_dq|) feedback; ‖z‖ is sign-invariant)
    a = float(input_disturbance)
    A = np.zeros((N, N))
    B = np.zeros((N, 3))  # columns: w_v, w_u, u
    A[:n, :n] = G.A
    B[:n, 1] = a * G.B[:, 0]
    B[:n, 2] = G.B[:, 0]
    Ce = G.C[0]
    De = np.array([0.0, a * G.D[0, 0], G.D[0, 0]])
    # weight driven by e
    # the regulated signal is the true voltage deviation (w_v is a sensor disturbance)
    Dz = De
    iW = slice(n, n + nW)
    A[iW, iW] = Wss.A
    A[iW, :n] = Wss.B @ Ce[None, :]
    B[iW] = Wss.B @ Dz[None, :]
    # washout driven by e
    iF = slice(n + nW, N)
    A[iF, iF] = Fss.A
    A[iF, :n] = Fss.B @ Ce[None, :]
    B[iF] = Fss.B @ Dz[None, :]
    C = np.zeros((3, N))
    D = np.zeros((3, 3))
    C[0, :n] = Wss.D[0, 0] * Ce
    C[0, iW] = Wss.C[0]
    D[0] = Wss.D[0, 0] * Dz
    D[1, 2] = rho
    C[2, :n] = Fss.D[0, 0] * Ce
    C[2, iF] = Fss.C[0]
    D[2] = Fss.D[0, 0] * Dz
    D[2, 0] = float(sensor_noise)
    names = list(G.state_names) + [f"W[{i}]" for i in range(nW)] + [f"washout[{i}]" for i in range(nF)]
    P = LinearModel(A, B, C, D, names, ["w_v", "w_u", uc], ["z_w", "z_u", yc + "~"])
    return SynthesisProblem(P, 2, 2, ibr=ibr, weight=W, washout=washout,
                            u_channel=u_channel, y_channel=y_channel)


def _riccati(H, n, tol=1e-8):
    """Stabilizing solution of the Riccati equation with Hamiltonian ``H``.

    Returns ``None`` if ``H`` has imaginary-axis eigenvalues or the stable
    subspace is not a graph (``X1`` singular).
    """
    ev = np.linalg.eigvals(H)
    if np.min(np.abs(ev.real)) < tol * max(1.0, np.abs(ev).max()):
        return None
    T, Z, k = sla.schur(H, output="real", sort="lhp")
    if k != n:
        return None
    X1, X2 = Z[:n, :n], Z[n:, :n]
    if np.linalg.cond(X1) > 1e12:
        return None
    X = np.linalg.solve(X1.T, X2.T).T
    return (X + X.T) / 2


def _normalize(prob: SynthesisProblem):
    """Transform to ``D12ᵀD12 = I``, ``D21 D21ᵀ = I``, ``D22 = 0``.

    Returns the normalized blocks and the maps needed to undo the scaling.
    """
    A, B1, B2, C1, C2, D11, D12, D21, D22 = prob.blocks()
    notes = []
    m2, p2 = B2.shape[1], C2.shape[0]
    if np.linalg.matrix_rank(D12) < m2:
        D12 = D12 + REG_EPS * np.vstack([np.zeros((D12.shape[0] - m2, m2)), np.eye(m2)]) \
            if D12.shape[0] >= m2 else D12
        notes.append(f"D12 rank-deficient: regularized with ε={REG_EPS}")
        if np.linalg.matrix_rank(D12) < m2:
            raise AssumptionViolated("D12 does not have full column rank (too few performance outputs)")
    if np.linalg.matrix_rank(D21) < p2:
        if D21.shape[1] < p2:
            raise AssumptionViolated("D21 does not have full row rank (too few disturbance inputs)")
        D21 = D21 + REG_EPS * np.hstack([np.eye(p2), np.zeros((p2, D21.shape[1] - p2))])
        notes.append(f"D21 rank-deficient: regularized with ε={REG_EPS}")
    # u = Su ũ with Su = (D12ᵀD12)^{-1/2};  ỹ = Sy y with Sy = (D21 D21ᵀ)^{-1/2}
    Su = sla.inv(sla.sqrtm(D12.T @ D12)).real
    Sy = sla.inv(sla.sqrtm(D21 @ D21.T)).real
    return dict(A=A, B1=B1, B2=B2 @ Su, C1=C1, C2=Sy @ C2, D11=D11, D12=D12 @ Su,
                D21=Sy @ D21, D22=Sy @ D22 @ Su, Su=Su, Sy=Sy, notes=notes)


def _check_assumptions(nb):
    A, B2, C2 = nb["A"], nb["B2"], nb["C2"]
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if lam.real >= -1e-9:
            M = np.hstack([A - lam * np.eye(n), B2])
            if np.linalg.matrix_rank(M, 1e-9 * max(1, np.abs(M).max())) < n:
                raise AssumptionViolated(f"(A, B2) not stabilizable: mode {lam:.4g} uncontrollable")
            M = np.vstack([A - lam * np.eye(n), C2])
            if np.linalg.matrix_rank(M, 1e-9 * max(1, np.abs(M).max())) < n:
                raise AssumptionViolated(f"(C2, A) not detectable: mode {lam:.4g} unobservable")
    if np.abs(nb["D11"]).max() > 0:
        raise AssumptionViolated("D11 must be zero for the central-controller formulas "
                                 "(use a strictly proper weight)")


def _central_controller(nb, gamma):
    """Central controller at ``gamma`` or ``None`` if infeasible (D22 = 0 form)."""
    A, B1, B2, C1, C2, D12, D21 = (nb[k] for k in ("A", "B1", "B2", "C1", "C2", "D12", "D21"))
    n = A.shape[0]
    g2 = gamma ** -2
    # X∞
    Ax = A - B2 @ D12.T @ C1
    Ct = C1 - D12 @ (D12.T @ C1)
    Hx = np.block([[Ax, g2 * B1 @ B1.T - B2 @ B2.T], [-Ct.T @ Ct, -Ax.T]])
    X = _riccati(Hx, n)
    if X is None or np.min(np.linalg.eigvalsh(X)) < -1e-8 * max(1, np.abs(X).max()):
        return None
    # Y∞
    Ay = A - B1 @ D21.T @ C2
    Bt = B1 - (B1 @ D21.T) @ D21
    Hy = np.block([[Ay.T, g2 * C1.T @ C1 - C2.T @ C2], [-Bt @ Bt.T, -Ay]])
    Y = _riccati(Hy, n)
    if Y is None or np.min(np.linalg.eigvalsh(Y)) < -1e-8 * max(1, np.abs(Y).max()):
        return None
    rho = np.max(np.abs(np.linalg.eigvals(X @ Y)))
    if rho >= gamma ** 2 * (1 - 1e-9):
        return None
    F = -(D12.T @ C1 + B2.T @ X)
    L = -(B1 @ D21.T + Y @ C2.T)
    Z = np.linalg.inv(np.eye(n) - g2 * Y @ X)
    Ak = A + g2 * B1 @ B1.T @ X + B2 @ F + Z @ L @ (C2 + g2 * D21 @ B1.T @ X)
    Bk = -Z @ L
    Ck = F
    Dk = np.zeros((F.shape[0], C2.shape[0]))
    return Ak, Bk, Ck, Dk


def _lft(P: LinearModel, n_w, n_z, Ak, Bk, Ck, Dk):
    """Lower LFT ``F_l(P, K)`` (assumes I - D22 Dk invertible)."""
    A, B1, B2 = P.A, P.B[:, :n_w], P.B[:, n_w:]
    C1, C2 = P.C[:n_z], P.C[n_z:]
    D11, D12, D21, D22 = P.D[:n_z, :n_w], P.D[:n_z, n_w:], P.D[n_z:, :n_w], P.D[n_z:, n_w:]
    R = np.linalg.inv(np.eye(D22.shape[0]) - D22 @ Dk)      # y = R(C2 x + D22 Ck xk + D21 w)
    Ry_x, Ry_k, Ry_w = R @ C2, R @ D22 @ Ck, R @ D21
    Uu_x, Uu_k, Uu_w = Dk @ Ry_x, Ck + Dk @ Ry_k, Dk @ Ry_w  # u = Ck xk + Dk y
    Acl = np.block([[A + B2 @ Uu_x, B2 @ Uu_k], [Bk @ Ry_x, Ak + Bk @ Ry_k]])
    Bcl = np.vstack([B1 + B2 @ Uu_w, Bk @ Ry_w])
    Ccl = np.hstack([C1 + D12 @ Uu_x, D12 @ Uu_k])
    Dcl = D11 + D12 @ Uu_w
    return LinearModel(Acl, Bcl, Ccl, Dcl)


@dataclass
class SynthesisResult:
    Ak: np.ndarray
    Bk: np.ndarray
    Ck: np.ndarray
    Dk: np.ndarray
    gamma: float
    gamma_lower: float
    closed_loop: LinearModel
    peak_on_grid: float
    notes: list


def default_grid(lm: LinearModel, n=400):
    ev = np.abs(np.linalg.eigvals(lm.A)) if lm.n_states else np.array([1.0])
    ev = ev[ev > 0]
    lo = max(1e-3, 0.1 * ev.min()) if ev.size else 1e-3
    hi = 10 * ev.max() if ev.size else 1e3
    grid = np.logspace(np.log10(lo), np.log10(hi), n)
    # refine around lightly damped poles
    extra = [abs(l.imag) for l in np.linalg.eigvals(lm.A) if l.imag > 0] if lm.n_states else []
    return np.unique(np.concatenate([grid, extra]))


def hinf_synthesize(prob: SynthesisProblem, gamma=None, tol=1e-3, gamma_max=1e8,
                    margin=1.01, grid=None) -> SynthesisResult:
    """Two-Riccati central H∞ controller with bisection on γ.

    If ``gamma`` (or ``prob.gamma_target``) is given the controller is
    synthesized at that level and :class:`GammaInfeasible` is raised when it
    is not achievable.  Otherwise γ is bisected to relative tolerance
    ``tol`` and the controller is built at ``margin·γ_feasible`` for a
    well-conditioned realisation.  The achieved ``‖T_zw‖∞`` is verified on
    a frequency grid.
    """
    nb = _normalize(prob)
    _check_assumptions(nb)
    target = gamma if gamma is not None else prob.gamma_target
    if target is not None:
        K = _central_controller(nb, target)
        if K is None:
            lo = _bisect(nb, tol, gamma_max)[0]
            raise GammaInfeasible(f"γ = {target:.6g} not achievable (optimal ≈ {lo:.6g})", lower_bound=lo)
        g_used, g_lo = float(target), float("nan")
    else:
        g_lo, g_hi = _bisect(nb, tol, gamma_max)
        g_used = g_hi * margin
        K = _central_controller(nb, g_used)
        if K is None:  # numerically marginal; back off
            g_used = g_hi * 1.1
            K = _central_controller(nb, g_used)
        if K is None:
            raise GammaInfeasible("bisection bracket not reproducible", lower_bound=g_lo)
    Ak, Bk, Ck, Dk = K
    # undo normalization: u = Su ũ, ỹ = Sy y; D22 loop shift is zero by construction
    Bk = Bk @ nb["Sy"]
    Ck = nb["Su"] @ Ck
    Dk = nb["Su"] @ Dk @ nb["Sy"]
    P = prob.plant
    D22 = P.D[prob.n_z:, prob.n_w:]
    if np.abs(D22).max() > 0:
        # K designed for D22 = 0; realise K (I + D22 K)^{-1}
        M = np.linalg.inv(np.eye(D22.shape[1]) + Dk @ D22)
        Ak = Ak - Bk @ D22 @ M @ Ck
        Bk = Bk @ (np.eye(D22.shape[0]) - D22 @ M @ Dk)
        Ck = M @ Ck
        Dk = M @ Dk
    cl = _lft(P, prob.n_w, prob.n_z, Ak, Bk, Ck, Dk)
    if cl.n_states and np.max(np.linalg.eigvals(cl.A).real) >= 0:
        raise GammaInfeasible("synthesized controller does not stabilize the plant", lower_bound=g_lo)
    grid = default_grid(cl) if grid is None else grid
    G = frequency_response(cl, grid)
    peak = float(max(np.linalg.norm(g, 2) for g in G))
    return SynthesisResult(Ak, Bk, Ck, Dk, g_used, g_lo, cl, peak, list(nb["notes"]))


def _bisect(nb, tol, gamma_max):
    hi = 1.0
    while _central_controller(nb, hi) is None:
        hi *= 4
        if hi > gamma_max:
            raise GammaInfeasible(f"no feasible γ below {gamma_max:.3g}", lower_bound=gamma_max)
    lo = hi / 4 if hi > 1 else 0.0
    if hi == 1.0:
        while hi > 1e-8 and _central_controller(nb, hi / 4) is not None:
            hi /= 4
        lo = hi / 4
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if _central_controller(nb, mid) is None:
            lo = mid
        else:
            hi = mid
    return lo, hi
