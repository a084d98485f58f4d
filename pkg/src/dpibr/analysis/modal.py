"""Eigenanalysis, participation factors, modal controllability, frequency
response and the locational-impact index."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from sklearn.base import BaseEstimator

from ..errors import EigenFailure
from .linear import LinearModel

PAIR_TOL = 1e-9


@dataclass
class Mode:
    """One eigenvalue with its modal metadata."""

    eigenvalue: complex
    participation: np.ndarray = field(repr=False, default=None)
    right: np.ndarray = field(repr=False, default=None)
    left: np.ndarray = field(repr=False, default=None)
    index: int = -1

    @property
    def frequency(self) -> float:
        """Oscillation frequency |Im λ|/2π in Hz."""
        return abs(self.eigenvalue.imag) / (2 * np.pi)

    @property
    def damping(self) -> float:
        """Damping ratio −Re λ/|λ| (1 for λ = 0 by convention)."""
        mag = abs(self.eigenvalue)
        return 1.0 if mag == 0 else -self.eigenvalue.real / mag

    @property
    def settling_time(self) -> float:
        """2% settling time 4/(ζ|λ|) = −4/Re λ."""
        re = self.eigenvalue.real
        return np.inf if re >= 0 else -4.0 / re

    def top_states(self, names, n=5):
        order = np.argsort(self.participation)[::-1][:n]
        return [(names[i], float(self.participation[i])) for i in order]


def _pair_conjugates(lam):
    """Make the spectrum of a real matrix exactly conjugate-closed."""
    lam = lam.copy()
    used = np.zeros(lam.size, dtype=bool)
    for i in np.argsort(-lam.imag):
        if used[i]:
            continue
        used[i] = True
        if abs(lam[i].imag) <= PAIR_TOL * max(1.0, abs(lam[i])):
            lam[i] = lam[i].real
            continue
        cand = np.where(~used)[0]
        if cand.size == 0:
            break
        j = cand[np.argmin(np.abs(lam[cand] - np.conj(lam[i])))]
        used[j] = True
        lam[j] = np.conj(lam[i])
    return lam


def eigenanalysis(lm: LinearModel | np.ndarray) -> list[Mode]:
    """Full spectrum with participation factors, sorted by decreasing
    real part.  Conjugate pairs are made exact."""
    A = lm.A if isinstance(lm, LinearModel) else np.asarray(lm, dtype=float)
    if A.size == 0:
        return []
    if not np.all(np.isfinite(A)):
        raise EigenFailure("state matrix contains non-finite entries")
    try:
        lam, W, V = sla.eig(A, left=True, right=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise EigenFailure(f"eigen decomposition failed: {exc}; cond(A)={np.linalg.cond(A):.3e}") from None
    lam = _pair_conjugates(lam)
    # scale left vectors so that psi_i^T phi_i = 1 (psi rows = conj(W).T)
    Psi = np.conj(W).T
    scale = np.einsum("ij,ji->i", Psi, V)
    scale[scale == 0] = 1.0
    Psi = Psi / scale[:, None]
    P = np.abs(Psi * V.T)
    tot = P.sum(axis=1, keepdims=True)
    tot[tot == 0] = 1.0
    P = P / tot
    order = np.lexsort((np.abs(lam.imag), -lam.real))
    return [Mode(complex(lam[i]), P[i], V[:, i], Psi[i], index=int(i)) for i in order]


def find_mode(modes, f_range=(4.0, 8.0), exclude_zero=True, states=None, names=None,
              exclude=None):
    """Least-damped oscillatory mode inside ``f_range`` (Hz).

    If ``states`` (substrings) and ``names`` are given, only modes whose top
    participation lies in matching states are considered.  ``exclude``
    (state-name prefixes, e.g. controller states ``"K["``) drops modes whose
    participation is at least half in excluded states.
    """
    cand = [m for m in modes if m.eigenvalue.imag > 0 and f_range[0] <= m.frequency <= f_range[1]]
    if exclude and names is not None:
        mask = np.array([not str(n).startswith(tuple(exclude)) for n in names])
        cand = [m for m in cand if m.participation[mask].sum() >= 0.5]
    if states is not None and names is not None:
        def ok(m):
            top = m.top_states(names, 3)
            return any(any(s in n for s in states) for n, _ in top)
        cand = [m for m in cand if ok(m)] or cand
    if not cand:
        return None
    return min(cand, key=lambda m: m.damping)


def modal_controllability(lm: LinearModel, mode: Mode, inputs=None):
    """|ψᵀ b_j| per candidate input, ranked descending."""
    names = lm.input_names if inputs is None else list(inputs)
    idx = [lm._in(n) for n in names]
    scores = np.abs(mode.left @ lm.B[:, idx])
    order = np.argsort(-scores, kind="stable")
    return [(names[i], float(scores[i])) for i in order]


def frequency_response(lm: LinearModel, omega) -> np.ndarray:
    """G(jω) for each ω; returns array of shape (len(ω), p, m)."""
    omega = np.asarray(omega, dtype=float).ravel()
    if omega.size == 0:
        raise ValueError("frequency grid is empty")
    if np.any(~np.isfinite(omega)) or np.any(omega < 0):
        raise ValueError("frequency grid must be finite and non-negative")
    n = lm.n_states
    out = np.empty((omega.size, lm.n_outputs, lm.n_inputs), dtype=complex)
    if n == 0:
        out[:] = lm.D
        return out
    # Hessenberg form makes each solve O(n^2)
    H, Q = sla.hessenberg(lm.A, calc_q=True)
    Bt = Q.T @ lm.B
    Ct = lm.C @ Q
    eye = np.eye(n)
    for i, w in enumerate(omega):
        M = 1j * w * eye - H
        try:
            lu = sla.lu_factor(M, check_finite=False)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise EigenFailure(f"(jωI − A) singular at ω={w}") from exc
        if np.min(np.abs(np.diag(lu[0]))) < 1e-14 * max(1.0, np.abs(lu[0]).max()):
            raise EigenFailure(f"(jωI − A) near-singular at ω={w} (undamped eigenvalue)")
        out[i] = Ct @ sla.lu_solve(lu, Bt, check_finite=False) + lm.D
    return out


def hinf_norm_grid(lm: LinearModel, omega) -> float:
    """Peak largest singular value of G(jω) over a grid."""
    G = frequency_response(lm, omega)
    return float(max(np.linalg.norm(g, 2) for g in G))


@dataclass
class ImpactRow:
    input: str
    bus: object
    magnitude: float
    rank: int


def locational_impact(lm: LinearModel, inputs, output, omega: float, buses=None):
    """Rank inputs by |G_yw(jω)| at the mode frequency ``omega`` (rad/s)."""
    sub = lm.select(inputs=list(inputs), outputs=[output])
    G = frequency_response(sub, [omega])[0, 0]
    mags = np.abs(G)
    order = np.argsort(-mags, kind="stable")
    buses = list(inputs) if buses is None else list(buses)
    rows = [None] * len(order)
    for r, i in enumerate(order):
        rows[r] = ImpactRow(input=list(inputs)[i], bus=buses[i], magnitude=float(mags[i]), rank=r + 1)
    return rows


class ModalAnalyzer(BaseEstimator):
    """Estimator-style wrapper: ``fit(LinearModel)`` computes the spectrum;
    ``predict()`` returns the selected oscillatory mode."""

    def __init__(self, f_range=(4.0, 8.0), states=("pll", "i_t", "x_i")):
        self.f_range = f_range
        self.states = states

    def fit(self, lm: LinearModel, y=None):
        self.model_ = lm
        self.modes_ = eigenanalysis(lm)
        return self

    def predict(self, X=None):
        return find_mode(self.modes_, self.f_range, states=self.states,
                         names=self.model_.state_names)
