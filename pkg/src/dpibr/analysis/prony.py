"""Least-squares Prony identification of damped sinusoids in a ringdown."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from ..errors import IllConditioned

DEFAULT_FS = 200.0


@dataclass
class PronyComponent:
    frequency: float      # Hz (>= 0)
    damping: float        # damping ratio
    amplitude: float      # peak amplitude of the real component
    phase: float          # rad
    eigenvalue: complex   # continuous-time root (upper half plane)
    energy: float


def resample_uniform(t, y, fs=DEFAULT_FS, window=None):
    """Linear interpolation of an adaptive-step trace onto a uniform grid."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.ndim != 1 or t.size != y.size or t.size < 2:
        raise ValueError("t and y must be 1-D arrays of equal length >= 2")
    t0, t1 = (t[0], t[-1]) if window is None else window
    t0, t1 = max(t0, t[0]), min(t1, t[-1])
    if t1 <= t0:
        raise ValueError("empty Prony window")
    n = int(np.floor((t1 - t0) * fs + 1e-9)) + 1
    tu = t0 + np.arange(n) / fs
    return tu, np.interp(tu, t, y)


def prony_fit(y, dt, order=10, rcond=1e-10):
    """Fit ``y[n] ≈ Σ_i c_i z_i^n`` by least-squares linear prediction.

    Returns components sorted by energy (descending); conjugate root pairs
    are merged into one real component.  When the prediction matrix is
    rank deficient the order is reduced to its numerical rank; a signal
    with no information at all (rank 0) raises :class:`IllConditioned`.
    """
    y = np.asarray(y, dtype=float).ravel()
    if dt <= 0:
        raise ValueError("sample interval must be positive")
    if not np.all(np.isfinite(y)):
        raise ValueError("signal contains non-finite samples")
    N = y.size
    order = int(order)
    if order < 1:
        raise ValueError("model order must be >= 1")
    if N < 2 * order + 1:
        raise ValueError(f"need at least {2 * order + 1} samples for order {order}")
    scale = np.max(np.abs(y))
    if scale == 0:
        raise IllConditioned("signal is identically zero")
    ys = y / scale
    # linear prediction y[n] = -sum a_k y[n-k]
    H = np.column_stack([ys[order - k - 1:N - k - 1] for k in range(order)])
    rhs = ys[order:]
    sv = np.linalg.svd(H, compute_uv=False)
    rank = int(np.sum(sv > rcond * sv[0])) if sv.size and sv[0] > 0 else 0
    if rank == 0:
        raise IllConditioned("prediction matrix has numerical rank 0")
    if rank < order:
        return prony_fit(y, dt, order=rank, rcond=rcond)
    a, *_ = np.linalg.lstsq(H, rhs, rcond=None)
    z = np.roots(np.concatenate([[1.0], -a]))
    z = z[np.abs(z) > 1e-12]
    lam = np.log(z.astype(complex)) / dt
    # amplitudes by least squares on the Vandermonde basis
    n = np.arange(N)
    V = np.exp(np.outer(n * dt, lam))
    c, *_ = np.linalg.lstsq(V, ys.astype(complex), rcond=None)
    c = c * scale
    comps = []
    used = np.zeros(lam.size, dtype=bool)
    for i in range(lam.size):
        if used[i]:
            continue
        used[i] = True
        li, ci = lam[i], c[i]
        if abs(li.imag) > 1e-9:
            # merge with the conjugate partner
            rest = np.where(~used)[0]
            if rest.size:
                j = rest[np.argmin(np.abs(lam[rest] - np.conj(li)))]
                used[j] = True
            if li.imag < 0:
                li, ci = np.conj(li), np.conj(ci)
            amp, ph = 2 * abs(ci), float(np.angle(ci))
        else:
            li = complex(li.real, 0.0)
            amp, ph = abs(ci.real), 0.0 if ci.real >= 0 else np.pi
        sig = amp * np.exp(li.real * n * dt)
        energy = float(np.sum(sig ** 2) * dt)
        mag = abs(li)
        zeta = 1.0 if mag == 0 else -li.real / mag
        comps.append(PronyComponent(frequency=abs(li.imag) / (2 * np.pi), damping=float(zeta),
                                    amplitude=float(amp), phase=ph, eigenvalue=complex(li),
                                    energy=energy))
    comps.sort(key=lambda q: q.energy, reverse=True)
    return comps


def dominant_mode(components, f_range=(0.1, 30.0)):
    """Highest-energy oscillatory component inside ``f_range`` (Hz)."""
    cand = [q for q in components if f_range[0] <= q.frequency <= f_range[1]]
    return cand[0] if cand else None


class Prony(BaseEstimator):
    """Estimator form: ``Prony(order=10).fit(t, y).components_``.

    ``fit`` resamples the trace at ``fs`` over ``window`` and removes the
    window mean when ``detrend`` is set.
    """

    def __init__(self, order=10, fs=DEFAULT_FS, window=None, detrend=True, f_range=(0.1, 30.0)):
        self.order = order
        self.fs = fs
        self.window = window
        self.detrend = detrend
        self.f_range = f_range

    def fit(self, t, y):
        tu, yu = resample_uniform(t, y, self.fs, self.window)
        if self.detrend:
            yu = yu - np.mean(yu)
        self.t_ = tu
        self.components_ = prony_fit(yu, 1.0 / self.fs, self.order)
        return self

    def predict(self, t=None):
        """Reconstructed signal (window-relative time) from the fit."""
        t = self.t_ if t is None else np.asarray(t, dtype=float)
        tau = t - self.t_[0]
        out = np.zeros_like(tau)
        for q in self.components_:
            out += q.amplitude * np.exp(q.eigenvalue.real * tau) * np.cos(q.eigenvalue.imag * tau + q.phase)
        return out

    def dominant(self):
        return dominant_mode(self.components_, self.f_range)
