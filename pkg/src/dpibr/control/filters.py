"""Rational continuous-time filters (weights and washouts)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from ..analysis.linear import LinearModel

PAPER_W_NUM = (25.13, 0.0)
PAPER_W_DEN = (1.0, 25.13, 1593.0)


@dataclass(frozen=True)
class FilterSpec:
    """Rational filter ``num(s)/den(s)`` (coefficients, highest power first)."""

    num: tuple
    den: tuple

    def __post_init__(self):
        num = np.trim_zeros(np.atleast_1d(np.asarray(self.num, dtype=float)), "f")
        den = np.trim_zeros(np.atleast_1d(np.asarray(self.den, dtype=float)), "f")
        if den.size == 0:
            raise ValueError("filter denominator is zero")
        if num.size == 0:
            num = np.zeros(1)
        if num.size > den.size:
            raise ValueError("filter must be proper (deg num <= deg den)")
        if not (np.all(np.isfinite(num)) and np.all(np.isfinite(den))):
            raise ValueError("filter coefficients must be finite")
        object.__setattr__(self, "num", tuple(float(v) for v in num))
        object.__setattr__(self, "den", tuple(float(v) for v in den))

    @property
    def order(self):
        return len(self.den) - 1

    @property
    def is_identity(self):
        return self.order == 0 and self.num[0] == self.den[0]

    def poles(self):
        return np.roots(self.den) if self.order else np.zeros(0, complex)

    def is_stable(self):
        return bool(np.all(self.poles().real < 0))

    def __call__(self, s):
        s = np.asarray(s, dtype=complex)
        return np.polyval(self.num, s) / np.polyval(self.den, s)

    def to_ss(self, name="f") -> LinearModel:
        """Controllable-canonical state-space realisation (SISO)."""
        if self.order == 0:
            return LinearModel(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)),
                               [[self.num[0] / self.den[0]]], [], ["in"], ["out"])
        A, B, C, D = signal.tf2ss(self.num, self.den)
        return LinearModel(A, B, C, D, [f"{name}[{i}]" for i in range(self.order)], ["in"], ["out"])

    def to_dict(self):
        return {"num": list(self.num), "den": list(self.den)}


def identity_filter() -> FilterSpec:
    return FilterSpec((1.0,), (1.0,))


def washout_filter(T_w: float = 2.0) -> FilterSpec:
    """``s T_w / (1 + s T_w)``."""
    if not T_w > 0:
        raise ValueError("washout time constant must be positive")
    return FilterSpec((T_w, 0.0), (T_w, 1.0))


def paper_weight() -> FilterSpec:
    """The paper's performance weight ``25.13 s / (s² + 25.13 s + 1593)``."""
    return FilterSpec(PAPER_W_NUM, PAPER_W_DEN)


def bandpass_weight(f_center_hz: float, bandwidth_hz: float) -> FilterSpec:
    """Second-order bandpass ``2ζω s / (s² + 2ζω s + ω²)`` with unit peak at ω."""
    w0 = 2 * np.pi * f_center_hz
    bw = 2 * np.pi * bandwidth_hz
    return FilterSpec((bw, 0.0), (1.0, bw, w0 ** 2))
