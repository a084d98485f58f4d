"""Dynamic-phasor algebra and frame transforms.

A dynamic phasor (DP) ``<x>_k`` is the k-th sliding-window Fourier
coefficient of a signal with respect to the synchronous frequency
``omega_s``.  Real signals satisfy ``<x>_{-k} = conj(<x>_k)``, and the
positive/negative sequence pair of a real three-phase set satisfies
``<x_p>_{-k} = conj(<x_n>_k)``.  Only ``k >= 0`` coefficients are stored;
negative indices are derived from these identities.

Axis convention
---------------
``pnz_to_dq`` rotates by ``delta``, the angle between the synchronous
Q-axis and a device d-axis.  With ``delta = 0`` a voltage lying on the
synchronous D-axis appears entirely on the device q-axis.  A PLL that
drives ``v_q -> 0`` therefore settles at ``delta = theta + pi/2`` with
``v_d = +|v|``, where ``theta`` is the voltage angle measured from D.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

SQRT2 = np.sqrt(2.0)
ALPHA = np.exp(2j * np.pi / 3)

#: Symmetrical-component matrix mapping (p, n, z) to (a, b, c).
T_PNZ = np.array(
    [[1, 1, 1], [ALPHA**2, ALPHA, 1], [ALPHA, ALPHA**2, 1]], dtype=complex
) / np.sqrt(3.0)
#: Inverse of :data:`T_PNZ`; unitary so it equals the conjugate transpose.
T_PNZ_INV = T_PNZ.conj().T


class Frame(enum.Enum):
    ABC = "abc"
    PNZ = "pnz"
    DQ0 = "sync-DQ0"
    DQ = "async-dq"


@dataclass
class DPSet:
    """Dynamic phasors of one real signal, stored for ``k >= 0``.

    Reads of absent indices return exactly zero.  Writing a negative index
    stores the conjugate at ``-k``, so symmetry cannot be violated.
    """

    coeffs: dict = field(default_factory=dict)
    frame: Frame = Frame.ABC
    base_freq: float = 2 * np.pi * 60.0

    def __post_init__(self):
        stored = {}
        for k, v in dict(self.coeffs).items():
            k = int(k)
            if k < 0:
                stored[-k] = complex(np.conj(v))
            else:
                stored[k] = complex(v)
        if 0 in stored:
            stored[0] = complex(stored[0].real, 0.0)
        self.coeffs = stored

    def __getitem__(self, k: int) -> complex:
        if k < 0:
            return complex(np.conj(self.coeffs.get(-k, 0j)))
        return self.coeffs.get(k, 0j)

    def __setitem__(self, k: int, value: complex):
        if k < 0:
            k, value = -k, np.conj(value)
        if k == 0:
            value = complex(np.real(value), 0.0)
        self.coeffs[k] = complex(value)

    @property
    def indices(self):
        """Signed harmonic indices carried by this set."""
        ks = sorted(self.coeffs)
        return sorted({-k for k in ks} | set(ks))


@dataclass
class SeqDPSet:
    """Positive/negative/zero sequence DPs of a real three-phase quantity.

    ``p``, ``n`` and ``z`` map ``k >= 0`` to complex coefficients.  Negative
    indices follow ``p_{-k} = conj(n_k)``, ``n_{-k} = conj(p_k)`` and
    ``z_{-k} = conj(z_k)``.
    """

    p: dict = field(default_factory=dict)
    n: dict = field(default_factory=dict)
    z: dict = field(default_factory=dict)
    base_freq: float = 2 * np.pi * 60.0

    def get(self, seq: str, k: int) -> complex:
        if k >= 0:
            return complex(getattr(self, seq).get(k, 0j))
        mirror = {"p": "n", "n": "p", "z": "z"}[seq]
        return complex(np.conj(getattr(self, mirror).get(-k, 0j)))

    def triple(self, k: int) -> np.ndarray:
        return np.array([self.get("p", k), self.get("n", k), self.get("z", k)])

    def to_abc(self) -> list[DPSet]:
        """Phase DPs obtained by applying ``T`` at every stored index."""
        ks = set(self.p) | set(self.n) | set(self.z)
        phases = [DPSet(frame=Frame.ABC, base_freq=self.base_freq) for _ in range(3)]
        for k in ks:
            abc = T_PNZ @ self.triple(k)
            for ph, v in zip(phases, abc):
                ph[k] = v
        return phases


def dp_time_shift(k: int, value: complex, derivative_of_coeff: complex,
                  omega_s: float = 2 * np.pi * 60.0) -> complex:
    """DP of a time derivative: ``d<x>_k/dt + j k omega_s <x>_k``."""
    if omega_s <= 0:
        raise ValueError("omega_s must be positive")
    return derivative_of_coeff + 1j * k * omega_s * value


def dq0_to_pnz(xD, xQ, x0):
    """Synchronous DQ0 DPs at index k to (p at k+1, n at k-1, z at k)."""
    xp = (xD - 1j * xQ) / SQRT2
    xn = (xD + 1j * xQ) / SQRT2
    return xp, xn, x0


def pnz_to_dq0(xp, xn, xz):
    """Inverse of :func:`dq0_to_pnz`; ``xp`` at k+1 and ``xn`` at k-1."""
    xD = (xp + xn) / SQRT2
    xQ = -(xp - xn) / (SQRT2 * 1j)
    return xD, xQ, xz


def pnz_to_dq(xp, xn, delta):
    """Asynchronous dq DPs at index k from ``xp`` at k+1 and ``xn`` at k-1.

    ``delta`` is held constant over the averaging window.  Accepts scalars
    or numpy arrays.
    """
    a = np.exp(1j * delta) * xn
    b = np.exp(-1j * delta) * xp
    return (a - b) / (SQRT2 * 1j), (a + b) / SQRT2


def dq_to_pnz(xd, xq, delta):
    """Inverse of :func:`pnz_to_dq`: returns (p at k+1, n at k-1)."""
    xp = np.exp(1j * delta) * (xq - 1j * xd) / SQRT2
    xn = np.exp(-1j * delta) * (xq + 1j * xd) / SQRT2
    return xp, xn


def abc_to_pnz(values) -> np.ndarray:
    """Symmetrical components ``T^-1 @ abc`` (works on DPs or phasors)."""
    return T_PNZ_INV @ np.asarray(values, dtype=complex)


def pnz_to_abc(values) -> np.ndarray:
    return T_PNZ @ np.asarray(values, dtype=complex)


def reconstruct_waveform(dp: DPSet, t):
    """Evaluate ``sum_k <x>_k exp(j k omega_s t)`` over the carried indices.

    The stored half-spectrum is folded as ``x0 + 2 Re(sum_{k>0} ...)`` which
    is real by construction.
    """
    t = np.asarray(t, dtype=float)
    out = np.full(t.shape, dp[0].real)
    for k, c in dp.coeffs.items():
        if k > 0:
            out = out + 2.0 * np.real(c * np.exp(1j * k * dp.base_freq * t))
    return out


# -- transforms with a harmonic-carrying frame angle ---------------------------

def rotation_dps(delta0: float, delta2: complex = 0j):
    """DPs of ``exp(+j delta)`` and ``exp(-j delta)`` for an angle with
    k=0 and k=+-2 content, expanded to first order in ``delta2``.

    Returns two dicts keyed by harmonic index (0, 2, -2).
    """
    e0 = np.exp(1j * delta0)
    f0 = np.conj(e0)
    d2 = delta2
    d2m = np.conj(delta2)
    pos = {0: e0, 2: 1j * e0 * d2, -2: 1j * e0 * d2m}
    neg = {0: f0, 2: -1j * f0 * d2, -2: -1j * f0 * d2m}
    return pos, neg


def network_to_dq(p1, n1, pos, neg):
    """dq DPs at k=0 and k=2 from network k=1 sequence DPs ``p1``, ``n1``.

    The network carries only k=+-1, so ``p_{-1} = conj(n1)`` and
    ``n_{-1} = conj(p1)``; all other pnz indices are zero.
    """
    p = {1: p1, -1: np.conj(n1)}
    n = {1: n1, -1: np.conj(p1)}
    out = {}
    for k in (0, 2):
        a = 0j
        b = 0j
        for m, em in pos.items():
            a = a + em * n.get(k - 1 - m, 0j)
        for m, fm in neg.items():
            b = b + fm * p.get(k + 1 - m, 0j)
        out[k] = ((a - b) / (SQRT2 * 1j), (a + b) / SQRT2)
    # k=0 of a real signal: imaginary part vanishes up to the truncation.
    d0, q0 = out[0]
    return (np.real(d0), np.real(q0)), out[2]


def dq_to_network(d0, q0, d2, q2, pos, neg):
    """Network k=1 sequence DPs (p1, n1) from dq DPs at k=0 and k=+-2."""
    s = {0: q0 - 1j * d0, 2: q2 - 1j * d2, -2: np.conj(q2) - 1j * np.conj(d2)}
    a = {0: q0 + 1j * d0, 2: q2 + 1j * d2, -2: np.conj(q2) + 1j * np.conj(d2)}
    p1 = 0j
    n1 = 0j
    for m, em in pos.items():
        p1 = p1 + em * s.get(-m, 0j)
    for m, fm in neg.items():
        n1 = n1 + fm * a.get(2 - m, 0j)
    return p1 / SQRT2, n1 / SQRT2
