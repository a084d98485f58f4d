"""Linear state-space models and numerical linearisation."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import MissingChannel, NotAtEquilibrium


@dataclass
class LinearModel:
    """Real state-space model ``x' = A x + B u``, ``y = C x + D u``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    state_names: list = field(default_factory=list)
    input_names: list = field(default_factory=list)
    output_names: list = field(default_factory=list)

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = self.A.shape[0] if self.A.size else 0
        self.A = self.A.reshape(n, n)
        self.B = np.asarray(self.B, dtype=float).reshape(n, -1) if n else np.asarray(self.B, float)
        self.C = np.asarray(self.C, dtype=float)
        self.D = np.atleast_2d(np.asarray(self.D, dtype=float))
        p, m = self.D.shape
        if n == 0:
            self.B = np.zeros((0, m))
            self.C = np.zeros((p, 0))
        self.C = self.C.reshape(p, n)
        if self.B.shape != (n, m):
            raise ValueError(f"B has shape {self.B.shape}, expected {(n, m)}")
        for arr in (self.A, self.B, self.C, self.D):
            if not np.all(np.isfinite(arr)):
                raise ValueError("state-space matrices must be finite")
        if not self.state_names:
            self.state_names = [f"x{i}" for i in range(n)]
        if not self.input_names:
            self.input_names = [f"u{i}" for i in range(m)]
        if not self.output_names:
            self.output_names = [f"y{i}" for i in range(p)]

    @property
    def n_states(self):
        return self.A.shape[0]

    @property
    def n_inputs(self):
        return self.D.shape[1]

    @property
    def n_outputs(self):
        return self.D.shape[0]

    def _in(self, name):
        if isinstance(name, int):
            return name
        try:
            return self.input_names.index(name)
        except ValueError:
            raise MissingChannel(f"input channel {name!r} not in model") from None

    def _out(self, name):
        if isinstance(name, int):
            return name
        try:
            return self.output_names.index(name)
        except ValueError:
            raise MissingChannel(f"output channel {name!r} not in model") from None

    def select(self, inputs=None, outputs=None) -> "LinearModel":
        """Sub-model restricted to the named channels."""
        ii = list(range(self.n_inputs)) if inputs is None else [self._in(c) for c in inputs]
        oo = list(range(self.n_outputs)) if outputs is None else [self._out(c) for c in outputs]
        return LinearModel(self.A, self.B[:, ii], self.C[oo], self.D[np.ix_(oo, ii)],
                           list(self.state_names), [self.input_names[i] for i in ii],
                           [self.output_names[i] for i in oo])

    def scaled_outputs(self, factor) -> "LinearModel":
        return replace(self, C=self.C * factor, D=self.D * factor)

    def to_dict(self):
        return {"A": self.A.tolist(), "B": self.B.tolist(), "C": self.C.tolist(),
                "D": self.D.tolist(), "state_names": list(self.state_names),
                "input_names": list(self.input_names), "output_names": list(self.output_names)}

    @classmethod
    def from_dict(cls, d):
        n = len(d.get("A", []))
        D = np.asarray(d["D"], dtype=float)
        A = np.asarray(d["A"], dtype=float).reshape(n, n)
        return cls(A, np.asarray(d["B"], float).reshape(n, D.shape[1]),
                   np.asarray(d["C"], float).reshape(D.shape[0], n), D,
                   list(d.get("state_names", [])), list(d.get("input_names", [])),
                   list(d.get("output_names", [])))


def append_washout(lm: LinearModel, outputs, T_w: float = 2.0) -> LinearModel:
    """Replace the named outputs by their washout-filtered versions
    ``s T_w / (1 + s T_w)``; one filter state per output."""
    idx = [lm._out(o) for o in outputs]
    n, k = lm.n_states, len(idx)
    A = np.zeros((n + k, n + k))
    A[:n, :n] = lm.A
    B = np.vstack([lm.B, lm.D[idx] / T_w])
    C = np.hstack([lm.C, np.zeros((lm.n_outputs, k))])
    for j, o in enumerate(idx):
        A[n + j, :n] = lm.C[o] / T_w
        A[n + j, n + j] = -1.0 / T_w
        C[o, n + j] = -1.0
    names = list(lm.state_names) + [f"washout[{lm.output_names[o]}]" for o in idx]
    out_names = list(lm.output_names)
    for o in idx:
        out_names[o] = f"{out_names[o]}~"
    return LinearModel(A, B, C, lm.D.copy(), names, list(lm.input_names), out_names)


def linearize_function(f, g, x0, u0, eps=1e-6):
    """Central-difference Jacobians of ``f(x, u)`` and ``g(x, u)``.

    Each state/input is stepped by ``eps * max(1, |value|)``.
    """
    x0 = np.asarray(x0, dtype=float)
    u0 = np.asarray(u0, dtype=float)
    n, m = x0.size, u0.size
    f0, y0 = f(x0, u0), g(x0, u0)
    A = np.empty((f0.size, n))
    C = np.empty((y0.size, n))
    for i in range(n):
        h = eps * max(1.0, abs(x0[i]))
        xp = x0.copy()
        xm = x0.copy()
        xp[i] += h
        xm[i] -= h
        A[:, i] = (f(xp, u0) - f(xm, u0)) / (2 * h)
        C[:, i] = (g(xp, u0) - g(xm, u0)) / (2 * h)
    B = np.empty((f0.size, m))
    D = np.empty((y0.size, m))
    for j in range(m):
        h = eps * max(1.0, abs(u0[j]))
        up = u0.copy()
        um = u0.copy()
        up[j] += h
        um[j] -= h
        B[:, j] = (f(x0, up) - f(x0, um)) / (2 * h)
        D[:, j] = (g(x0, up) - g(x0, um)) / (2 * h)
    return A, B, C, D


def linearize(model, x0=None, inputs=None, outputs=None, eps=1e-6, washout=None,
              washout_T=2.0, tol=1e-6) -> LinearModel:
    """Linear model of an assembled system about an operating point.

    Parameters
    ----------
    model : SystemModel (initialised)
    inputs, outputs : channel names; default all
    washout : output names to pass through a washout filter
    """
    from ..system import evaluate_derivative, evaluate_outputs

    x0 = model.x0 if x0 is None else np.asarray(x0, dtype=float)
    u0 = model.u0
    res = np.max(np.abs(evaluate_derivative(model, x0, u0)))
    if res > tol:
        raise NotAtEquilibrium(f"||f(x0)||_inf = {res:.3e} exceeds {tol:.1e}")
    in_names = list(model.input_names) if inputs is None else list(inputs)
    out_names = list(model.output_names) if outputs is None else list(outputs)
    ii = [model.input_index(c) for c in in_names]
    oo = [model.output_index(c) for c in out_names]

    def f(x, us):
        u = u0.copy()
        u[ii] = us
        return evaluate_derivative(model, x, u)

    def g(x, us):
        u = u0.copy()
        u[ii] = us
        return evaluate_outputs(model, x, u)[oo]

    A, B, C, D = linearize_function(f, g, x0, u0[ii], eps)
    lm = LinearModel(A, B, C, D, list(model.state_names), in_names, out_names)
    if washout:
        lm = append_washout(lm, washout, washout_T)
    return lm
