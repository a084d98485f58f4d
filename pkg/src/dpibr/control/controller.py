"""Damping controller realisation and its structured-text document form."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from ..errors import ConfigError

DOC_KIND = "dpibr-controller"


@dataclass
class Controller:
    """Continuous-time controller ``x' = A x + B y``, ``u = C x + D y``.

    ``y`` is the washout-filtered deviation of the IBR's measured |v_dq|
    (washout ``s T_w/(1 + s T_w)``, realised inside the simulator); ``u`` is
    added to the IBR's damping input (``u_q`` by default).
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    ibr: str
    input: str = "vmag"
    output: str = "u_q"
    washout_T: float = 2.0
    gamma: float = float("nan")
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = self.A.shape[0] if self.A.size else 0
        self.A = self.A.reshape(n, n)
        self.B = np.asarray(self.B, dtype=float).reshape(n, 1)
        self.C = np.asarray(self.C, dtype=float).reshape(1, n)
        self.D = np.asarray(self.D, dtype=float).reshape(1, 1)
        if self.washout_T <= 0:
            raise ValueError("washout time constant must be positive")

    @property
    def order(self):
        return self.A.shape[0]

    @property
    def input_channel(self):
        return f"{self.input}:{self.ibr}"

    @property
    def output_channel(self):
        return f"{self.output}:{self.ibr}"

    def to_dict(self):
        return {"kind": DOC_KIND, "version": 1, "ibr": self.ibr, "input": self.input,
                "output": self.output, "washout_T": float(self.washout_T),
                "gamma": float(self.gamma), "meta": self.meta,
                "A": [[float(v) for v in row] for row in self.A],
                "B": [[float(v) for v in row] for row in self.B],
                "C": [[float(v) for v in row] for row in self.C],
                "D": [[float(v) for v in row] for row in self.D]}

    @classmethod
    def from_dict(cls, d, where="<controller>"):
        if not isinstance(d, dict) or d.get("kind") != DOC_KIND:
            raise ConfigError(f"not a {DOC_KIND} document", where)
        try:
            return cls(A=np.asarray(d["A"], float) if d["A"] else np.zeros((0, 0)),
                       B=np.asarray(d["B"], float) if d["B"] else np.zeros((0, 1)),
                       C=np.asarray(d["C"], float) if d["C"] and d["C"][0] else np.zeros((1, 0)),
                       D=np.asarray(d["D"], float), ibr=str(d["ibr"]),
                       input=d.get("input", "vmag"), output=d.get("output", "u_q"),
                       washout_T=float(d.get("washout_T", 2.0)), gamma=float(d.get("gamma", "nan")),
                       meta=dict(d.get("meta") or {}))
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"malformed controller document: {exc}", where) from None

    def save(self, path):
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))

    @classmethod
    def load(cls, path):
        from ..config import read_yaml
        return cls.from_dict(read_yaml(path), str(path))
