"""System and scenario documents (YAML) and their validation."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError

SCHEMA_VERSION = 1


def _num(d, key, loc, default=None, positive=False, nonneg=False):
    if key not in d:
        if default is None:
            raise ConfigError(f"missing required field '{key}'", loc)
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"field '{key}' must be a number, got {v!r}", f"{loc}.{key}")
    v = float(v)
    if not np.isfinite(v):
        raise ConfigError(f"field '{key}' must be finite", f"{loc}.{key}")
    if positive and v <= 0:
        raise ConfigError(f"field '{key}' must be positive", f"{loc}.{key}")
    if nonneg and v < 0:
        raise ConfigError(f"field '{key}' must be non-negative", f"{loc}.{key}")
    return v


def _bus(d, key, loc, buses):
    if key not in d:
        raise ConfigError(f"missing required field '{key}'", loc)
    b = d[key]
    if b not in buses:
        raise ConfigError(f"unknown bus {b!r}", f"{loc}.{key}")
    return b


@dataclass
class SystemConfig:
    """Validated system document.  ``raw`` keeps the original mapping."""

    raw: dict
    base_mva: float
    frequency: float
    buses: list
    lines: list
    grounding: list
    loads: list
    dc_loads: list
    generators: list
    ibrs: list
    tie_line: dict | None = None
    zero_sequence: dict = field(default_factory=dict)
    transformers: list = field(default_factory=list)
    shunts: list = field(default_factory=list)

    @property
    def omega_s(self):
        return 2 * np.pi * self.frequency

    def digest(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_pll_bandwidth(self, bw_hz: float) -> "SystemConfig":
        raw = copy.deepcopy(self.raw)
        for ibr in raw.get("ibrs", []):
            ibr.pop("kp_pll", None)
            ibr.pop("ki_pll", None)
            ibr["pll_bw"] = float(bw_hz)
        return parse_system(raw)

    def without_ibrs(self) -> "SystemConfig":
        raw = copy.deepcopy(self.raw)
        raw["ibrs"] = []
        return parse_system(raw)

    def updated(self, patch: dict) -> "SystemConfig":
        """Return a copy with ``patch`` merged into every IBR entry under
        ``patch['ibrs']`` (a mapping) and top-level keys otherwise."""
        raw = copy.deepcopy(self.raw)
        for key, val in patch.items():
            if key == "ibrs" and isinstance(val, dict):
                for ibr in raw["ibrs"]:
                    ibr.update(val)
            else:
                raw[key] = val
        return parse_system(raw)


def parse_system(raw: dict) -> SystemConfig:
    if not isinstance(raw, dict):
        raise ConfigError("system document must be a mapping", "<root>")
    version = raw.get("version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema version {version}", "version")
    base = _num(raw, "base_mva", "<root>", default=100.0, positive=True)
    freq = _num(raw, "frequency", "<root>", default=60.0, positive=True)
    buses = raw.get("buses")
    if not isinstance(buses, list) or not buses:
        raise ConfigError("'buses' must be a non-empty list", "buses")
    if len(set(buses)) != len(buses):
        raise ConfigError("duplicate bus ids", "buses")
    names = set()

    def _name(d, loc):
        n = d.get("name")
        if not isinstance(n, str) or not n:
            raise ConfigError("missing 'name'", loc)
        if n in names:
            raise ConfigError(f"duplicate name {n!r}", loc)
        names.add(n)
        return n

    lines = []
    for i, ln in enumerate(raw.get("lines", [])):
        loc = f"lines[{i}]"
        _name(ln, loc)
        _bus(ln, "from", loc, buses)
        _bus(ln, "to", loc, buses)
        if ln["from"] == ln["to"]:
            raise ConfigError("line endpoints coincide", loc)
        _num(ln, "r", loc, nonneg=True)
        _num(ln, "x", loc, positive=True)
        _num(ln, "b", loc, default=0.0, nonneg=True)
        lines.append(ln)
    transformers = []
    for i, tr in enumerate(raw.get("transformers", [])):
        loc = f"transformers[{i}]"
        _name(tr, loc)
        _bus(tr, "from", loc, buses)
        _bus(tr, "to", loc, buses)
        if tr["from"] == tr["to"]:
            raise ConfigError("transformer endpoints coincide", loc)
        _num(tr, "r", loc, nonneg=True)
        _num(tr, "x", loc, positive=True)
        if "r_par" in tr:
            _num(tr, "r_par", loc, positive=True)
        transformers.append(tr)
    shunts = []
    for i, sh in enumerate(raw.get("shunts", [])):
        loc = f"shunts[{i}]"
        _bus(sh, "bus", loc, buses)
        _num(sh, "b", loc, positive=True)
        shunts.append(sh)
    grounding = []
    for i, g in enumerate(raw.get("grounding", [])):
        loc = f"grounding[{i}]"
        _name(g, loc)
        _bus(g, "bus", loc, buses)
        _num(g, "r", loc, nonneg=True)
        _num(g, "x", loc, positive=True)
        if "r_par" in g:
            _num(g, "r_par", loc, positive=True)
        grounding.append(g)
    loads = []
    for i, ld in enumerate(raw.get("loads", [])):
        loc = f"loads[{i}]"
        _name(ld, loc)
        _bus(ld, "bus", loc, buses)
        _num(ld, "p", loc, nonneg=True)
        _num(ld, "q", loc, default=0.0, nonneg=True)
        _num(ld, "qc", loc, default=0.0, nonneg=True)
        loads.append(ld)
    dc_loads = []
    for i, dc in enumerate(raw.get("dc_loads", [])):
        loc = f"dc_loads[{i}]"
        _name(dc, loc)
        _bus(dc, "bus", loc, buses)
        _num(dc, "p", loc, default=0.0, nonneg=True)
        _num(dc, "v_min", loc, default=0.3, nonneg=True)
        dc_loads.append(dc)
    gens = []
    slack = 0
    for i, g in enumerate(raw.get("generators", [])):
        loc = f"generators[{i}]"
        _name(g, loc)
        _bus(g, "bus", loc, buses)
        if g.get("slack"):
            slack += 1
        else:
            _num(g, "p", loc)
        _num(g, "v", loc, positive=True)
        _num(g, "mva", loc, default=base, positive=True)
        m = g.get("machine")
        if not isinstance(m, dict):
            raise ConfigError("missing 'machine' block", loc)
        for k in ("Xd", "Xq", "Xl", "Xd_p", "Xq_p", "Xd_pp", "Xq_pp", "Td0_p", "Tq0_p",
                  "Td0_pp", "Tq0_pp", "H"):
            _num(m, k, f"{loc}.machine", positive=True)
        ex = g.get("exciter")
        if not isinstance(ex, dict):
            raise ConfigError("missing 'exciter' block", loc)
        for k in ("T_F", "T_r", "T_A", "T_E"):
            _num(ex, k, f"{loc}.exciter", positive=True)
        for k in ("K_A", "K_F", "K_E", "A_ex", "B_ex"):
            _num(ex, k, f"{loc}.exciter")
        gens.append(g)
    ibrs = []
    for i, ib in enumerate(raw.get("ibrs", [])):
        loc = f"ibrs[{i}]"
        _name(ib, loc)
        _bus(ib, "bus", loc, buses)
        if ib.get("slack"):
            raise ConfigError("a grid-following inverter cannot be the slack", loc)
        _num(ib, "p", loc)
        _num(ib, "v", loc, positive=True)
        if "kp_pll" in ib or "ki_pll" in ib:
            _num(ib, "kp_pll", loc, positive=True)
            _num(ib, "ki_pll", loc, positive=True)
        else:
            _num(ib, "pll_bw", loc, positive=True)
            _num(ib, "pll_zeta", loc, default=0.707, positive=True)
            _num(ib, "pll_v_nom", loc, default=1.0, positive=True)
        for k in ("tau_m", "tau_f", "I_max", "L"):
            _num(ib, k, loc, positive=True)
        for k in ("R", "R_t", "L_t", "kp_v", "ki_v", "kp_i", "ki_i"):
            _num(ib, k, loc, nonneg=True)
        ibrs.append(ib)
    buses_with_devices = {g["bus"] for g in gens} | {ib["bus"] for ib in ibrs}
    if len(buses_with_devices) < len(gens) + len(ibrs):
        raise ConfigError("at most one source device per bus", "generators/ibrs")
    if gens or ibrs:
        if slack != 1:
            raise ConfigError(f"exactly one slack generator required, found {slack}", "generators")
    tie = raw.get("tie_line")
    if tie is not None:
        _bus(tie, "from", "tie_line", buses)
        _bus(tie, "to", "tie_line", buses)
    return SystemConfig(raw=raw, base_mva=base, frequency=freq, buses=list(buses), lines=lines,
                        grounding=grounding, loads=loads, dc_loads=dc_loads, generators=gens,
                        ibrs=ibrs, tie_line=tie, zero_sequence=raw.get("zero_sequence", {}),
                        transformers=transformers, shunts=shunts)


def read_yaml(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(exc), str(path)) from None
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}:{mark.column + 1}" if mark else str(path)
        raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}", where) from None


def load_system(path) -> SystemConfig:
    return parse_system(read_yaml(path))


def bundled_system(pll_bw: float | None = None) -> SystemConfig:
    """The packaged two-area benchmark, optionally at a given PLL bandwidth."""
    text = resources.files("dpibr.data").joinpath("two_area.yaml").read_text()
    cfg = parse_system(yaml.safe_load(text))
    if pll_bw is not None:
        cfg = cfg.with_pll_bandwidth(pll_bw)
    return cfg


def bundled_path(name: str = "two_area.yaml") -> Path:
    return Path(str(resources.files("dpibr.data").joinpath(name)))
