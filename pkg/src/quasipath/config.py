"""Flat ``key = value`` experiment configuration with dotted section names.

Values may be numbers, comma-separated lists, ``true``/``false``, ``auto``,
bare strings, or arithmetic in ``pi`` (``pi/2``, ``3*pi/4``). Lines starting
with ``#`` are comments.
"""
from __future__ import annotations

import ast
import math
import operator
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

_OPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
    ast.USub: operator.neg,
    ast.UAdd: operator.pos,
}
_NAMES = {"pi": math.pi, "e": math.e}


def _eval_num(node):
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return node.value
    if isinstance(node, ast.Name) and node.id in _NAMES:
        return _NAMES[node.id]
    if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
        return _OPS[type(node.op)](_eval_num(node.left), _eval_num(node.right))
    if isinstance(node, ast.UnaryOp) and type(node.op) in _OPS:
        return _OPS[type(node.op)](_eval_num(node.operand))
    raise ValueError("not arithmetic")


def parse_scalar(text):
    t = text.strip()
    low = t.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("auto", "none"):
        return low
    try:
        v = _eval_num(ast.parse(t, mode="eval").body)
    except (SyntaxError, ValueError, ZeroDivisionError):
        return t
    return v


def parse_value(text):
    if not text.strip():
        return []
    if "," in text:
        return [parse_scalar(p) for p in text.split(",") if p.strip()]
    return parse_scalar(text)


def parse_text(text):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = parse_value(val)
    return out


def _listify(v):
    return v if isinstance(v, list) else [v]


@dataclass
class ExperimentConfig:
    system: dict = field(default_factory=lambda: {"name": "ring", "kappa": 1.0})
    delta_list: list = field(default_factory=lambda: [0.4, 0.2, 0.1, 0.05])
    C0: object = "auto"
    delta1: float = math.pi / 2
    delta2: float = math.pi / 2
    manifold_nodes: int = 512
    manifold_tol: float = 1e-6
    manifold_max_steps: int = 20000
    mam_N: int = 2000
    mam_T_factor: object = "auto"
    mam_gtol: float = 1e-8
    mam_max_iters: int = 50000
    mam_end: str = "face"
    mam_interior: list = field(default_factory=lambda: [-0.5, 0.5, 0.75])
    mam_target_offset: object = "auto"
    theorem_expect: str = "slope"
    slope_threshold: float = 2.0
    floor: float = 1e-6
    escape_delta: object = "auto"
    escape_epsilons: list = field(default_factory=lambda: [0.15, 0.10])
    escape_samples: int = 500
    escape_dt: object = "auto"
    escape_max_time: float = 1e4
    escape_workers: int = 1
    escape_start_offset: float = 0.0
    lyapunov_horizon: object = "auto"
    lyapunov_seeds: int = 16
    master_seed: int = 0
    output: str = "out"

    _KEYS = {
        "delta_list": "delta_list",
        "tube.C0": "C0",
        "tube.delta1": "delta1",
        "tube.delta2": "delta2",
        "manifold.nodes": "manifold_nodes",
        "manifold.tol": "manifold_tol",
        "manifold.max_steps": "manifold_max_steps",
        "mam.N": "mam_N",
        "mam.T_factor": "mam_T_factor",
        "mam.gtol": "mam_gtol",
        "mam.max_iters": "mam_max_iters",
        "mam.end": "mam_end",
        "mam.interior": "mam_interior",
        "mam.target_offset": "mam_target_offset",
        "theorem.expect": "theorem_expect",
        "theorem.slope_threshold": "slope_threshold",
        "theorem.floor": "floor",
        "escape.delta": "escape_delta",
        "escape.epsilons": "escape_epsilons",
        "escape.n_samples": "escape_samples",
        "escape.dt": "escape_dt",
        "escape.max_time": "escape_max_time",
        "escape.workers": "escape_workers",
        "escape.start_offset": "escape_start_offset",
        "lyapunov.horizon": "lyapunov_horizon",
        "lyapunov.seeds": "lyapunov_seeds",
        "master_seed": "master_seed",
        "output": "output",
    }

    @classmethod
    def from_dict(cls, d):
        cfg = cls()
        system = {}
        for key, val in d.items():
            if key.startswith("system."):
                system[key[len("system."):]] = val
            elif key in cls._KEYS:
                setattr(cfg, cls._KEYS[key], val)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        if system:
            if "name" not in system:
                raise ConfigError("system.name is required when system parameters are given")
            cfg.system = system
        for name in ("delta_list", "escape_epsilons", "mam_interior"):
            setattr(cfg, name, _listify(getattr(cfg, name)))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(parse_text(text))

    def validate(self):
        if len(self.delta_list) == 0:
            raise ConfigError("delta_list is empty")
        if any(not isinstance(x, (int, float)) or x <= 0 for x in self.delta_list):
            raise ConfigError("delta_list entries must be positive numbers")
        if any(b >= a for a, b in zip(self.delta_list, self.delta_list[1:])):
            raise ConfigError("delta_list must be strictly decreasing")
        for name in ("manifold_tol", "mam_gtol", "delta1", "delta2", "floor", "escape_max_time"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or v <= 0:
                raise ConfigError(f"{name} must be a positive number")
        if self.C0 != "auto" and (not isinstance(self.C0, (int, float)) or self.C0 <= 0):
            raise ConfigError("tube.C0 must be 'auto' or positive")
        if self.mam_end not in ("face", "point"):
            raise ConfigError("mam.end must be 'face' or 'point'")
        if self.theorem_expect not in ("slope", "floor"):
            raise ConfigError("theorem.expect must be 'slope' or 'floor'")
        if any(not isinstance(e, (int, float)) or e < 0 for e in self.escape_epsilons):
            raise ConfigError("escape.epsilons must be nonnegative numbers")
        for name in ("manifold_nodes", "mam_N", "mam_max_iters", "escape_samples", "master_seed"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool):
                raise ConfigError(f"{name} must be an integer")
            setattr(self, name, int(v))

    def with_seed(self, seed):
        if seed is not None:
            self.master_seed = int(seed)
        return self
