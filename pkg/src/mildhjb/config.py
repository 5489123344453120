"""TOML run configuration: ``[model] [cost] [hamiltonian] [solver] [simulate] [verify]``."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError, SmoothingHypothesisError
from .gaussian_semigroup import QuadratureRule
from .hamiltonian import HamiltonianSpec
from .hjb_solver import SolverConfig
from .spectral_model import CostSpec, build_heat_model, build_wave_model

SECTIONS = ("model", "cost", "hamiltonian", "solver", "simulate", "verify")

_MODEL_KEYS = {
    "heat": {"kind", "n_modes", "n_proj", "beta", "length"},
    "wave": {"kind", "n_modes", "n_proj", "c", "sigma", "length"},
}
_COST_KEYS = {"kind", "amplitude", "weights", "phase", "matrix", "offset"}
_HAM_KEYS = {"control_kind", "radius", "dim", "lower", "upper", "points", "l1_kind",
             "l1_coeff", "l1_table", "search_resolution", "nisio_M"}
_SOLVER_KEYS = {"lambda", "gamma", "t_max", "n_head", "n_panel", "panel_ratio", "box", "n_grid",
                "k_sigma", "tau_pic", "max_iter", "nu", "tau_out", "max_outer", "theta",
                "theta_contr", "quad_kind", "quad_n", "budget_tol", "window", "window_margin",
                "eps_reg"}
_SIM_KEYS = {"x0", "n_paths", "dt", "horizon", "target_ci", "policies"}
_VERIFY_KEYS = {"checks", "linear_mu", "linear_nu", "linear_tol", "nonlinear_tol",
                "lipschitz_pairs", "lipschitz_tol", "lipschitz_tol_continuation", "nisio_pairs",
                "nisio_t", "nisio_eps", "nisio_tol", "nisio_nodes", "nisio_resolution",
                "concavity_samples"}


@dataclass(frozen=True)
class RunConfig:
    model: dict
    cost: dict = field(default_factory=dict)
    hamiltonian: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    simulate: dict = field(default_factory=dict)
    verify: dict = field(default_factory=dict)
    seed: int = 0

    def to_dict(self):
        return {"seed": self.seed, **{s: getattr(self, s) for s in SECTIONS}}

    @property
    def digest(self):
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()

    def with_overrides(self, seed=None, **solver):
        merged = {**self.solver, **{k: v for k, v in solver.items() if v is not None}}
        return RunConfig(self.model, self.cost, self.hamiltonian, merged, self.simulate,
                         self.verify, self.seed if seed is None else int(seed))


def _check_keys(section, data, allowed):
    extra = set(data) - allowed
    if extra:
        raise ConfigError(f"[{section}] has unknown keys: {sorted(extra)}")


def parse_config(data):
    """Validate a parsed mapping and return a :class:`RunConfig`."""
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a table")
    top = set(data) - set(SECTIONS) - {"seed"}
    if top:
        raise ConfigError(f"unknown top-level entries: {sorted(top)}")
    if "model" not in data:
        raise ConfigError("configuration needs a [model] section")
    model = dict(data["model"])
    kind = model.get("kind")
    if kind not in _MODEL_KEYS:
        raise ConfigError(f"model kind must be 'heat' or 'wave', got {kind!r}")
    _check_keys("model", model, _MODEL_KEYS[kind])
    sections = {s: dict(data.get(s, {})) for s in SECTIONS[1:]}
    for name, keys in zip(SECTIONS[1:], (_COST_KEYS, _HAM_KEYS, _SOLVER_KEYS, _SIM_KEYS, _VERIFY_KEYS)):
        _check_keys(name, sections[name], keys)
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a nonnegative integer")
    cfg = RunConfig(model, seed=seed, **sections)
    build_objects(cfg)
    return cfg


def load_config(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return parse_config(data)


def build_model(section):
    m = dict(section)
    kind = m.pop("kind")
    length = m.get("length", math.pi)
    try:
        if kind == "heat":
            return build_heat_model(int(m.get("n_modes", 1)), length, float(m.get("beta", 0.0)),
                                    int(m.get("n_proj", 1)))
        return build_wave_model(int(m.get("n_modes", 1)), float(m.get("c", 1.0)),
                                m.get("sigma", 1.0), int(m.get("n_proj", 1)), length)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, (ConfigError, SmoothingHypothesisError)):
            raise
        raise ConfigError(f"invalid [model]: {exc}") from exc


def build_cost(section, n_proj):
    c = dict(section) or {"kind": "cosine"}
    c.setdefault("kind", "cosine")
    if c["kind"] == "cosine":
        c.setdefault("weights", [1.0] + [0.0] * (n_proj - 1))
        if len(c["weights"]) != n_proj:
            raise ConfigError(f"[cost] weights need {n_proj} entries")
    elif c["kind"] == "logistic":
        if "matrix" not in c:
            c["matrix"] = [[float(i == j) for j in range(n_proj)] for i in range(n_proj)]
        if len(c["matrix"]) != n_proj:
            raise ConfigError(f"[cost] matrix must be {n_proj}x{n_proj}")
    try:
        return CostSpec(**c)
    except TypeError as exc:
        raise ConfigError(f"invalid [cost]: {exc}") from exc


def build_hamiltonian(section, d_control):
    h = dict(section)
    h.setdefault("dim", d_control)
    for key in ("lower", "upper"):
        if key in h:
            h[key] = tuple(h[key])
    if "points" in h:
        h["points"] = tuple(tuple(p) if isinstance(p, list) else (p,) for p in h["points"])
    if "l1_table" in h:
        h["l1_table"] = tuple(h["l1_table"])
    try:
        return HamiltonianSpec(**h)
    except TypeError as exc:
        raise ConfigError(f"invalid [hamiltonian]: {exc}") from exc


def build_solver(section, seed=0):
    s = dict(section)
    if "lambda" in s:
        s["lam"] = s.pop("lambda")
    kind, n = s.pop("quad_kind", None), s.pop("quad_n", None)
    if kind is not None or n is not None:
        default = QuadratureRule()
        s["quad"] = QuadratureRule(kind or default.kind, int(n or default.n), seed)
    for key in ("box", "window"):
        if key in s and not isinstance(s[key], (int, float)):
            s[key] = tuple(s[key])
    try:
        return SolverConfig(**s)
    except TypeError as exc:
        raise ConfigError(f"invalid [solver]: {exc}") from exc


def build_objects(config):
    """``(model, cost, hamiltonian spec, solver config)`` from a :class:`RunConfig`."""
    model = build_model(config.model)
    cost = build_cost(config.cost, model.n_proj)
    if cost.dim != model.n_proj:
        raise ConfigError(f"cost acts on {cost.dim} coordinates, model projects {model.n_proj}")
    spec = build_hamiltonian(config.hamiltonian, model.d_control)
    if spec.d_control != model.d_control:
        raise ConfigError(f"control dimension {spec.d_control} does not match model {model.d_control}")
    cfg = build_solver(config.solver, config.seed)
    return model, cost, spec, cfg
