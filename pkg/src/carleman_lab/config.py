"""Scenario configuration: strict TOML parsing into dataclasses, defaults, and a content hash."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


class ParseError(ConfigError):
    pass


class ValidationError(ConfigError):
    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


Auto = "auto"


def _default_body():
    return {"kind": "ellipse", "semi_axes": [1.0, 0.9], "center": [0.0, 0.0]}


def _default_outer():
    return {"kind": "disk", "radius": 1.2, "center": [0.0, 0.0]}


@dataclass
class GeometryConfig:
    body: dict = field(default_factory=_default_body)
    outer: dict = field(default_factory=_default_outer)
    x1: list = field(default_factory=lambda: [-0.3, 0.0])
    x2: list = field(default_factory=lambda: [0.3, 0.0])
    eps: Any = Auto            # float, or auto = eps_fraction * eps_max
    eps_fraction: float = 0.9
    eps1_fraction: float = 0.5
    sample_density: int = 64


@dataclass
class MediumConfig:
    a1: dict = field(default_factory=lambda: {"kind": "angular", "c0": 1.2, "amp": 0.02, "n": 1,
                                              "center": [0.0, 0.0], "radius": 0.9})
    a2: dict = field(default_factory=lambda: {"kind": "constant", "value": 1.0})
    alpha_lo: float = 1.0
    alpha_hi: float = 1.23
    rho: float = 0.8
    m: float = 1.0
    n_grid: int = 200
    n_interface: int = 512


@dataclass
class WeightsConfig:
    gamma: Any = Auto          # float or auto = midpoint of the admissible interval
    M1: Any = Auto             # float or auto = gamma
    eps_tilde: Any = Auto      # float or auto = 0.5 eps^2 / diam^2
    blend_cells: float = 4.0
    T: Any = Auto              # float or auto = T_factor * T0
    T_factor: float = 1.05
    gamma_plus_samples: int = 1024


@dataclass
class SolverConfig:
    n_cells: int = 128
    cfl_safety: float = 0.9


@dataclass
class SolveConfig:
    T: Any = Auto              # float or auto = scenario horizon
    u0: float = 1.0
    potential: dict = field(default_factory=lambda: {"c0": 0.0, "bumps": [[0.4, 0.25, 0.1, 0.3]]})
    trace_stride: int = 10


@dataclass
class VerifierConfig:
    n_fields: int = 20
    seed: int = 1
    s_min: float = 1.0
    s_max: float = 200.0
    n_s: int = 16
    time_nodes: int = 512
    theta: bool = True
    raw: bool = True
    potential: dict = field(default_factory=lambda: {"c0": 0.0, "bumps": [[0.5, 0.2, 0.1, 0.3]]})
    n_interface: int = 256
    refine_check: bool = False


@dataclass
class StabilityConfig:
    n_perturbations: int = 20
    amplitude: float = 0.1
    max_bumps: int = 5
    seed: int = 7
    delta: float = 0.5
    u0: float = 1.0
    p: dict = field(default_factory=lambda: {"c0": 0.0, "bumps": []})
    tiny_arc: float = 0.2      # angular width (radians) of the shrunk observation arc
    n_cells_refined: int = 0   # 0 disables the refinement rerun


@dataclass
class ReconstructConfig:
    iterations: int = 200
    n_cells: int = 48
    q_true: dict = field(default_factory=lambda: {"c0": 0.0, "bumps": [[0.4, 0.25, 0.1, 0.3]]})
    p0: dict = field(default_factory=lambda: {"c0": 0.0, "bumps": []})
    step: Any = Auto           # float or auto = 1 / (power-iteration estimate of the Gauss-Newton norm)
    step_scale: float = 1.0
    seed: int = 3


@dataclass
class OutputConfig:
    dir: str = "out"
    snapshot_stride: int = 0


@dataclass
class ScenarioConfig:
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    medium: MediumConfig = field(default_factory=MediumConfig)
    weights: WeightsConfig = field(default_factory=WeightsConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    solve: SolveConfig = field(default_factory=SolveConfig)
    verifier: VerifierConfig = field(default_factory=VerifierConfig)
    stability: StabilityConfig = field(default_factory=StabilityConfig)
    reconstruct: ReconstructConfig = field(default_factory=ReconstructConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self):
        return dataclasses.asdict(self)

    def hash(self):
        """sha256 over the canonical JSON of the physics sections (output location excluded)."""
        d = self.to_dict()
        d.pop("output")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"), default=float)
        return hashlib.sha256(blob.encode()).hexdigest()

    def replace(self, **sections):
        return dataclasses.replace(self, **sections)


_SCALARS = (int, float, bool, str)


def _coerce(path, default, value):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ValidationError(path, f"expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValidationError(path, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(path, f"expected a number, got {value!r}")
        return float(value)
    if default == Auto:
        if value == Auto:
            return value
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(path, f"expected a number or \"auto\", got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ValidationError(path, f"expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ValidationError(path, f"expected an array, got {value!r}")
        return value
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise ValidationError(path, f"expected a table, got {value!r}")
        return value
    return value


def _fill(cls, data, path):
    if not isinstance(data, dict):
        raise ValidationError(path, "expected a table")
    inst = cls()
    names = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in data.items():
        p = f"{path}.{key}" if path else key
        if key not in names:
            raise ValidationError(p, "unknown key")
        cur = getattr(inst, key)
        if dataclasses.is_dataclass(cur):
            setattr(inst, key, _fill(type(cur), value, p))
        else:
            setattr(inst, key, _coerce(p, cur, value))
    return inst


def from_dict(data: dict) -> ScenarioConfig:
    cfg = _fill(ScenarioConfig, data, "")
    validate(cfg)
    return cfg


def parse_config(path) -> ScenarioConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return from_dict(data)


def parse_text(text: str) -> ScenarioConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(str(exc)) from exc
    return from_dict(data)


def _point(path, v):
    if not (isinstance(v, list) and len(v) == 2 and all(isinstance(c, (int, float)) for c in v)):
        raise ValidationError(path, f"expected a point [x, y], got {v!r}")


def _positive(path, v, strict=True):
    if (strict and not v > 0) or (not strict and v < 0):
        raise ValidationError(path, f"must be {'positive' if strict else 'nonnegative'}, got {v!r}")


def _potential_spec(path, spec):
    extra = set(spec) - {"c0", "bumps", "clip"}
    if extra:
        raise ValidationError(f"{path}.{sorted(extra)[0]}", "unknown key")
    for i, b in enumerate(spec.get("bumps", [])):
        if not (isinstance(b, list) and len(b) == 4):
            raise ValidationError(f"{path}.bumps[{i}]", "expected [amplitude, x, y, width]")


def validate(cfg: ScenarioConfig):
    """Structural checks that need no geometry; constraint checks happen when the scenario is built."""
    from .geometry import GeometryError, make_body
    from .medium import MediumError, field_from_spec

    g = cfg.geometry
    try:
        make_body(g.body)
    except (GeometryError, KeyError, TypeError, ValueError) as exc:
        raise ValidationError("geometry.body", str(exc)) from exc
    if g.outer.get("kind", "disk") not in ("disk", "ellipse"):
        raise ValidationError("geometry.outer.kind", "must be 'disk' or 'ellipse'")
    extra = set(g.outer) - {"kind", "radius", "semi_axes", "center"}
    if extra:
        raise ValidationError(f"geometry.outer.{sorted(extra)[0]}", "unknown key")
    _point("geometry.x1", g.x1)
    _point("geometry.x2", g.x2)
    if g.eps != Auto:
        _positive("geometry.eps", g.eps)
    if not 0 < g.eps_fraction < 1:
        raise ValidationError("geometry.eps_fraction", "must lie in (0, 1)")
    if not 0 < g.eps1_fraction < 1:
        raise ValidationError("geometry.eps1_fraction", "must lie in (0, 1)")
    if g.sample_density < 64:
        raise ValidationError("geometry.sample_density", "must be at least 64")
    m = cfg.medium
    for key in ("a1", "a2"):
        try:
            field_from_spec(getattr(m, key))
        except (MediumError, KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"medium.{key}", str(exc)) from exc
    _positive("medium.alpha_lo", m.alpha_lo)
    if m.alpha_hi < m.alpha_lo:
        raise ValidationError("medium.alpha_hi", "must be at least alpha_lo")
    if not 0 < m.rho <= 1:
        raise ValidationError("medium.rho", "must lie in (0, 1]")
    _positive("medium.m", m.m, strict=False)
    w = cfg.weights
    for key in ("gamma", "M1", "eps_tilde", "T"):
        v = getattr(w, key)
        if v != Auto:
            _positive(f"weights.{key}", v)
    _positive("weights.blend_cells", w.blend_cells)
    if w.T_factor <= 1:
        raise ValidationError("weights.T_factor", "must exceed 1")
    s = cfg.solver
    if s.n_cells < 8:
        raise ValidationError("solver.n_cells", "must be at least 8")
    if not 0 < s.cfl_safety <= 1:
        raise ValidationError("solver.cfl_safety", "must lie in (0, 1]")
    sv = cfg.solve
    if sv.T != Auto:
        _positive("solve.T", sv.T)
    _potential_spec("solve.potential", sv.potential)
    _positive("solve.trace_stride", sv.trace_stride)
    v = cfg.verifier
    if v.n_s < 8:
        raise ValidationError("verifier.n_s", "the s grid needs at least 8 points")
    if not 0 < v.s_min < v.s_max:
        raise ValidationError("verifier.s_max", "need 0 < s_min < s_max")
    _positive("verifier.n_fields", v.n_fields, strict=False)
    _positive("verifier.time_nodes", v.time_nodes)
    _potential_spec("verifier.potential", v.potential)
    st = cfg.stability
    _potential_spec("stability.p", st.p)
    _positive("stability.amplitude", st.amplitude)
    _positive("stability.delta", st.delta, strict=False)
    if not 1 <= st.max_bumps:
        raise ValidationError("stability.max_bumps", "must be at least 1")
    if not 0 < st.tiny_arc < 6.283185307179586:
        raise ValidationError("stability.tiny_arc", "must lie in (0, 2 pi)")
    r = cfg.reconstruct
    _potential_spec("reconstruct.q_true", r.q_true)
    _potential_spec("reconstruct.p0", r.p0)
    _positive("reconstruct.iterations", r.iterations, strict=False)
    if r.step != Auto:
        _positive("reconstruct.step", r.step)
    if cfg.output.snapshot_stride < 0:
        raise ValidationError("output.snapshot_stride", "must be nonnegative")
    return cfg


def default_config() -> ScenarioConfig:
    return validate(ScenarioConfig())
