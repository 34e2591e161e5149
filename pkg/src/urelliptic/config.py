"""Experiment configuration: one JSON document with a block per module.

Parsing is strict.  Unknown keys, wrong types and out-of-range ratios raise
``ConfigInvalid`` carrying the dotted path of the offending field (for
example ``stopping.delta``).
"""
from __future__ import annotations

import dataclasses
import json
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigInvalid
from .geometry import KINDS

OPERATOR_KINDS = ("identity", "constant", "perturbed", "random")
STAGES = ("generate", "solve", "diagnose", "corona", "acf", "classify", "report")
CHECK_OPS = ("<", "<=", "==", ">=", ">")


@dataclass
class FixtureConfig:
    kind: str = "hyperplane"
    params: dict = field(default_factory=dict)
    depth: int = 5


@dataclass
class OperatorConfig:
    kind: str = "identity"
    params: dict = field(default_factory=dict)
    seed: int = 0


@dataclass
class StoppingConfig:
    A: float = 10.0
    delta: float = 0.1
    eps_pole: float = 0.2
    budget: int = 500


@dataclass
class EstimatesConfig:
    alpha: float = 2.0
    radii: list = field(default_factory=lambda: [0.125, 0.25, 0.5])
    balls: int = 20
    window: list | None = None


@dataclass
class AcfConfig:
    pair: str = "half_plane"
    cells: int = 512
    r_min: float = 0.1
    r_max: float = 0.5
    n_radii: int = 9
    c: float = 64.0
    perturbation: float = 0.0
    angle: float = math.pi / 2
    fh_pairs: int = 50


@dataclass
class RectifiabilityConfig:
    eps: float = 0.05
    K0: float = 4.0
    kappa: float = 0.1
    generations: list = field(default_factory=lambda: [1, 3])
    max_cubes: int = 64
    wts: bool = False


@dataclass
class Check:
    metric: str
    op: str
    value: float


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    resolution: int = 256
    fixture: FixtureConfig = field(default_factory=FixtureConfig)
    operator: OperatorConfig = field(default_factory=OperatorConfig)
    stopping: StoppingConfig = field(default_factory=StoppingConfig)
    estimates: EstimatesConfig = field(default_factory=EstimatesConfig)
    acf: AcfConfig = field(default_factory=AcfConfig)
    rectifiability: RectifiabilityConfig = field(default_factory=RectifiabilityConfig)
    stages: list = field(default_factory=lambda: list(STAGES))
    checks: list = field(default_factory=list)
    output: str = "out"
    cache: str = ".urelliptic-cache"

    @property
    def h(self) -> float:
        return 1.0 / self.resolution

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _type_ok(value, tp) -> bool:
    origin = typing.get_origin(tp)
    if origin is typing.Union or (origin is not None and str(origin) == "<class 'types.UnionType'>"):
        return any(_type_ok(value, a) for a in typing.get_args(tp))
    if tp is type(None):
        return value is None
    if tp is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if tp is int:
        return isinstance(value, int) and not isinstance(value, bool)
    if origin is not None:
        return isinstance(value, origin)
    return isinstance(value, tp)


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigInvalid(path or "<root>", "expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigInvalid(f"{path}.{key}" if path else key, "unknown key")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        sub = f"{path}.{f.name}" if path else f.name
        tp = hints[f.name]
        val = data[f.name]
        if dataclasses.is_dataclass(tp):
            kwargs[f.name] = _build(tp, val, sub)
            continue
        if not _type_ok(val, tp):
            raise ConfigInvalid(sub, f"expected {getattr(tp, '__name__', tp)}, got {type(val).__name__}")
        kwargs[f.name] = float(val) if tp is float else val
    return cls(**kwargs)


def _require(cond: bool, path: str, msg: str):
    if not cond:
        raise ConfigInvalid(path, msg)


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    r = cfg.resolution
    _require(r >= 8 and r & (r - 1) == 0, "resolution", "must be a power of 2 (>= 8)")
    _require(cfg.seed >= 0, "seed", "must be a non-negative integer")
    _require(cfg.fixture.kind in KINDS, "fixture.kind", f"must be one of {', '.join(KINDS)}")
    _require(cfg.fixture.depth >= 1, "fixture.depth", "must be >= 1")
    _require(cfg.operator.kind in OPERATOR_KINDS, "operator.kind", f"must be one of {', '.join(OPERATOR_KINDS)}")
    st = cfg.stopping
    _require(st.A > 1, "stopping.A", "must exceed 1")
    _require(0 <= st.delta < 1, "stopping.delta", "must lie in [0, 1)")
    _require(st.eps_pole > 0, "stopping.eps_pole", "must be positive")
    _require(st.budget >= 1, "stopping.budget", "must be >= 1")
    es = cfg.estimates
    _require(es.alpha >= 2, "estimates.alpha", "cone aperture must be >= 2")
    _require(all(isinstance(x, (int, float)) and x > 0 for x in es.radii), "estimates.radii", "must be positive numbers")
    _require(es.balls >= 1, "estimates.balls", "must be >= 1")
    ac = cfg.acf
    _require(ac.pair in ("half_plane", "cones"), "acf.pair", "must be 'half_plane' or 'cones'")
    _require(ac.cells >= 16, "acf.cells", "must be >= 16")
    _require(0 < ac.r_min < ac.r_max, "acf.r_min", "need 0 < r_min < r_max")
    _require(ac.r_max <= 0.5, "acf.r_max", "balls must stay inside the unit ACF grid (r_max <= 0.5)")
    _require(ac.n_radii >= 2, "acf.n_radii", "must be >= 2")
    _require(ac.c > 0, "acf.c", "must be positive")
    _require(0 < ac.angle < 2 * math.pi, "acf.angle", "must lie in (0, 2 pi)")
    _require(ac.perturbation >= 0, "acf.perturbation", "must be non-negative")
    _require(ac.fh_pairs >= 0, "acf.fh_pairs", "must be non-negative")
    rc = cfg.rectifiability
    _require(0 < rc.eps < 1, "rectifiability.eps", "must lie in (0, 1)")
    _require(rc.K0 > 1, "rectifiability.K0", "must exceed 1")
    _require(rc.kappa > 0, "rectifiability.kappa", "must be positive")
    g = rc.generations
    _require(len(g) == 2 and all(isinstance(x, int) for x in g) and 0 <= g[0] <= g[1],
             "rectifiability.generations", "must be [first, last] with 0 <= first <= last")
    _require(rc.max_cubes >= 1, "rectifiability.max_cubes", "must be >= 1")
    for i, s in enumerate(cfg.stages):
        _require(s in STAGES, f"stages[{i}]", f"unknown stage '{s}'")
    checks = []
    for i, c in enumerate(cfg.checks):
        chk = c if isinstance(c, Check) else _build(Check, c, f"checks[{i}]")
        _require(chk.op in CHECK_OPS, f"checks[{i}].op", f"must be one of {' '.join(CHECK_OPS)}")
        checks.append(chk)
    cfg.checks = checks
    return cfg


def parse_config(data: dict) -> ExperimentConfig:
    return validate(_build(ExperimentConfig, data, ""))


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigInvalid("<file>", f"{path} not found") from None
    except json.JSONDecodeError as e:
        raise ConfigInvalid("<file>", f"invalid JSON: {e}") from None
    return parse_config(data)
