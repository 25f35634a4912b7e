"""Run configuration: schema validation and construction of library objects."""

from __future__ import annotations

import json
from pathlib import Path
from typing import List, Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError, model_validator

from .exceptions import ConfigError
from .models import PRESETS, heat_input_map, make_preset
from .operators import ImpulsiveSystem, Nonlinearity, SemigroupModel
from .quadrature import QuadratureGrid
from .synthesis import DEFAULT_ALPHAS

__all__ = ["RunConfig", "load_config", "build_system", "build_neutral", "build_grid", "Tabulated"]

Matrix = List[List[float]]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ImpulseSpec(_Strict):
    time: float
    B: Matrix
    D: Matrix


class CustomModel(_Strict):
    kind: Literal["dense-generator", "spectral-diagonal", "wave-block"]
    generator: Optional[Matrix] = None
    eigenvalues: Optional[List[float]] = None
    frequencies: Optional[List[float]] = None
    input_map: Matrix
    x0: List[float]
    horizon: float = Field(gt=0)
    impulses: List[ImpulseSpec] = []

    @model_validator(mode="after")
    def _data_present(self):
        need = {"dense-generator": "generator", "spectral-diagonal": "eigenvalues",
                "wave-block": "frequencies"}[self.kind]
        if getattr(self, need) is None:
            raise ValueError(f"{self.kind} models need '{need}'")
        return self


class ModelSection(_Strict):
    preset: Optional[Literal["heat-dirichlet", "heat-neumann", "wave", "rotation-example"]] = None
    N: Optional[int] = Field(default=None, ge=1)
    horizon: Optional[float] = Field(default=None, gt=0)
    impulses: Optional[List[float]] = None
    input_map: Optional[Union[Literal["example", "identity"], Matrix]] = None
    gammas: Optional[List[float]] = None
    x0: Optional[List[float]] = None
    custom: Optional[CustomModel] = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.preset is None) == (self.custom is None):
            raise ValueError("give exactly one of 'preset' or 'custom'")
        return self


class TableSpec(_Strict):
    times: Optional[List[float]] = None
    values: Optional[Matrix] = None
    csv: Optional[str] = None

    @model_validator(mode="after")
    def _source(self):
        if self.csv is None and (self.times is None or self.values is None):
            raise ValueError("a table needs 'csv' or both 'times' and 'values'")
        return self


class NonlinearitySection(_Strict):
    kind: Literal["none", "example53-quadratic", "bounded-sin", "tabulated"] = "none"
    coefficient: float = 0.0
    table: Optional[TableSpec] = None


class NeutralSection(_Strict):
    sigma: Literal["zero", "bounded-demo", "tabulated"] = "zero"
    coefficient: float = 0.0
    delay: float = Field(default=0.25, gt=0)
    history_samples: int = Field(default=64, ge=4)
    table: Optional[TableSpec] = None
    convention: Literal["paper", "standard"] = "paper"


class ControlSection(_Strict):
    u: Optional[List[float]] = None
    v: Optional[List[List[float]]] = None


class SynthesisSection(_Strict):
    target: Optional[List[float]] = None
    alpha: float = Field(default=1e-2, gt=0)
    alphas: List[float] = list(DEFAULT_ALPHAS)
    mode: Literal["linear", "semilinear"] = "semilinear"
    outer_tol: float = Field(default=1e-10, gt=0)
    max_outer: int = Field(default=100, ge=1)
    damping: float = Field(default=1.0, ge=0.1, le=1.0)
    inner_tol: float = Field(default=1e-10, gt=0)
    max_iter: int = Field(default=200, ge=1)
    paper_literal_control: bool = False


class QuadratureSection(_Strict):
    order: int = Field(default=8, ge=1, le=64)
    panels: int = Field(default=16, ge=1)


class SimulateSection(_Strict):
    oracle: bool = False
    oracle_step: float = Field(default=1e-3, gt=0)
    samples: int = Field(default=0, ge=0)


class OutputSection(_Strict):
    directory: str = "out"
    plots: bool = True


class RunConfig(_Strict):
    model: ModelSection
    nonlinearity: Optional[NonlinearitySection] = None  # None keeps the preset's own
    neutral: NeutralSection = NeutralSection()
    control: ControlSection = ControlSection()
    synthesis: SynthesisSection = SynthesisSection()
    quadrature: QuadratureSection = QuadratureSection()
    simulate: SimulateSection = SimulateSection()
    output: OutputSection = OutputSection()
    _base_dir: Path = PrivateAttr(default=Path("."))


def load_config(path) -> RunConfig:
    """Parse a JSON or YAML file and validate it; raises :class:`ConfigError`."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping at top level")
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
    cfg._base_dir = path.parent
    return cfg


class Tabulated:
    """Time-only function interpolated from samples.

    Samples may repeat a time (left and right limit at a jump); the
    function then switches branches there and returns the left value at
    the shared time.  Exact at every sample time.
    """

    def __init__(self, times, values):
        from scipy.interpolate import CubicSpline

        t = np.asarray(times, dtype=float)
        x = np.asarray(values, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if t.ndim != 1 or t.size != x.shape[0] or t.size < 2:
            raise ConfigError("table needs matching times and values with at least two rows")
        if np.any(np.diff(t) < 0) or not np.all(np.isfinite(x)):
            raise ConfigError("table times must be nondecreasing and values finite")
        cuts = np.flatnonzero(np.diff(t) == 0) + 1
        self.pieces = []
        for a, b in zip(np.r_[0, cuts], np.r_[cuts, t.size]):
            tt, xx = t[a:b], x[a:b]
            fn = None  # a single-sample piece is only ever hit exactly
            if tt.size >= 4:
                fn = CubicSpline(tt, xx, axis=0)
            elif tt.size >= 2:
                fn = _linear(tt, xx)
            self.pieces.append((tt[0], tt[-1], tt, xx, fn))
        self.dim = x.shape[1]

    def __call__(self, s):
        s = float(s)
        piece = next((pc for pc in self.pieces if s <= pc[1] + 1e-14), self.pieces[-1])
        lo, hi, tt, xx, fn = piece
        s = min(max(s, lo), hi)
        hit = np.flatnonzero(tt == s)
        if hit.size:
            return xx[hit[0]].copy()
        return np.asarray(fn(s), dtype=float)


def _linear(tt, xx):
    return lambda s: np.array([np.interp(s, tt, xx[:, j]) for j in range(xx.shape[1])])


def _table(spec: TableSpec, base_dir: Path, dim: int) -> Tabulated:
    if spec.csv is not None:
        from .csvio import read_trajectory

        p = Path(spec.csv)
        t, _, X = read_trajectory(p if p.is_absolute() else base_dir / p)
        tab = Tabulated(t, X)
    else:
        tab = Tabulated(spec.times, spec.values)
    if tab.dim != dim:
        raise ConfigError(f"table has {tab.dim} columns, the state has {dim}")
    return tab


def _nonlinearity(cfg: RunConfig, dim: int, default: Nonlinearity) -> Nonlinearity:
    nl = cfg.nonlinearity
    if nl is None:
        return default
    if nl.kind == "tabulated":
        if nl.table is None:
            raise ConfigError("tabulated nonlinearity needs a 'table'")
        return Nonlinearity.tabulated(_table(nl.table, cfg._base_dir, dim))
    return Nonlinearity(nl.kind, nl.coefficient)


def build_system(cfg: RunConfig) -> ImpulsiveSystem:
    """Construct the configured system; raises :class:`ConfigError` on inconsistent data."""
    m = cfg.model
    try:
        if m.custom is not None:
            c = m.custom
            model = {
                "dense-generator": lambda: SemigroupModel.dense(c.generator),
                "spectral-diagonal": lambda: SemigroupModel.spectral(c.eigenvalues),
                "wave-block": lambda: SemigroupModel.wave(c.frequencies),
            }[c.kind]()
            system = ImpulsiveSystem(
                model=model, horizon=c.horizon, input_map=np.array(c.input_map, dtype=float),
                x0=np.array(c.x0, dtype=float), times=tuple(i.time for i in c.impulses),
                jumps=tuple(np.array(i.B, dtype=float) for i in c.impulses),
                impulse_inputs=tuple(np.array(i.D, dtype=float) for i in c.impulses),
            )
        else:
            system = make_preset(m.preset, N=m.N, horizon=m.horizon, impulses=m.impulses,
                                 gammas=m.gammas,
                                 x0=None if m.x0 is None else np.array(m.x0, dtype=float))
            if m.input_map is not None:
                if m.preset not in ("heat-dirichlet", "heat-neumann") and isinstance(m.input_map, str):
                    raise ConfigError("named input maps apply to heat presets only")
                if m.input_map == "example":
                    Omega = heat_input_map(system.dim)
                elif m.input_map == "identity":
                    Omega = np.eye(system.dim)
                else:
                    Omega = np.array(m.input_map, dtype=float)
                system = system.replace(input_map=Omega)
        return system.replace(nonlinearity=_nonlinearity(cfg, system.dim, system.nonlinearity))
    except ConfigError:
        raise
    except (ValueError, TypeError, IndexError) as exc:
        raise ConfigError(f"invalid model: {exc}") from exc


def build_neutral(cfg: RunConfig, system: ImpulsiveSystem, convention: str | None = None):
    """Neutral wrapper around ``system``; history is constant at ``x0``."""
    from .neutral import HistorySegment, NeutralSystem, NeutralTerm

    n = cfg.neutral
    table = None
    if n.sigma == "tabulated":
        if n.table is None:
            raise ConfigError("tabulated neutral term needs a 'table'")
        table = _table(n.table, cfg._base_dir, system.dim)
    term = NeutralTerm(n.sigma, n.coefficient, n.delay, table)
    hist = HistorySegment.constant(system.x0, n.delay, n.history_samples)
    return NeutralSystem(system, term, hist, convention or n.convention)


def build_grid(cfg: RunConfig, system: ImpulsiveSystem) -> QuadratureGrid:
    return QuadratureGrid.for_system(system, order=cfg.quadrature.order, panels=cfg.quadrature.panels)


def preset_names():
    return PRESETS
