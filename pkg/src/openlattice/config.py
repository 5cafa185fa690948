"""Experiment configuration files.

A configuration is a TOML document.  Numbers may be written as strings such
as ``"1/400"``; they are parsed exactly before conversion to float.

Example
-------
::

    kind = "hydro-convergence"
    seed = 7

    [model]
    kind = "misanthrope"
    rates = "exclusion"

    [domain]
    a = 0.0
    b = 1.0

    [boundary]
    lambda_a = 0.9
    lambda_b = 0.2

    [initial]
    kind = "step"
    left = 0.9
    right = 0.2
    x0 = 0.5

    [run]
    N = [50, 100, 200, 400]
    replicas = 32
    times = [0.25, 0.5]
"""

from __future__ import annotations

import copy
import hashlib
import json
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from . import equilibrium
from .geometry import SlabDomain, bumped_slab, notched_slab

KINDS = ("simulate", "solve", "hydrostatic", "phases", "couple-audit", "hydro-convergence")
MIN_N = 4


class ConfigError(ValueError):
    """Raised for any invalid or inconsistent configuration."""


def load_toml(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"configuration file not found: {path}")
    try:
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def num(v) -> float:
    """Float from a number or an exact decimal/fraction string."""
    if isinstance(v, bool):
        raise ConfigError(f"expected a number, got {v!r}")
    if isinstance(v, str):
        try:
            return float(Fraction(v.strip()))
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"cannot parse number {v!r}") from exc
    if isinstance(v, (int, float)):
        return float(v)
    raise ConfigError(f"expected a number, got {v!r}")


def _canonical(obj):
    if isinstance(obj, Mapping):
        return {str(k): _canonical(obj[k]) for k in sorted(obj)}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    return obj


@dataclass(frozen=True)
class StepProfile:
    """``left`` for first coordinate below ``x0``, ``right`` above; picklable for worker pools."""

    left: float
    right: float
    x0: float

    def __call__(self, p):
        x = np.asarray(p, dtype=float)
        x = x[:, 0] if x.ndim == 2 else x
        return np.where(x < self.x0, self.left, self.right)


@dataclass
class ExperimentConfig:
    """Validated experiment description.

    Attributes
    ----------
    raw : dict
        Parsed document, with any model file inlined under ``model``.
    kind : str
        One of :data:`KINDS`.
    seed : int
        Master seed; every random stream is derived from it.
    """

    raw: dict
    kind: str
    seed: int
    base_dir: Path = field(default_factory=Path.cwd)
    output: Path | None = None
    workers: int = 1
    _model: Any = field(default=None, repr=False)

    # ----------------------------------------------------------- sections

    def section(self, name: str) -> dict:
        return dict(self.raw.get(name, {}))

    @property
    def model(self):
        if self._model is None:
            from .models import model_from_dict

            try:
                self._model = model_from_dict(self.raw["model"])
            except (KeyError, ValueError, TypeError, IndexError) as exc:
                raise ConfigError(f"bad model description: {exc}") from exc
        return self._model

    @property
    def d(self) -> int:
        return self.model.d

    @property
    def lam_a(self) -> float:
        return num(self.section("boundary").get("lambda_a", 0.0))

    @property
    def lam_b(self) -> float:
        return num(self.section("boundary").get("lambda_b", 0.0))

    @property
    def points(self) -> list[tuple[float, float]]:
        pts = self.section("boundary").get("points")
        if pts is None:
            return [(self.lam_a, self.lam_b)]
        return [(num(p[0]), num(p[1])) for p in pts]

    @property
    def N_list(self) -> list[int]:
        v = self.section("run").get("N", [100])
        return [int(n) for n in (v if isinstance(v, list) else [v])]

    @property
    def replicas(self) -> int:
        return int(self.section("run").get("replicas", 1))

    @property
    def times(self) -> list[float]:
        return [num(t) for t in self.section("run").get("times", [0.5])]

    @property
    def delta(self) -> float:
        return num(self.section("run").get("delta", 0.02))

    @property
    def pde(self) -> dict:
        p = self.section("pde")
        return {"dx": num(p.get("dx", "1/400")), "cfl": num(p.get("cfl", 0.5))}

    @property
    def tolerances(self) -> dict:
        return {k: num(v) for k, v in self.section("tolerances").items()}

    # ------------------------------------------------------------ builders

    def domain(self):
        dc = self.section("domain")
        a, b = num(dc.get("a", 0.0)), num(dc.get("b", 1.0))
        shape = dc.get("shape", "slab")
        d = self.d
        if shape == "slab":
            return SlabDomain((1.0,) + (0.0,) * (d - 1), a, b)
        if shape in ("notched", "bumped"):
            build = notched_slab if shape == "notched" else bumped_slab
            win = tuple(num(w) for w in dc.get("window", [0.3, 0.7]))
            return build(a, b, num(dc.get("depth", 0.2)), win, num(dc.get("width", 1.0)), d)
        raise ConfigError(f"unknown domain shape {shape!r}")

    @property
    def width(self) -> float:
        return num(self.section("domain").get("width", 1.0))

    def initial(self, lam_a: float | None = None, lam_b: float | None = None) -> Callable | float:
        """Initial profile as a function of macroscopic points (or a constant)."""
        ic = self.section("initial")
        kind = ic.get("kind", "midpoint")
        la = self.lam_a if lam_a is None else lam_a
        lb = self.lam_b if lam_b is None else lam_b
        if kind == "constant":
            return num(ic["value"])
        if kind == "midpoint":
            return 0.5 * (la + lb)
        if kind == "step":
            return StepProfile(num(ic.get("left", la)), num(ic.get("right", lb)), num(ic.get("x0", 0.5)))
        raise ConfigError(f"unknown initial profile kind {kind!r}")

    # -------------------------------------------------------------- misc

    def digest(self) -> str:
        """Short hash of the canonical configuration and seed."""
        blob = json.dumps({"config": _canonical(self.raw), "seed": self.seed}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def with_seed(self, seed: int) -> "ExperimentConfig":
        out = copy.copy(self)
        out.seed = int(seed)
        return out


def _check_density(name: str, v: float, top: float):
    if not (0.0 <= v <= top):
        raise ConfigError(f"{name}={v} outside [0, {top}]")


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    """Check the invariants of a configuration; raises :class:`ConfigError`."""
    from .models import validate_model

    if cfg.kind not in KINDS:
        raise ConfigError(f"unknown experiment kind {cfg.kind!r}; expected one of {KINDS}")
    if cfg.seed < 0 or cfg.seed >= 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")
    rep = validate_model(cfg.model)
    if not rep.passed:
        raise ConfigError(f"model fails structural checks: {rep.failures()}")
    top = equilibrium.max_density(cfg.model)
    for i, (la, lb) in enumerate(cfg.points):
        _check_density(f"points[{i}].lambda_a", la, top)
        _check_density(f"points[{i}].lambda_b", lb, top)
    if cfg.section("initial").get("kind") == "constant":
        _check_density("initial.value", num(cfg.section("initial")["value"]), top)
    for k in ("left", "right"):
        if k in cfg.section("initial"):
            _check_density(f"initial.{k}", num(cfg.section("initial")[k]), top)
    if any(n < MIN_N for n in cfg.N_list):
        raise ConfigError(f"every N must be >= {MIN_N}")
    if cfg.replicas < 1:
        raise ConfigError("replicas must be >= 1")
    if any(t < 0 for t in cfg.times):
        raise ConfigError("times must be nonnegative")
    if cfg.delta <= 0:
        raise ConfigError("cell width must be positive")
    p = cfg.pde
    if p["dx"] <= 0 or not (0 < p["cfl"] <= 1):
        raise ConfigError("pde needs dx > 0 and 0 < cfl <= 1")
    dom = cfg.domain()
    if dom.d != cfg.d:
        raise ConfigError("domain and model dimensions differ")
    if not dom.a_outer < dom.b_outer:
        raise ConfigError("domain needs a < b")
    return cfg


def from_dict(raw: Mapping, base_dir: Path | None = None, seed: int | None = None,
              workers: int | None = None, output=None) -> ExperimentConfig:
    """Build and validate a configuration from a parsed document.

    ``model_file`` (relative to ``base_dir``) may replace an inline
    ``[model]`` table.  Explicit arguments override document values.
    """
    raw = copy.deepcopy(dict(raw))
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    if "model_file" in raw:
        mpath = base / raw["model_file"]
        if not mpath.is_file():
            raise ConfigError(f"model file not found: {mpath}")
        doc = load_toml(mpath)
        raw["model"] = doc.get("model", doc)
        del raw["model_file"]
    if "model" not in raw:
        raise ConfigError("configuration has no model")
    try:
        s = int(raw.get("seed", 0) if seed is None else seed)
    except (TypeError, ValueError) as exc:
        raise ConfigError("seed must be an integer") from exc
    w = int(raw.get("workers", 1) if workers is None else workers)
    out = output if output is not None else raw.get("output")
    cfg = ExperimentConfig(raw, str(raw.get("kind", "")), s, base, Path(out) if out else None, w)
    return validate(cfg)


def load_config(path, seed: int | None = None, workers: int | None = None, output=None) -> ExperimentConfig:
    path = Path(path)
    return from_dict(load_toml(path), path.parent, seed, workers, output)
