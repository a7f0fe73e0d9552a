"""INI configuration for harness experiments.

Sections: ``[experiment]`` (subcommand, seed, out), ``[grid]`` (resolutions,
dt, t_final), ``[domain]``, ``[chart]``, ``[forcing]``, ``[norms]`` and
``[tolerances]``.  Anything else is passed through to the experiment as a
plain string table.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from ..norms import NormSpec

SUBCOMMANDS = ("ratio", "bogovskii-verify", "helmholtz-verify", "stokes-run",
               "transform-verify", "estimate-sweep")

U64_MAX = 2 ** 64 - 1


class ConfigError(ValueError):
    """Raised for any malformed or inconsistent configuration."""


def parse_int_list(text: str, what: str = "list") -> tuple[int, ...]:
    try:
        vals = tuple(int(tok) for tok in text.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"{what}: expected integers, got {text!r}") from exc
    return vals


def parse_float_list(text: str, what: str = "list") -> tuple[float, ...]:
    try:
        return tuple(float(tok) for tok in text.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"{what}: expected numbers, got {text!r}") from exc


def parse_resolutions(text: str) -> tuple[int, ...]:
    res = parse_int_list(text, "resolutions")
    check_resolutions(res)
    return res


def check_resolutions(res) -> None:
    if not res:
        raise ConfigError("resolutions list is empty")
    if any(r < 4 for r in res):
        raise ConfigError("every resolution must be at least 4")
    if any(b <= a for a, b in zip(res, res[1:])):
        raise ConfigError(f"resolutions must be strictly increasing, got {list(res)}")


def parse_norm_specs(text: str) -> tuple[NormSpec, ...]:
    """``"s:q:k, ..."`` with ``s`` possibly ``inf``."""
    specs = []
    for tok in text.replace(",", " ").split():
        parts = tok.split(":")
        if len(parts) != 3:
            raise ConfigError(f"norm spec {tok!r} is not of the form s:q:k")
        try:
            s = math.inf if parts[0] == "inf" else float(parts[0])
            spec = NormSpec(s, float(parts[1]), int(parts[2]))
        except ValueError as exc:
            raise ConfigError(f"norm spec {tok!r}: {exc}") from exc
        specs.append(spec)
    if not specs:
        raise ConfigError("no norm specs given")
    return tuple(specs)


def parse_seed(text) -> int:
    try:
        seed = int(text)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"seed must be an integer, got {text!r}") from exc
    if not 0 <= seed <= U64_MAX:
        raise ConfigError("seed must fit in an unsigned 64-bit integer")
    return seed


@dataclass(frozen=True)
class ForcingSpec:
    """Forcing family descriptor.

    ``family`` is one of ``bandlimited`` (random trigonometric sums),
    ``two-bump`` (zero-mean bump pairs), ``named`` (library entry ``name``),
    ``expression`` (components separated by ``;``), ``zero`` or ``file``.
    """

    family: str = "bandlimited"
    members: int = 5
    modes: int = 2
    scale: float = 1.0
    name: str = ""
    expression: str = ""
    path: str = ""

    FAMILIES = ("bandlimited", "two-bump", "named", "expression", "zero", "file")

    def __post_init__(self):
        if self.family not in self.FAMILIES:
            raise ConfigError(f"unknown forcing family {self.family!r}")
        if self.members < 1:
            raise ConfigError("forcing family needs at least one member")
        if self.modes < 1:
            raise ConfigError("band limit must be at least 1")
        if not math.isfinite(self.scale):
            raise ConfigError("forcing scale must be finite")
        if self.family == "named" and not self.name:
            raise ConfigError("named forcing needs a name")
        if self.family == "expression" and not self.expression:
            raise ConfigError("expression forcing needs an expression")
        if self.family == "file" and not self.path:
            raise ConfigError("file forcing needs a path")


@dataclass(frozen=True)
class ExperimentConfig:
    subcommand: str
    seed: int = 0
    out: str = "results.csv"
    resolutions: tuple = ()
    dt: float = 0.02
    t_final: float = 0.1
    domain: dict = field(default_factory=dict)
    chart: dict = field(default_factory=dict)
    forcing: ForcingSpec = field(default_factory=ForcingSpec)
    norms: tuple = ()
    tolerances: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)
    corrupt: bool = False

    def __post_init__(self):
        if self.subcommand not in SUBCOMMANDS:
            raise ConfigError(f"unknown subcommand {self.subcommand!r}")
        parse_seed(self.seed)
        if self.resolutions:
            check_resolutions(self.resolutions)
        if not (self.dt > 0 and self.t_final > 0):
            raise ConfigError("dt and t_final must be positive")
        for key, val in self.tolerances.items():
            if not (isinstance(val, float) and val > 0 and math.isfinite(val)):
                raise ConfigError(f"tolerance {key!r} must be a positive number")

    def option(self, section: str, key: str, default=None):
        return self.options.get(section, {}).get(key, default)

    def with_overrides(self, seed=None, out=None, resolutions=None, corrupt=None):
        kw = {}
        if seed is not None:
            kw["seed"] = parse_seed(seed)
        if out is not None:
            kw["out"] = str(out)
        if resolutions is not None:
            check_resolutions(tuple(resolutions))
            kw["resolutions"] = tuple(resolutions)
        if corrupt is not None:
            kw["corrupt"] = bool(corrupt)
        return replace(self, **kw)


def _floats(section, key, default):
    if key not in section:
        return default
    try:
        return float(section[key])
    except ValueError as exc:
        raise ConfigError(f"{key}: expected a number, got {section[key]!r}") from exc


def _ints(section, key, default):
    if key not in section:
        return default
    try:
        return int(section[key])
    except ValueError as exc:
        raise ConfigError(f"{key}: expected an integer, got {section[key]!r}") from exc


def loads(text: str, subcommand: str | None = None) -> ExperimentConfig:
    """Parse INI text.  ``subcommand`` must agree with ``[experiment] subcommand`` if both are set."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable configuration: {exc}") from exc
    exp = cp["experiment"] if cp.has_section("experiment") else {}
    named = exp.get("subcommand")
    if subcommand and named and named != subcommand:
        raise ConfigError(f"config is for {named!r}, not {subcommand!r}")
    sub = subcommand or named
    if not sub:
        raise ConfigError("no subcommand given")

    grid = cp["grid"] if cp.has_section("grid") else {}
    resolutions = parse_resolutions(grid["resolutions"]) if "resolutions" in grid else ()

    fs = cp["forcing"] if cp.has_section("forcing") else {}
    forcing = ForcingSpec(
        family=fs.get("family", "bandlimited"),
        members=_ints(fs, "members", 5),
        modes=_ints(fs, "modes", 2),
        scale=_floats(fs, "scale", 1.0),
        name=fs.get("name", ""),
        expression=fs.get("expression", ""),
        path=fs.get("path", ""),
    )

    norms = ()
    if cp.has_section("norms") and "specs" in cp["norms"]:
        norms = parse_norm_specs(cp["norms"]["specs"])

    tolerances = {}
    if cp.has_section("tolerances"):
        for key, val in cp["tolerances"].items():
            try:
                tolerances[key] = float(val)
            except ValueError as exc:
                raise ConfigError(f"tolerance {key!r}: expected a number") from exc

    known = {"experiment", "grid", "forcing", "norms", "tolerances", "domain", "chart"}
    options = {s: dict(cp[s]) for s in cp.sections() if s not in known}
    return ExperimentConfig(
        subcommand=sub,
        seed=parse_seed(exp.get("seed", 0)),
        out=exp.get("out", "results.csv"),
        resolutions=resolutions,
        dt=_floats(grid, "dt", 0.02),
        t_final=_floats(grid, "t_final", 0.1),
        domain=dict(cp["domain"]) if cp.has_section("domain") else {},
        chart=dict(cp["chart"]) if cp.has_section("chart") else {},
        forcing=forcing,
        norms=norms,
        tolerances=tolerances,
        options=options,
    )


def load(path, subcommand: str | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    return loads(text, subcommand)
