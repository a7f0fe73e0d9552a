"""Experiment drivers behind the CLI subcommands.

Each driver takes an :class:`ExperimentConfig` and returns report rows.
Invalid parameters raise :class:`ConfigError`; solver failures propagate as
:class:`SolverError`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import sympy as sp

from ..bogovskii import BumpFunction, apply_scaled, commutator_residual, divergence_residual
from ..bogovskii import norm_bound_probe
from ..geometry import BoundaryChart, StarDomain, find_rho, make_cutoff
from ..grids import GridField, SpaceTimeField
from ..helmholtz import (PeriodicField, amplification_probe, gradient_part, leray_project,
                         reduce_problem, spectral_divergence, spectral_gradient)
from ..norms import NormSpec, estimate_ratio
from ..stokes import (MACGrid, StaggeredField, StokesProblem, cells_to_faces, divergence_history,
                      file_forcing, function_forcing, harmonicity_residual, maximal_regularity_probe,
                      read_forcing_file, solve_transient)
from .. import transform as tr
from . import forcing as fam
from .config import ConfigError, ExperimentConfig, parse_float_list, parse_int_list
from .report import ReportRow, observed_order, params

DEFAULT_TOLERANCES = {
    "ratio": {"ratio": 1e-12},
    "bogovskii-verify": {"divergence": 5e-2, "commutator": 5e-2, "order": 1.0, "swap": 1e-12,
                         "norm_bound_stability": 0.10},
    "helmholtz-verify": {"idempotency": 1e-12, "orthogonality": 1e-12, "divergence": 1e-12,
                         "gradient": 1e-12, "amplification_stability": 0.20},
    "stokes-run": {"spatial_order": 1.8, "temporal_order": 0.9, "divergence": 1e-10,
                   "harmonicity_order": 1.5, "regularity_stability": 0.20},
    "transform-verify": {"flat": 1e-8, "order": 1.8, "localized": 5e-2, "momentum": 0.1,
                         "recovery_flat": 1e-10, "control_factor": 10.0},
    "estimate-sweep": {"spread": 1.5, "homogeneity": 1e-10, "stability": 0.25},
}

DEFAULT_RESOLUTIONS = {
    "ratio": (),
    "bogovskii-verify": (32, 64, 128),
    "helmholtz-verify": (32, 64),
    "stokes-run": (32, 64, 128),
    "transform-verify": (16, 32, 64),
    "estimate-sweep": (16, 32, 64),
}

CHECKS = {
    "bogovskii-verify": ("divergence", "commutator", "norm-bound"),
    "helmholtz-verify": ("projector", "amplification"),
    "stokes-run": ("spatial", "temporal", "harmonicity", "regularity", "file"),
    "transform-verify": ("identities", "recovery", "localized", "controls"),
    "estimate-sweep": ("sweep",),
}

CORRUPTIBLE = ("bogovskii-verify", "transform-verify")


@dataclass
class Run:
    """Per-run state: resolved tolerances and the row collector."""

    cfg: ExperimentConfig
    rows: list = field(default_factory=list)

    def __post_init__(self):
        defaults = DEFAULT_TOLERANCES[self.cfg.subcommand]
        unknown = set(self.cfg.tolerances) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown tolerance keys {sorted(unknown)} for {self.cfg.subcommand}; "
                              f"known: {sorted(defaults)}")
        self.tol = {**defaults, **self.cfg.tolerances}
        if self.cfg.corrupt and self.cfg.subcommand not in CORRUPTIBLE:
            raise ConfigError(f"negative-control mode is available for {', '.join(CORRUPTIBLE)}")

    @property
    def resolutions(self) -> tuple:
        return self.cfg.resolutions or DEFAULT_RESOLUTIONS[self.cfg.subcommand]

    def checks(self) -> tuple:
        known = CHECKS[self.cfg.subcommand]
        text = self.cfg.option("suite", "checks")
        if text is None:
            return known
        picked = tuple(text.replace(",", " ").split())
        bad = set(picked) - set(known)
        if bad or not picked:
            raise ConfigError(f"unknown checks {sorted(bad)}; choose from {list(known)}")
        return picked

    def add(self, quantity, value, tol_key=None, kind="max", resolution=None, dt=None, **extra):
        tol = None if tol_key is None else self.tol[tol_key]
        if kind == "control":
            tol = self.tol["control_factor"] * self.tol[tol_key]
        p = params(resolution, dt, self.cfg.seed, **extra)
        self.rows.append(ReportRow(self.cfg.subcommand, p, quantity, float(value), tol,
                                   kind if tol is not None else "info"))

    def add_exact(self, quantity, value, target, **extra):
        p = params(extra.pop("resolution", None), extra.pop("dt", None), self.cfg.seed, **extra)
        self.rows.append(ReportRow(self.cfg.subcommand, p, quantity, float(value), float(target),
                                   "exact"))

    def add_orders(self, quantity, errors, resolutions, tol_key, ratio=2.0, **extra):
        """One ``min`` row per consecutive refinement pair."""
        for (r0, e0), (r1, e1) in zip(zip(resolutions, errors), zip(resolutions[1:], errors[1:])):
            rr = ratio if ratio else r1 / r0
            self.add(quantity, observed_order(e0, e1, rr), tol_key, "min",
                     resolution=[r0, r1], **extra)

    def opt_float(self, section, key, default):
        val = self.cfg.option(section, key)
        if val is None:
            return default
        try:
            return float(val)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: expected a number") from exc

    def opt_ints(self, section, key, default):
        val = self.cfg.option(section, key)
        return default if val is None else parse_int_list(val, f"[{section}] {key}")


# -- domains -------------------------------------------------------------------

def _floats(d: dict, key: str, default):
    if key not in d:
        return default
    return parse_float_list(d[key], key)


def build_domain(spec: dict, default_shape="ball", default_dim=2, default_size=(1.0,)) -> StarDomain:
    try:
        dim = int(spec.get("dim", default_dim))
        shape = spec.get("shape", default_shape)
        size = _floats(spec, "size", default_size)
        center = _floats(spec, "center", ())
        if shape in ("box", "ellipsoid") and len(size) == 1:
            size = size * dim
        dom = StarDomain(shape, dim, center, size)
        scale = float(spec.get("scale", 1.0))
        shift = _floats(spec, "shift", None)
        if scale != 1.0 or shift is not None:
            dom = dom.transformed(scale, shift)
    except ValueError as exc:
        raise ConfigError(f"invalid domain: {exc}") from exc
    return dom


def build_chart(spec: dict) -> BoundaryChart:
    try:
        return BoundaryChart.from_expression(spec.get("expression", "0.1*y1**2"),
                                             int(spec.get("dim", 2)),
                                             float(spec.get("radius", 1.0)))
    except (ValueError, sp.SympifyError) as exc:
        raise ConfigError(f"invalid chart: {exc}") from exc


def domain_lattice(dom: StarDomain, n: int) -> tuple[np.ndarray, float, tuple]:
    """Origin, spacing and node shape of a lattice over the bounding box, ``n`` cells on the long side."""
    lo, hi = dom.bounding_box()
    h = float(np.max(hi - lo)) / n
    shape = tuple(int(round(w / h)) + 1 for w in hi - lo)
    return lo, h, shape


def sample_on(dom: StarDomain, fun, n: int) -> GridField:
    lo, h, shape = domain_lattice(dom, n)
    f = GridField.sample(fun, lo, h, shape)
    mask = dom.contains(np.moveaxis(f.coords(), 0, -1))
    return GridField(np.where(mask, f.data, 0.0), lo, h, mask)


# -- ratio ------------------------------------------------------------------------

def closed_form_ratio(dom: StarDomain) -> float | None:
    """Reference ratio for shapes where it is known independently of the radii code."""
    base = dom.base if dom.shape == "scaled" else dom
    if base.shape == "ball":
        return 1.0
    if base.shape == "cube":
        return math.sqrt(base.dim)
    return None


def run_ratio(cfg: ExperimentConfig) -> list:
    run = Run(cfg)
    dom = build_domain(cfg.domain)
    value = dom.ratio()
    shape = dom.shape if dom.base is None else dom.base.shape
    expected = cfg.domain.get("expected")
    try:
        target = closed_form_ratio(dom) if expected is None else float(expected)
    except ValueError as exc:
        raise ConfigError("[domain] expected must be a number") from exc
    p = params(None, None, cfg.seed, shape=shape, dim=dom.dim, expected=target)
    if target is None:
        run.rows.append(ReportRow(cfg.subcommand, p, "ratio", value, None, "info"))
    else:
        run.rows.append(ReportRow(cfg.subcommand, p, "ratio", value, run.tol["ratio"], "match",
                                  target))
    return run.rows


# -- Bogovskii --------------------------------------------------------------------

def run_bogovskii(cfg: ExperimentConfig) -> list:
    run = Run(cfg)
    dom = build_domain(cfg.domain, default_size=(2.5,))
    res = run.resolutions
    if len(res) < 2:
        raise ConfigError("bogovskii-verify needs at least two resolutions")
    family = fam.two_bump_family(dom.dim, cfg.forcing.members, cfg.seed, dom.inner_radius())
    shift = dom.star_center
    family = [_shifted(f, shift) for f in family]
    checks = run.checks()
    phi = BumpFunction(dom.dim, 0.5 * dom.inner_radius(), tuple(dom.star_center))
    for m, fx in enumerate(family):
        div_err, com_err = [], []
        for n in res:
            f = sample_on(dom, fx, n)
            if "divergence" in checks:
                src = f.with_data(np.flip(f.data)) if cfg.corrupt else f
                v = apply_scaled(dom, src)
                div_err.append(divergence_residual(v, f, None, dom))
                run.add("divergence_residual", div_err[-1], "divergence", resolution=n, member=m)
            if "commutator" in checks:
                com_err.append(commutator_residual(phi, f, 0, 1))
                run.add("commutator_residual", com_err[-1], "commutator", resolution=n, member=m)
                if n == res[0]:
                    swap = commutator_residual(phi, f, 1, 0)
                    run.add("commutator_swap", abs(swap - com_err[-1]), "swap", resolution=n,
                            member=m)
        if div_err:
            run.add_orders("divergence_order", div_err, res, "order", ratio=None, member=m)
        if com_err:
            run.add_orders("commutator_order", com_err, res, "order", ratio=None, member=m)
    if "norm-bound" in checks:
        probes = []
        for n in res[-2:]:
            probes.append(norm_bound_probe(dom, [sample_on(dom, fx, n) for fx in family], k=1))
            run.add("norm_bound_probe", probes[-1], resolution=n)
        run.add("norm_bound_stability", abs(probes[1] - probes[0]) / probes[0],
                "norm_bound_stability", resolution=list(res[-2:]))
    return run.rows


def _shifted(fun, shift):
    shift = np.asarray(shift, dtype=float)
    if not np.any(shift):
        return fun
    return lambda x: fun(x - shift.reshape((-1,) + (1,) * (x.ndim - 1)))


# -- Helmholtz --------------------------------------------------------------------

def run_helmholtz(cfg: ExperimentConfig) -> list:
    run = Run(cfg)
    dim = int(cfg.domain.get("dim", 2))
    members = int(run.opt_float("helmholtz", "fields", 10))
    if members < 1:
        raise ConfigError("[helmholtz] fields must be positive")
    modes = cfg.forcing.modes
    checks = run.checks()
    res = run.resolutions
    if "projector" in checks:
        family = fam.bandlimited_family(dim, members, modes, cfg.seed)
        scalars = fam.bandlimited_family(dim, members, modes, cfg.seed + 1, ncomp=1)
        for n in res:
            if n <= 2 * modes:
                raise ConfigError("resolution too coarse for the band limit")
            h = 2.0 / n
            axes = [h * np.arange(n)] * dim
            X = np.stack(np.meshgrid(*axes, indexing="ij"))
            worst = dict.fromkeys(("idempotency", "orthogonality", "divergence", "gradient"), 0.0)
            for vf, sf in zip(family, scalars):
                v = PeriodicField(vf(X), np.zeros(dim), h)
                Pv = leray_project(v)
                Qv = gradient_part(v)
                vn = v.norm()
                PPv = leray_project(Pv)
                div_v = np.linalg.norm(spectral_divergence(v)) or 1.0
                g = spectral_gradient(PeriodicField(sf(X), np.zeros(dim), h))
                found = {
                    "idempotency": Pv.with_data(PPv.data - Pv.data).norm() / vn,
                    "orthogonality": abs(Pv.inner(Qv)) / vn ** 2,
                    "divergence": np.linalg.norm(spectral_divergence(Pv)) / div_v,
                    "gradient": leray_project(g).norm() / g.norm(),
                }
                for key, val in found.items():
                    worst[key] = max(worst[key], float(val))
            for key, val in worst.items():
                run.add(f"{key}_max", val, key, resolution=n, members=members)
    if "amplification" in checks:
        dom = build_domain(cfg.domain)
        family = fam.bandlimited_family(dim, members, modes, cfg.seed + 2)
        for k in (0, 1):
            vals = []
            for n in res[-2:]:
                fields = [_vector_on(dom, vf, n) for vf in family]
                vals.append(amplification_probe(fields, k, 2.0))
                run.add("amplification", vals[-1], resolution=n, k=k)
            run.add("amplification_stability", abs(vals[1] - vals[0]) / vals[0],
                    "amplification_stability", resolution=list(res[-2:]), k=k)
    return run.rows


def _vector_on(dom: StarDomain, fun, n: int) -> GridField:
    lo, h, shape = domain_lattice(dom, n)
    f = GridField.sample(fun, lo, h, shape, rank=1)
    mask = dom.contains(np.moveaxis(f.coords(), 0, -1))
    return GridField(np.where(mask, f.data, 0.0), lo, h, mask, rank=1)


# -- Stokes ----------------------------------------------------------------------------

_X, _Y, _T = sp.symbols("x y t", real=True)


def manufactured(g_t: sp.Expr):
    """Velocity, pressure and forcing callables for a no-slip stream-function solution."""
    psi = g_t * sp.sin(sp.pi * _X) ** 2 * sp.sin(sp.pi * _Y) ** 2
    u = [sp.diff(psi, _Y), -sp.diff(psi, _X)]
    p = g_t * sp.cos(sp.pi * _X) * sp.cos(sp.pi * _Y)
    f = [sp.diff(c, _T) - sp.diff(c, _X, 2) - sp.diff(c, _Y, 2) + sp.diff(p, v)
         for c, v in zip(u, (_X, _Y))]
    vec = fam.lambdify_vector
    return vec(u, 2), sp.lambdify((_X, _Y, _T), p, "numpy"), vec(f, 2)


def _u0_and_div(run, u, n, dt, label):
    run.add_exact(f"{label}_u0_max", max(float(np.max(np.abs(c))) for c in u.slices[0].components),
                  0.0, resolution=n, dt=dt)
    run.add(f"{label}_divergence_max", float(np.max(divergence_history(u))), "divergence",
            resolution=n, dt=dt)


def run_stokes(cfg: ExperimentConfig) -> list:
    run = Run(cfg)
    checks = run.checks()
    res = run.resolutions
    if "spatial" in checks:
        uex, pex, f = manufactured(_T)
        T, dt = 0.2, 0.05
        eu, ep = [], []
        for n in res:
            g = MACGrid.box(n)
            u, p = solve_transient(StokesProblem(g, T, dt, function_forcing(g, f)))
            ue = StaggeredField.sample(g, uex, T)
            eu.append((u.slices[-1] - ue).norm() / ue.norm())
            X = g.cell_centers()
            pe = pex(X[0], X[1], T)
            ep.append(float(np.linalg.norm(p.slices[-1].data - pe) / np.linalg.norm(pe)))
            run.add("mms_velocity_error", eu[-1], resolution=n, dt=dt)
            run.add("mms_pressure_error", ep[-1], resolution=n, dt=dt)
            _u0_and_div(run, u, n, dt, "mms")
        run.add_orders("spatial_order", eu, res, "spatial_order", ratio=None, dt=dt)
        for (r0, e0), (r1, e1) in zip(zip(res, ep), zip(res[1:], ep[1:])):
            run.add("pressure_order", observed_order(e0, e1, r1 / r0), resolution=[r0, r1], dt=dt)
    if "temporal" in checks:
        n = int(run.opt_float("stokes", "temporal_resolution", 32))
        T = run.opt_float("stokes", "temporal_t_final", 0.4)
        steps = run.opt_ints("stokes", "temporal_steps", (4, 8, 16))
        ref_steps = int(run.opt_float("stokes", "reference_steps", 256))
        if len(steps) < 2 or any(b <= a for a, b in zip(steps, steps[1:])) or ref_steps <= steps[-1]:
            raise ConfigError("temporal_steps must increase and stay below reference_steps")
        _, _, f = manufactured(sp.sin(2 * _T))
        g = MACGrid.box(n)
        ref, _ = solve_transient(StokesProblem(g, T, T / ref_steps, function_forcing(g, f)))
        errs = []
        for s in steps:
            u, _ = solve_transient(StokesProblem(g, T, T / s, function_forcing(g, f)))
            errs.append((u.slices[-1] - ref.slices[-1]).norm() / ref.slices[-1].norm())
            run.add("temporal_error", errs[-1], resolution=n, dt=T / s)
            _u0_and_div(run, u, n, T / s, "temporal")
        for (s0, e0), (s1, e1) in zip(zip(steps, errs), zip(steps[1:], errs[1:])):
            run.add("temporal_order", observed_order(e0, e1, s1 / s0), "temporal_order", "min",
                    resolution=n, dt=[T / s0, T / s1], reference_steps=ref_steps)
    if "harmonicity" in checks:
        f = _solenoidal_forcing(cfg)
        dt, T = cfg.dt, cfg.t_final
        vals = []
        for n in res:
            g = MACGrid.box(n)
            u, p = solve_transient(StokesProblem(g, T, dt, function_forcing(g, f)))
            vals.append(harmonicity_residual(p.slices[-1], 2))
            run.add("harmonicity_residual", vals[-1], resolution=n, dt=dt)
        run.add_orders("harmonicity_order", vals, res, "harmonicity_order", ratio=None, dt=dt)
    if "regularity" in checks:
        _, _, f = manufactured(_T)
        vals = []
        for n in res[-2:]:
            g = MACGrid.box(n)
            vals.append(maximal_regularity_probe(StokesProblem(g, 0.2, 0.05, function_forcing(g, f)),
                                                 NormSpec(2, 2, 0)))
            run.add("maximal_regularity", vals[-1], resolution=n, dt=0.05)
        run.add("regularity_stability", abs(vals[1] - vals[0]) / vals[0], "regularity_stability",
                resolution=list(res[-2:]), dt=0.05)
    if "file" in checks and cfg.forcing.family == "file":
        try:
            data = read_forcing_file(cfg.forcing.path)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot use forcing file: {exc}") from exc
        n = data.shape[2]
        if data.shape[1] != 2 or len(set(data.shape[2:])) != 1:
            raise ConfigError("forcing file must hold a square 2D grid")
        g = MACGrid.box(n)
        problem = StokesProblem(g, cfg.dt * data.shape[0], cfg.dt, file_forcing(g, data, cfg.dt))
        u, p = solve_transient(problem)
        _u0_and_div(run, u, n, cfg.dt, "file")
        run.add("file_harmonicity_residual", harmonicity_residual(p.slices[-1], 2), resolution=n,
                dt=cfg.dt)
    return run.rows


def _solenoidal_forcing(cfg: ExperimentConfig) -> Callable:
    spec = cfg.forcing
    if spec.family == "expression":
        text = spec.expression
    elif spec.family == "named":
        text = fam.named_expression(spec.name)
    else:
        text = fam.NAMED["vortex"]
    exprs = fam.parse_expression(text, 2)
    x, y = fam.SPACE[:2]
    if sp.simplify(sp.diff(exprs[0], x) + sp.diff(exprs[1], y)) != 0:
        raise ConfigError("harmonicity check needs a divergence-free forcing")
    return fam.lambdify_vector(exprs, 2)


# -- transformation identities -----------------------------------------------------------

def _test_functions(dim: int):
    """Smooth scalar, solenoidal vector, harmonic scalar, gradient (non-solenoidal) vector."""
    if dim == 2:
        g = lambda x: np.sin(x[0] + 0.3) * np.exp(0.5 * x[1])  # noqa: E731
        u = lambda x: np.stack([np.cos(x[0]) * np.sin(x[1]), -np.sin(x[0]) * np.cos(x[1])])  # noqa: E731
        harm = lambda x: np.exp(x[0]) * np.cos(x[1])  # noqa: E731
    else:
        g = lambda x: np.sin(x[0] + 0.3) * np.cos(0.7 * x[1]) * np.exp(0.5 * x[2])  # noqa: E731
        u = lambda x: np.stack([np.cos(x[0]) * np.sin(x[1]), -np.sin(x[0]) * np.cos(x[1]),  # noqa: E731
                                np.sin(x[0] + x[1])])
        harm = lambda x: np.exp(x[0]) * np.cos(0.6 * x[1]) * np.cos(0.8 * x[2])  # noqa: E731
    grad = lambda x: np.stack([x[d] for d in range(dim)])  # noqa: E731
    return g, u, harm, grad


def _polynomial_fields(dim: int):
    """Solenoidal quadratic and harmonic quadratic fields: every stencil here is exact on them."""
    if dim == 2:
        u = lambda x: np.stack([x[0] ** 2 + x[1] ** 2, -2 * x[0] * x[1]])  # noqa: E731
        harm = lambda x: x[0] ** 2 - x[1] ** 2 + x[0] * x[1]  # noqa: E731
    else:
        u = lambda x: np.stack([x[0] ** 2 + x[1] ** 2, -2 * x[0] * x[1], x[0] * x[1]])  # noqa: E731
        harm = lambda x: x[0] ** 2 + x[1] ** 2 - 2 * x[2] ** 2 + x[0] * x[2]  # noqa: E731
    return u, harm


def _identity_rows(run, chart, res, flat, wrong):
    """Flat charts: every residual at the stencil tolerance, using polynomial fields where the
    identity is a property (div, harmonic Laplacian).  Curved charts: observed orders for the
    tangential identities; the normal-axis derivative identity is exact on every chart.
    """
    g, u, harm, _ = _test_functions(chart.dim)
    if flat:
        u, harm = _polynomial_fields(chart.dim)
    n = chart.dim
    series = {}
    for N in res:
        G = tr.flat_grid(chart, N)
        pg = tr.pullback(g, wrong, G) if run.cfg.corrupt else None
        pu = tr.pullback(u, wrong, G) if run.cfg.corrupt else None
        ph = tr.pullback(harm, wrong, G) if run.cfg.corrupt else None
        vals = {f"derivative_identity_{i}": tr.derivative_identity_residual(g, chart, i, G, pg)
                for i in range(n)}
        vals["div_identity"] = tr.div_identity_residual(u, chart, G, pu)
        vals["laplace_identity"] = tr.laplace_identity_residual(g, chart, G, pulled=pg)
        vals["harmonic_laplace_identity"] = tr.laplace_identity_residual(harm, chart, G, True, ph)
        vals["gradient_identity"] = tr.gradient_identity_residual(g, chart, G, pg)
        for key, val in vals.items():
            label = ("flat_" if flat else "curved_") + key
            exact = flat or key == f"derivative_identity_{n - 1}"
            run.add(label, val, "flat" if exact else None, resolution=N, chart=chart.expression)
            if not exact:
                series.setdefault(key, []).append(val)
    for key, vals in series.items():
        run.add_orders(f"curved_{key}_order", vals, res, "order", chart=chart.expression)


def _localized_fields(chart: BoundaryChart, t: float = 0.3):
    x1, x2, ts = sp.symbols("x1 x2 t", real=True)
    h = sp.sympify(chart.expression).subs("y1", x1)
    psi = (x2 - h) ** 2 * sp.cos(x1 + sp.Rational(2, 5)) * (1 + x2 + x1 / 2) * (sp.sin(ts) + 2)
    u = sp.Matrix([sp.diff(psi, x2), -sp.diff(psi, x1)])
    p = (x1 * x2 + sp.sin(x1)) * (sp.sin(ts) + 2)
    f = (u.diff(ts) - sp.Matrix([sp.diff(c, x1, 2) + sp.diff(c, x2, 2) for c in u])
         + sp.Matrix([sp.diff(p, x1), sp.diff(p, x2)]))

    def vec(e):
        fns = [sp.lambdify((x1, x2, ts), c, "numpy") for c in e]
        return lambda x: np.stack([fn(x[0], x[1], t) + 0 * x[0] for fn in fns])
    fp = sp.lambdify((x1, x2, ts), p, "numpy")
    return vec(u), (lambda x: fp(x[0], x[1], t) + 0 * x[0]), vec(f), vec(u.diff(ts))


def _localized_rows(run, chart, delta, k):
    res = run.opt_ints("transform", "localized_resolutions", (32, 64))
    if len(res) < 2:
        raise ConfigError("localized_resolutions needs two entries")
    try:
        rho = find_rho(chart, delta)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    cut = make_cutoff(rho)
    u, p, f, ut = _localized_fields(chart)
    div, mom = [], []
    for N in res:
        G = tr.flat_grid(chart, N, extent=2 * rho)
        sys = tr.build_localized(tr.FlattenedField.from_physical(chart, G, u, p, f, ut), cut, k)
        div.append(tr.localized_div_residual(sys))
        mom.append(tr.momentum_residual(sys))
        run.add("localized_mean_defect", sys.mean_defect, resolution=N, chart=chart.expression)
        tol_key = "localized" if N == res[0] else None
        run.add("localized_div_residual", div[-1], tol_key, resolution=N, chart=chart.expression)
        run.add("momentum_residual", mom[-1], "momentum" if N == res[0] else None, resolution=N,
                chart=chart.expression)
    run.add_orders("localized_div_order", div, res, "order", ratio=None, chart=chart.expression)
    G = tr.flat_grid(chart, res[0], extent=2 * rho)
    zero = lambda x: np.zeros_like(x)  # noqa: E731
    sys = tr.build_localized(tr.FlattenedField.from_physical(chart, G, zero), cut, k)
    scale = max(float(np.max(np.abs(sys.V.data))), float(np.max(np.abs(sys.z1.data))),
                float(np.max(np.abs(sys.z2.data))))
    run.add("localized_zero_velocity", scale, "flat", resolution=res[0], chart=chart.expression)


def _recovery_rows(run, chart, res):
    dim = chart.dim
    if dim == 2:
        quad = lambda x: x[0] ** 2 - x[1] ** 2  # noqa: E731
        smooth = lambda x: np.exp(x[0]) * np.cos(x[1])  # noqa: E731
        cubic = lambda x: x[0] ** 3 - 3 * x[0] * x[1] ** 2  # noqa: E731
        tilt = "0.3*y1"
    else:
        quad = lambda x: x[0] ** 2 + x[1] ** 2 - 2 * x[2] ** 2  # noqa: E731
        smooth = lambda x: np.exp(x[0]) * np.cos(0.6 * x[1]) * np.cos(0.8 * x[2])  # noqa: E731
        cubic = lambda x: x[0] ** 3 - 3 * x[0] * x[2] ** 2  # noqa: E731
        tilt = "0.3*y1 - 0.2*y2"
    flat = BoundaryChart.flat(dim, chart.radius)
    tilted = BoundaryChart.from_expression(tilt, dim, chart.radius)
    for N in res:
        G = tr.flat_grid(flat, N)
        run.add("recovery_flat_quadratic", tr.recovery_residual(tr.pullback(quad, flat, G), flat),
                "recovery_flat", resolution=N, chart="0")
    for label, ch, fun in (("tilted_smooth", tilted, smooth), ("curved_cubic", chart, cubic)):
        plain, iterated = [], []
        for N in res:
            G = tr.flat_grid(ch, N)
            P = tr.pullback(fun, ch, G)
            plain.append(tr.recovery_residual(P, ch))
            iterated.append(tr.recovery_residual(P, ch, 0))
            run.add(f"recovery_{label}", plain[-1], resolution=N, chart=ch.expression)
            run.add(f"iterated_recovery_{label}", iterated[-1], resolution=N, chart=ch.expression)
        if ch.is_flat:
            continue
        run.add_orders(f"recovery_{label}_order", plain, res, "order", chart=ch.expression)
        run.add_orders(f"iterated_recovery_{label}_order", iterated, res, "order",
                       chart=ch.expression)


def _control_rows(run, chart, wrong, N):
    g, u, harm, grad = _test_functions(chart.dim)
    G = tr.flat_grid(chart, N)
    run.add("control_div_of_gradient_field", tr.div_identity_residual(grad, chart, G), "flat",
            "control", resolution=N, chart=chart.expression)
    run.add("control_harmonic_mode_on_nonharmonic",
            tr.laplace_identity_residual(g, chart, G, harmonic=True), "flat", "control",
            resolution=N, chart=chart.expression)
    run.add("control_wrong_chart_pullback",
            tr.derivative_identity_residual(g, chart, 0, G, pulled=tr.pullback(g, wrong, G)),
            "flat", "control", resolution=N, chart=chart.expression, wrong_chart=wrong.expression)
    nonharm = lambda x: sum(x[d] ** 2 for d in range(chart.dim))  # noqa: E731
    run.add("control_recovery_nonharmonic",
            tr.recovery_residual(tr.pullback(nonharm, chart, G), chart), "flat", "control",
            resolution=N, chart=chart.expression)


def run_transform(cfg: ExperimentConfig) -> list:
    run = Run(cfg)
    chart = build_chart(cfg.chart)
    res = run.resolutions
    if len(res) < 2:
        raise ConfigError("transform-verify needs at least two resolutions")
    try:
        delta = float(cfg.chart.get("delta", 0.1))
        k = int(cfg.chart.get("k", 0))
    except ValueError as exc:
        raise ConfigError(f"invalid chart parameters: {exc}") from exc
    if not 0 <= k < chart.dim - 1:
        raise ConfigError("k must be a tangential axis (0-based)")
    checks = run.checks()
    flat = BoundaryChart.flat(chart.dim, chart.radius)
    bent = "0.1*y1**2" if chart.dim == 2 else "0.1*(y1**2 + y2**2)"
    wrong = flat if not chart.is_flat else BoundaryChart.from_expression(bent, chart.dim,
                                                                           chart.radius)
    if "identities" in checks:
        _identity_rows(run, flat, res, True, BoundaryChart.from_expression(bent, chart.dim,
                                                                            chart.radius))
        if not chart.is_flat:
            _identity_rows(run, chart, res, False, flat)
    if "recovery" in checks:
        _recovery_rows(run, chart, res)
    if "localized" in checks and chart.dim == 2:
        _localized_rows(run, flat, delta, k)
        if not chart.is_flat:
            _localized_rows(run, chart, delta, k)
    if "controls" in checks:
        _control_rows(run, chart, wrong, res[1])
    return run.rows


# -- estimate sweep -------------------------------------------------------------------------

def _family_members(cfg: ExperimentConfig, dim: int) -> list:
    """Space-time forcing callables ``f(x, t) -> (n, ...)`` array."""
    spec = cfg.forcing
    if spec.family == "bandlimited":
        base = fam.bandlimited_family(dim, spec.members, spec.modes, cfg.seed)
        return [lambda x, t, b=b: spec.scale * (1.0 + t) * b(x) for b in base]
    if spec.family == "zero":
        return [lambda x, t: np.zeros((dim,) + x.shape[1:])]
    if spec.family in ("named", "expression"):
        text = spec.expression if spec.family == "expression" else fam.named_expression(spec.name)
        fv = fam.expression_forcing(text, dim)
        return [lambda x, t: spec.scale * np.stack(fv(x, t))]
    raise ConfigError(f"estimate-sweep does not support forcing family {spec.family!r}")


def sweep_cell(fun, n: int, T: float, dt: float, specs, scale: float = 1.0) -> dict:
    """Solve the Stokes problem forced by ``scale * fun`` on an ``n x n`` MAC grid; ratio per spec.

    The forcing is split into its solenoidal part (solved for) and a gradient;
    the pressure for the full forcing is the solved pressure minus the shift.
    """
    g = MACGrid.box(n)
    h = g.spacing
    X = g.cell_centers()
    times = dt * np.arange(int(round(T / dt)) + 1)
    origin = np.full(2, h / 2)
    F = SpaceTimeField(times, [GridField(scale * fun(X, t), origin, h, rank=1) for t in times])
    sol, shift = reduce_problem(F)
    faces = [cells_to_faces(g, s.data) for s in sol.slices]
    problem = StokesProblem(g, T, dt, lambda t: faces[int(round(t / dt))])
    _, p = solve_transient(problem)
    P = SpaceTimeField(times, [GridField(sl.data - sh.data * (t > 0), origin, h)
                               for sl, sh, t in zip(p.slices, shift.slices, times)])
    return {spec: estimate_ratio(P, F, spec) for spec in specs}


def _spec_label(spec: NormSpec) -> str:
    s = "inf" if math.isinf(spec.s) else "%g" % spec.s
    return f"s={s},q={spec.q:g},k={spec.k}"


def run_sweep(cfg: ExperimentConfig) -> list:
    run = Run(cfg)
    res = run.resolutions
    if len(res) < 2:
        raise ConfigError("estimate-sweep needs at least two resolutions")
    specs = cfg.norms or tuple(NormSpec(s, q, k) for k in (0, 1) for (s, q) in ((2, 2), (4, 2)))
    if any(sp_.k > 2 for sp_ in specs):
        raise ConfigError("estimate-sweep supports k in {0, 1, 2}")
    T, dt = cfg.t_final, cfg.dt
    steps = T / dt
    if abs(steps - round(steps)) > 1e-9 * steps:
        raise ConfigError("t_final must be an integer multiple of dt")
    members = _family_members(cfg, 2)
    probe = MACGrid.box(res[0]).cell_centers()
    samples = [m(probe, t) for m in members for t in dt * np.arange(int(round(steps)) + 1)]
    if fam.is_zero_family(samples):
        raise ConfigError("forcing family vanishes identically; the estimate ratio is undefined")
    for m, fun in enumerate(members):
        table = {n: sweep_cell(fun, n, T, dt, specs) for n in res}
        doubled = sweep_cell(fun, res[0], T, dt, specs, scale=2.0)
        for spec in specs:
            label = _spec_label(spec)
            vals = [table[n][spec] for n in res]
            for n, v in zip(res, vals):
                run.add("ratio", v, resolution=n, dt=dt, member=m, norm=label)
            run.add("ratio_spread", max(vals) / min(vals), "spread", resolution=list(res), dt=dt,
                    member=m, norm=label)
            run.add("ratio_stability", abs(vals[-1] - vals[-2]) / vals[-2], "stability",
                    resolution=list(res[-2:]), dt=dt, member=m, norm=label)
            base = table[res[0]][spec]
            run.add("homogeneity", abs(doubled[spec] - base) / base, "homogeneity",
                    resolution=res[0], dt=dt, member=m, norm=label)
    return run.rows


RUNNERS = {
    "ratio": run_ratio,
    "bogovskii-verify": run_bogovskii,
    "helmholtz-verify": run_helmholtz,
    "stokes-run": run_stokes,
    "transform-verify": run_transform,
    "estimate-sweep": run_sweep,
}


def run_experiment(cfg: ExperimentConfig) -> list:
    return RUNNERS[cfg.subcommand](cfg)
