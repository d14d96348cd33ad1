"""Monte Carlo estimators with 95% confidence intervals.

Every estimator simulates paths ``0 .. n_paths - 1`` of the run seed.  A
path's driving depends only on ``(seed, path_index)``, and per-path
results are reduced in path order, so estimates do not depend on how the
paths are scheduled across workers.

Hit probabilities that share a configuration are computed on a shared
path set, which couples them monotonically.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from itertools import permutations
from statistics import NormalDist

import numpy as np

from . import _kernels as K
from .core import (
    DegenerateInputError,
    DomainError,
    SleParams,
    as_hpoint,
    green_one_point,
    params_from_kappa,
    phi_inverse,
    two_point_envelope,
)
from .loewner import SWALLOW_REL_TOL, refine_driving, sample_driving, trace_curve

LEVEL = 0.95
HIT_RULES = ("arc", "polyline", "mesh")


@dataclass(frozen=True)
class RunConfig:
    """Simulation parameters shared by all estimators.

    ``horizon`` is the capacity time ``T`` at which events are evaluated.
    With ``horizon_check`` the paths run to ``2T`` as well and estimates
    whose value moves by at least the CI half-width are flagged.
    ``margin`` is the slack added to the largest radius when deciding from
    Koebe bounds which curve tips can be skipped.  ``hit_rule`` selects how
    trace events test closeness: ``"arc"`` measures the distance to the
    exact hull pieces, ``"polyline"`` to the polygon through the tips and
    ``"mesh"`` compares the distance to the tips with the radius plus the
    trace mesh.
    """

    kappa: float = 8.0 / 3.0
    dt: float = 1e-3
    horizon: float = 16.0
    n_paths: int = 10_000
    seed: int = 0
    horizon_check: bool = True
    trace_method: str = "fast"
    margin: float = 0.05
    workers: int = 1
    refine: int = 1
    hit_rule: str = "arc"

    def __post_init__(self) -> None:
        if not (self.dt > 0 and self.horizon > 0 and self.n_paths >= 1):
            raise DomainError("dt, horizon and n_paths must be positive")
        if self.trace_method not in ("fast", "exact"):
            raise DomainError(f"unknown trace method {self.trace_method!r}")
        if self.horizon / self.dt < 1 - 1e-9:
            raise DomainError("horizon shorter than one step")
        if self.refine < 1:
            raise DomainError("refine must be a positive integer")
        if self.hit_rule not in HIT_RULES:
            raise DomainError(f"unknown hit rule {self.hit_rule!r}")

    @property
    def params(self) -> SleParams:
        return params_from_kappa(self.kappa)

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.horizon / self.dt)))

    @property
    def n_total(self) -> int:
        return 2 * self.n_steps if self.horizon_check else self.n_steps

    @property
    def sim_dt(self) -> float:
        """Step size actually simulated, ``dt / refine``."""
        return self.dt / self.refine

    @property
    def sim_steps(self) -> int:
        """Simulated steps up to ``T``."""
        return self.n_steps * self.refine

    @property
    def sim_total(self) -> int:
        return self.n_total * self.refine

    @property
    def h2(self) -> float:
        return 2.0 * self.params.a * self.sim_dt


def path_driving(cfg: RunConfig, path_index: int, n_steps: int | None = None):
    """Driving of one path on the simulation grid.

    The path is sampled at ``cfg.dt`` and, when ``cfg.refine > 1``,
    bridge-refined, so runs differing only in ``refine`` share their
    Brownian path.
    """
    n = cfg.n_total if n_steps is None else n_steps
    drv = sample_driving(cfg.dt, n, cfg.seed, path_index)
    return refine_driving(drv, cfg.refine)


@dataclass
class Estimate:
    """A Monte Carlo mean with standard error and a 95% interval.

    ``drift`` is the change of the estimate when the horizon is doubled;
    ``flag`` is ``"truncation-suspect"`` when that change reaches the CI
    half-width.
    """

    mean: float
    stderr: float
    ci_low: float
    ci_high: float
    n_samples: int
    n_hits: int | None = None
    drift: float | None = None
    flag: str = ""

    @property
    def half_width(self) -> float:
        return 0.5 * (self.ci_high - self.ci_low)


@dataclass
class TwoPointResult:
    joint: Estimate
    marginal_z: Estimate
    marginal_w: Estimate
    ratio: float | None
    envelope: float


def wilson_interval(hits: int, n: int, level: float = LEVEL) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if not (isinstance(hits, (int, np.integer)) and isinstance(n, (int, np.integer))):
        raise TypeError("hits and n must be integers")
    if n < 1 or hits < 0 or hits > n:
        raise DomainError("need 0 <= hits <= n and n >= 1")
    if not 0.0 < level < 1.0:
        raise DomainError("level must lie in (0, 1)")
    z = NormalDist().inv_cdf(0.5 + 0.5 * level)
    ph = hits / n
    z2n = z * z / n
    centre = (ph + 0.5 * z2n) / (1.0 + z2n)
    half = z / (1.0 + z2n) * math.sqrt(ph * (1.0 - ph) / n + z2n / (4.0 * n))
    lo = 0.0 if hits == 0 else max(0.0, centre - half)
    hi = 1.0 if hits == n else min(1.0, centre + half)
    return lo, hi


def binomial_estimate(hits: int, n: int) -> Estimate:
    hits = int(hits)
    lo, hi = wilson_interval(hits, n)
    m = hits / n
    return Estimate(m, math.sqrt(m * (1.0 - m) / n), min(lo, m), max(hi, m), n, hits)


def mean_estimate(values) -> Estimate:
    """Sample mean with a normal 95% interval (compensated summation)."""
    v = [float(x) for x in values]
    n = len(v)
    if n == 0:
        raise DomainError("no samples")
    m = math.fsum(v) / n
    var = math.fsum((x - m) ** 2 for x in v) / (n - 1) if n > 1 else 0.0
    se = math.sqrt(var / n)
    z = NormalDist().inv_cdf(0.5 + 0.5 * LEVEL)
    return Estimate(m, se, m - z * se, m + z * se, n)


def _with_drift(at_t: Estimate, at_2t: Estimate | None) -> Estimate:
    if at_2t is None:
        return at_t
    drift = at_2t.mean - at_t.mean
    flag = "truncation-suspect" if abs(drift) >= at_t.half_width else ""
    return replace(at_t, drift=drift, flag=flag)


# ---------------------------------------------------------------------------
# path execution


def _chunk(args):
    fn, ctx, lo, hi = args
    return [fn(i, ctx) for i in range(lo, hi)]


def run_paths(fn, ctx, cfg: RunConfig) -> list:
    """Evaluate ``fn(path_index, ctx)`` for every path, results in path order."""
    n = cfg.n_paths
    if cfg.workers <= 1 or n < 2:
        return [fn(i, ctx) for i in range(n)]
    nchunks = 4 * cfg.workers
    bounds = [(n * c) // nchunks for c in range(nchunks + 1)]
    jobs = [(fn, ctx, bounds[c], bounds[c + 1]) for c in range(nchunks)]
    out = []
    with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
        for part in ex.map(_chunk, jobs):
            out.extend(part)
    return out


@dataclass(frozen=True)
class _UpsCtx:
    cfg: RunConfig
    zr: np.ndarray
    zi: np.ndarray
    floors: np.ndarray
    checks: np.ndarray
    tol: np.ndarray


def _ups_path(i, ctx: _UpsCtx):
    cfg = ctx.cfg
    drv = path_driving(cfg, i)
    return K.upsilon_checkpoints(ctx.zr, ctx.zi, drv.increments, cfg.h2, ctx.floors, ctx.checks, ctx.tol)


def upsilon_samples(points, floors, cfg: RunConfig) -> np.ndarray:
    """Array ``(n_paths, n_points, n_checks)`` of Upsilon at ``T`` (and ``2T``).

    Values below a point's floor are not exact: only comparisons with
    thresholds at least the floor are meaningful.
    """
    pts = np.array([as_hpoint(z) for z in points])
    checks = np.array([cfg.sim_steps, cfg.sim_total] if cfg.horizon_check else [cfg.sim_steps], np.int64)
    ctx = _UpsCtx(cfg, pts.real.copy(), pts.imag.copy(), np.asarray(floors, float),
                  checks, SWALLOW_REL_TOL * np.abs(pts))
    return np.stack(run_paths(_ups_path, ctx, cfg))


def _hits_estimate(hit_t: np.ndarray, hit_2t: np.ndarray | None) -> Estimate:
    n = hit_t.shape[0]
    e = binomial_estimate(int(np.count_nonzero(hit_t)), n)
    e2 = None if hit_2t is None else binomial_estimate(int(np.count_nonzero(hit_2t)), n)
    return _with_drift(e, e2)


# ---------------------------------------------------------------------------
# conformal-radius events


def estimate_one_point_grid(z: complex, eps_grid, cfg: RunConfig) -> list[Estimate]:
    """``P{Upsilon_T(z) <= eps}`` for every ``eps`` on one shared path set."""
    z = as_hpoint(z)
    eps = [float(e) for e in eps_grid]
    if any(e <= 0 for e in eps):
        raise DomainError("eps must be positive")
    if any(e >= z.imag for e in eps):
        warnings.warn("eps >= Im z: the event is certain", stacklevel=2)
    ups = upsilon_samples([z], [min(eps)], cfg)[:, 0, :]
    out = []
    for e in eps:
        hit2 = ups[:, 1] <= e if cfg.horizon_check else None
        out.append(_hits_estimate(ups[:, 0] <= e, hit2))
    return out


def estimate_one_point(z: complex, eps: float, cfg: RunConfig) -> Estimate:
    """``P{Upsilon_T(z) <= eps}``; compare with ``c* eps^{2-d} G(z)``."""
    return estimate_one_point_grid(z, [eps], cfg)[0]


def one_point_target(z: complex, eps: float, p: SleParams) -> float:
    return p.c_star * eps ** (2.0 - p.d) * green_one_point(z, p)


def estimate_two_point_family(configs, cfg: RunConfig) -> list[TwoPointResult]:
    """Two-point results for several ``(z, w, eps_z, eps_w)`` on shared paths.

    Joint and marginal counters of every configuration use the same driving
    per sample, so the joint count never exceeds either marginal count.
    """
    p = cfg.params
    pts: list[complex] = []
    floors: list[float] = []

    def slot(x, e):
        x = as_hpoint(x)
        if x in pts:
            k = pts.index(x)
            floors[k] = min(floors[k], e)
            return k
        pts.append(x)
        floors.append(e)
        return len(pts) - 1

    plan = []
    for z, w, ez, ew in configs:
        z, w = as_hpoint(z), as_hpoint(w)
        if z == w:
            raise DegenerateInputError("two-point estimate needs z != w")
        if not (ez > 0 and ew > 0):
            raise DomainError("eps must be positive")
        plan.append((z, w, float(ez), float(ew), slot(z, ez), slot(w, ew)))
    ups = upsilon_samples(pts, floors, cfg)
    cols = [0, 1] if cfg.horizon_check else [0]
    res = []
    for z, w, ez, ew, iz, iw in plan:
        hz = [ups[:, iz, c] <= ez for c in cols]
        hw = [ups[:, iw, c] <= ew for c in cols]
        hj = [a & b for a, b in zip(hz, hw)]

        def est(h):
            return _hits_estimate(h[0], h[1] if len(h) > 1 else None)

        ej, emz, emw = est(hj), est(hz), est(hw)
        ratio = ej.mean / (emz.mean * emw.mean) if emz.mean > 0 and emw.mean > 0 else None
        env = two_point_envelope(z, w, p) / (green_one_point(z, p) * green_one_point(w, p))
        res.append(TwoPointResult(ej, emz, emw, ratio, env))
    return res


def estimate_two_point(z: complex, w: complex, eps_z: float, eps_w: float, cfg: RunConfig) -> TwoPointResult:
    """Joint and marginal conformal-radius hit probabilities of ``z`` and ``w``.

    ``envelope`` is the two-point envelope divided by ``G(z) G(w)``, the
    quantity the ratio ``joint / (P_z P_w)`` should track up to constants.
    """
    return estimate_two_point_family([(z, w, eps_z, eps_w)], cfg)[0]


@dataclass(frozen=True)
class _MartCtx:
    cfg: RunConfig
    z: complex
    n_stop: int
    eps_floor: float


def _mart_path(i, ctx: _MartCtx):
    cfg = ctx.cfg
    p = cfg.params
    drv = path_driving(cfg, i, ctx.n_stop)
    return K.stopped_martingale(ctx.z.real, ctx.z.imag, drv.increments, cfg.h2, drv.n_steps,
                                ctx.eps_floor, SWALLOW_REL_TOL * abs(ctx.z), 2.0 - p.d, 4.0 * p.a - 1.0)


def estimate_martingale(z: complex, t_stop: float, eps_floor: float, cfg: RunConfig) -> Estimate:
    """Mean of ``|g'|^{2-d} G(Z)`` stopped at ``t_stop``, at Upsilon <= eps_floor,
    or just before swallowing.  Its expectation is ``G(z)``."""
    z = as_hpoint(z)
    if not eps_floor > 0:
        raise DomainError("eps_floor must be positive")
    if t_stop < 0:
        raise DomainError("t_stop must be nonnegative")
    n_stop = int(round(t_stop / cfg.dt))
    if n_stop == 0:
        g = green_one_point(z, cfg.params)
        return Estimate(g, 0.0, g, g, cfg.n_paths)
    vals = run_paths(_mart_path, _MartCtx(cfg, z, n_stop, float(eps_floor)), cfg)
    return mean_estimate(vals)


# ---------------------------------------------------------------------------
# trace-based events


def _trace_kw(cfg: RunConfig):
    return (cfg.trace_method == "fast", K.BLOCK0, K.N_SAMPLES, K.FAR_RATIO, K.RHO_FACTOR,
            K.LOG_TOL, K.LANES, K.ARC_SAMPLES if cfg.hit_rule == "arc" else 0)


def _passage(drv, lower: np.ndarray, targets: np.ndarray, radii: np.ndarray, cfg: RunConfig):
    """First passage indices under ``cfg.hit_rule``.

    ``lower[p, j]`` bounds the distance from target ``p`` to the hull after
    ``j`` steps from below; steps where it is large are not traced.
    """
    if cfg.hit_rule != "mesh":
        hit, _ = K.first_passage(drv.cumulative, cfg.h2, lower, cfg.margin, targets, radii,
                                 *_trace_kw(cfg))
        return hit
    pts = trace_curve(drv, cfg.params, cfg.trace_method).points
    mesh = float(np.max(np.abs(np.diff(pts))))
    hit = -np.ones(radii.shape, np.int64)
    for p, t in enumerate(targets):
        d = np.abs(pts - t)
        for r, rad in enumerate(radii[p]):
            if rad >= 0.0:
                idx = np.flatnonzero(d[1:] <= rad + mesh)
                if idx.size:
                    hit[p, r] = idx[0] + 1
    return hit


@dataclass(frozen=True)
class _BdryCtx:
    cfg: RunConfig
    ys: tuple


def _bdry_path(i, ctx: _BdryCtx):
    cfg = ctx.cfg
    drv = path_driving(cfg, i)
    radii = np.array([[2.0 * y for y in ctx.ys]])
    lower = K.boundary_lower_bound(drv.cumulative, cfg.h2, 1.0)[None, :]
    hit = _passage(drv, lower, np.array([1.0 + 0j]), radii, cfg)[0]
    s_at = np.zeros(len(ctx.ys))
    for r, y in enumerate(ctx.ys):
        if hit[r] >= 0:
            s = K.sin_arg_path(1.0, y, drv.increments[: hit[r]], cfg.h2)
            s_at[r] = s[hit[r]]
    return hit, s_at


def estimate_boundary_grid(ys, cfg: RunConfig, s_min: float = 0.1) -> list[tuple[Estimate, Estimate]]:
    """Boundary hitting near the point 1 for every ``y`` on shared paths.

    The first estimate is ``P{sigma < T}`` where ``sigma`` is the first time
    the traced polygon comes within ``2y`` of 1; the second adds the
    requirement ``S_sigma(1 + iy) >= s_min``.
    """
    ys = [float(y) for y in ys]
    if any(not (0.0 < y <= 0.25) for y in ys):
        raise DomainError("y must lie in (0, 1/4]")
    order = sorted(range(len(ys)), key=lambda k: -ys[k])
    sorted_ys = tuple(ys[k] for k in order)
    res = run_paths(_bdry_path, _BdryCtx(cfg, sorted_ys), cfg)
    hits = np.stack([r[0] for r in res])
    sv = np.stack([r[1] for r in res])
    nT = cfg.sim_steps
    out: list = [None] * len(ys)
    for col, k in enumerate(order):
        h = hits[:, col]
        by_t = (h >= 0) & (h <= nT)
        cond_t = by_t & (sv[:, col] >= s_min)
        if cfg.horizon_check:
            by_2t = h >= 0
            cond_2t = by_2t & (sv[:, col] >= s_min)
        else:
            by_2t = cond_2t = None
        out[k] = (_hits_estimate(by_t, by_2t), _hits_estimate(cond_t, cond_2t))
    return out


def estimate_boundary_hit(y: float, cfg: RunConfig) -> tuple[Estimate, Estimate]:
    return estimate_boundary_grid([y], cfg)[0]


@dataclass(frozen=True)
class _InteriorCtx:
    cfg: RunConfig
    targets: np.ndarray
    radii: np.ndarray


def _interior_path(i, ctx: _InteriorCtx):
    """First passage indices for interior targets."""
    cfg = ctx.cfg
    drv = path_driving(cfg, i)
    lower = np.stack([0.5 * K.upsilon_path(t.real, t.imag, drv.increments, cfg.h2,
                                           SWALLOW_REL_TOL * abs(t)) for t in ctx.targets])
    return _passage(drv, lower, ctx.targets, ctx.radii, cfg)


def passage_samples(targets, radii, cfg: RunConfig) -> np.ndarray:
    """Array ``(n_paths, n_targets, n_radii)`` of first passage step indices (-1: none)."""
    tg = np.array([as_hpoint(z) for z in targets])
    rd = np.asarray(radii, float)
    if rd.ndim == 1:
        rd = rd[:, None]
    if np.any(np.diff(rd, axis=1) > 0):
        raise DomainError("radii rows must be nonincreasing")
    return np.stack(run_paths(_interior_path, _InteriorCtx(cfg, tg, rd), cfg))


def phi_tail_radius(z: complex, eps: float, p: SleParams) -> float:
    """Distance below which ``Phi(z) <= eps Phi_0(z)``."""
    z = as_hpoint(z)
    return phi_inverse(eps * abs(z) ** (4.0 * p.a - 1.0), z.imag, p)


def estimate_phi_tail_multi(zs, eps_grid, cfg: RunConfig) -> list[list[Estimate]]:
    """Phi-tail probabilities for several points on shared paths."""
    p = cfg.params
    eps = [float(e) for e in eps_grid]
    if any(not (0.0 < e <= 1.0) for e in eps):
        raise DomainError("eps must lie in (0, 1]")
    order = sorted(range(len(eps)), key=lambda k: -eps[k])
    radii = [[phi_tail_radius(z, eps[k], p) for k in order] for z in zs]
    hits = passage_samples(zs, radii, cfg)
    out = []
    for pi in range(len(zs)):
        row: list = [None] * len(eps)
        for col, k in enumerate(order):
            h = hits[:, pi, col]
            by_2t = (h >= 0) if cfg.horizon_check else None
            row[k] = _hits_estimate((h >= 0) & (h <= cfg.sim_steps), by_2t)
        out.append(row)
    return out


def estimate_phi_tail(z: complex, eps_grid, cfg: RunConfig) -> list[Estimate]:
    """``P{Phi_T(z) <= eps Phi_0(z)}`` for each ``eps``, with ``Phi`` built from
    the distance to the traced curve."""
    return estimate_phi_tail_multi([z], eps_grid, cfg)[0]


def _ordered(first: np.ndarray, order) -> np.ndarray:
    """Per path: every point reached and reached in the given order.

    Equal first-passage steps count as ordered by point index.
    """
    ok = np.all(first >= 0, axis=1)
    for a, b in zip(order[:-1], order[1:]):
        fa, fb = first[:, a], first[:, b]
        ok &= (fa < fb) | ((fa == fb) & (a < b))
    return ok


def ordered_multipoint_indicators(points, eps, cfg: RunConfig, orders=None) -> dict:
    """Per-path indicators of the ordered events, keyed by order tuple."""
    pts = [as_hpoint(z) for z in points]
    if len(eps) != len(pts):
        raise DomainError("points and eps must have equal length")
    if len(set(pts)) != len(pts):
        raise DegenerateInputError("points must be distinct")
    first_all = passage_samples(pts, [[float(e)] for e in eps], cfg)[:, :, 0]
    if orders is None:
        orders = [tuple(range(len(pts)))]
    res = {}
    for o in orders:
        both = _ordered(first_all, o)
        within = both & np.all(first_all <= cfg.sim_steps, axis=1)
        res[tuple(o)] = (within, both)
    return res


def estimate_ordered_multipoint(points, eps, cfg: RunConfig, order=None) -> Estimate:
    """``P{tau^1 < ... < tau^n < T}`` with ``tau^j`` the first time the traced
    polygon comes within ``eps_j`` of ``points[j]``."""
    if len(points) != len(eps):
        raise DomainError("points and eps must have equal length")
    o = tuple(range(len(points))) if order is None else tuple(order)
    within, both = ordered_multipoint_indicators(points, eps, cfg, [o])[o]
    return _hits_estimate(within, both if cfg.horizon_check else None)


def all_orderings(n: int):
    return list(permutations(range(n)))
