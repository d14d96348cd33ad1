import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import beta as beta_dist
from scipy.stats import norm

from slelab.core import DegenerateInputError, DomainError, green_one_point, params_from_kappa
from slelab.estimators import (
    Estimate,
    RunConfig,
    all_orderings,
    binomial_estimate,
    estimate_boundary_grid,
    estimate_boundary_hit,
    estimate_martingale,
    estimate_one_point,
    estimate_one_point_grid,
    estimate_ordered_multipoint,
    estimate_phi_tail,
    estimate_two_point,
    mean_estimate,
    ordered_multipoint_indicators,
    passage_samples,
    phi_tail_radius,
    upsilon_samples,
    wilson_interval,
)
from slelab.loewner import sample_driving, trace_curve

P83 = params_from_kappa(8 / 3)


def small(**kw):
    base = dict(kappa=8 / 3, dt=1e-3, horizon=1.0, n_paths=200, seed=3)
    base.update(kw)
    return RunConfig(**base)


def wilson_oracle(k, n, level=0.95):
    # solve |p_hat - p| = z sqrt(p (1 - p) / n) for p directly
    z = norm.ppf(0.5 + level / 2)
    ph = k / n
    a = 1 + z * z / n
    b = -(2 * ph + z * z / n)
    c = ph * ph
    disc = math.sqrt(max(b * b - 4 * a * c, 0.0))
    return (-b - disc) / (2 * a), (-b + disc) / (2 * a)


def check_estimate(e: Estimate):
    assert e.ci_low <= e.mean <= e.ci_high
    assert e.stderr >= 0
    if e.n_hits is not None:
        assert 0 <= e.n_hits <= e.n_samples
        assert e.mean == e.n_hits / e.n_samples
        assert 0 <= e.ci_low and e.ci_high <= 1


# ---------------------------------------------------------------------------
# intervals


def test_wilson_example():
    lo, hi = wilson_interval(50, 100, 0.95)
    assert lo == pytest.approx(0.404, abs=5e-4)
    assert hi == pytest.approx(0.596, abs=5e-4)


@given(st.integers(1, 5000), st.data())
@settings(max_examples=200, deadline=None)
def test_wilson_matches_quadratic_solution(n, data):
    k = data.draw(st.integers(0, n))
    lo, hi = wilson_interval(k, n)
    elo, ehi = wilson_oracle(k, n)
    assert lo == pytest.approx(elo, abs=1e-12)
    assert hi == pytest.approx(ehi, abs=1e-12)


def test_wilson_boundary_cases():
    z = norm.ppf(0.975)
    for n in (10, 100, 1000):
        lo, hi = wilson_interval(0, n)
        assert lo == 0.0
        assert hi == pytest.approx(z * z / (n + z * z), rel=1e-12)
        lo, hi = wilson_interval(n, n)
        assert lo < 1.0 and hi == pytest.approx(1.0)


@pytest.mark.parametrize("k,n,level", [(-1, 10, 0.95), (11, 10, 0.95), (0, 0, 0.95), (1, 10, 1.0)])
def test_wilson_rejects_bad_input(k, n, level):
    with pytest.raises(DomainError):
        wilson_interval(k, n, level)


def test_wilson_coverage_against_exact_binomial():
    # coverage of the nominal 95% interval is close to 95% for moderate n p
    n, p = 400, 0.1
    k = np.arange(n + 1)
    from scipy.stats import binom

    w = binom.pmf(k, n, p)
    cover = sum(wi for ki, wi in zip(k, w) if wilson_interval(int(ki), n)[0] <= p <= wilson_interval(int(ki), n)[1])
    assert 0.93 <= cover <= 0.97
    # the Clopper-Pearson interval is wider than Wilson for interior counts
    lo, hi = wilson_interval(40, n)
    assert beta_dist.ppf(0.025, 40, n - 39) <= lo


def test_mean_estimate_and_binomial():
    e = mean_estimate([1.0, 2.0, 3.0, 4.0])
    assert e.mean == 2.5
    assert e.stderr == pytest.approx(math.sqrt(np.var([1, 2, 3, 4], ddof=1) / 4))
    check_estimate(e)
    b = binomial_estimate(7, 20)
    check_estimate(b)
    with pytest.raises(DomainError):
        mean_estimate([])


# ---------------------------------------------------------------------------
# run configuration


@pytest.mark.parametrize("kw", [dict(dt=0.0), dict(horizon=-1.0), dict(n_paths=0), dict(refine=0),
                                dict(trace_method="bogus"), dict(hit_rule="bogus"),
                                dict(horizon=1e-4, dt=1e-3)])
def test_run_config_validation(kw):
    with pytest.raises(DomainError):
        small(**kw)


def test_run_config_grid():
    cfg = small(horizon=2.0, refine=5)
    assert cfg.n_steps == 2000
    assert cfg.n_total == 4000
    assert cfg.sim_steps == 10000
    assert cfg.sim_dt == pytest.approx(2e-4)


# ---------------------------------------------------------------------------
# one point


def test_one_point_certain_event():
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        e = estimate_one_point(1j, 1.0, small(n_paths=20))
    assert e.mean == 1.0
    assert any("certain" in str(x.message) for x in w)


def test_one_point_monotone_in_eps():
    cfg = small(n_paths=300)
    grid = [0.05, 0.1, 0.2, 0.4, 0.8]
    ests = estimate_one_point_grid(1j, grid, cfg)
    for e in ests:
        check_estimate(e)
    assert all(a.n_hits <= b.n_hits for a, b in zip(ests, ests[1:]))
    # per-path coupling: a hit at eps is a hit at every larger eps
    ups = upsilon_samples([1j], [0.05], cfg)[:, 0, 0]
    for lo, hi in zip(grid, grid[1:]):
        assert np.all((ups <= lo) <= (ups <= hi))


def test_one_point_grid_matches_single_calls():
    cfg = small(n_paths=100)
    grid = estimate_one_point_grid(0.5 + 1j, [0.1, 0.3], cfg)
    assert grid[0].n_hits == estimate_one_point(0.5 + 1j, 0.1, cfg).n_hits
    assert grid[1].n_hits == estimate_one_point(0.5 + 1j, 0.3, cfg).n_hits


def test_one_point_scale_invariance():
    # Upsilon(2i) under the scaled driving equals 2 Upsilon(i): equal eps / Im z
    # gives equal probabilities once the horizon is scaled by 4
    a = estimate_one_point(1j, 0.2, RunConfig(horizon=4.0, n_paths=2000, seed=1, horizon_check=False))
    b = estimate_one_point(2j, 0.4, RunConfig(horizon=16.0, n_paths=2000, seed=2, horizon_check=False))
    assert a.ci_low <= b.ci_high and b.ci_low <= a.ci_high


def test_one_point_equal_eps_ratio():
    # at equal absolute eps the probabilities scale like G, i.e. by 2^{d-2}
    cfg = RunConfig(horizon=16.0, n_paths=4000, seed=4, horizon_check=False)
    a = estimate_one_point(1j, 0.1, cfg)
    b = estimate_one_point(2j, 0.1, cfg)
    ratio = b.mean / a.mean
    target = 2.0 ** (P83.d - 2.0)
    rel = math.hypot(a.stderr / a.mean, b.stderr / b.mean)
    assert abs(math.log(ratio / target)) <= 3 * rel + 0.1


def test_ci_width_scales_with_sqrt_n():
    e1 = estimate_one_point(1j, 0.2, small(n_paths=1000, horizon_check=False))
    e4 = estimate_one_point(1j, 0.2, small(n_paths=4000, horizon_check=False))
    factor = (e1.ci_high - e1.ci_low) / (e4.ci_high - e4.ci_low)
    assert 1.7 <= factor <= 2.3


def test_horizon_check_drift_fields():
    e = estimate_one_point(1j, 0.3, small(n_paths=200))
    assert e.drift is not None and e.drift >= 0
    assert e.flag in ("", "truncation-suspect")
    assert (e.flag == "truncation-suspect") == (abs(e.drift) >= e.half_width)
    e2 = estimate_one_point(1j, 0.3, small(n_paths=200, horizon_check=False))
    assert e2.drift is None and e2.flag == ""
    assert e2.n_hits == e.n_hits


# ---------------------------------------------------------------------------
# two point


def test_two_point_joint_below_marginals():
    cfg = small(n_paths=300)
    res = estimate_two_point(0.25j, 1j, 0.05, 0.2, cfg)
    for e in (res.joint, res.marginal_z, res.marginal_w):
        check_estimate(e)
    assert res.joint.n_hits <= min(res.marginal_z.n_hits, res.marginal_w.n_hits)
    if res.marginal_z.mean > 0 and res.marginal_w.mean > 0:
        assert res.ratio == pytest.approx(res.joint.mean / (res.marginal_z.mean * res.marginal_w.mean))
    assert res.envelope > 0


def test_two_point_certain_events():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = estimate_two_point(0.5j, 1j, 0.5, 1.0, small(n_paths=30))
    assert res.joint.mean == res.marginal_z.mean == res.marginal_w.mean == 1.0
    assert res.ratio == 1.0


def test_two_point_degenerate():
    with pytest.raises(DegenerateInputError):
        estimate_two_point(1j, 1j, 0.1, 0.1, small(n_paths=5))


def test_two_point_ratio_positive():
    # the joint probability is not small compared with the product
    res = estimate_two_point(0.5j, 1j, 0.1, 0.2, small(horizon=4.0, n_paths=1500))
    assert res.ratio is not None and res.ratio > 0


# ---------------------------------------------------------------------------
# martingale


def test_martingale_t_stop_zero_is_exact():
    e = estimate_martingale(1 + 1j, 0.0, 0.05, small(n_paths=10))
    assert e.mean == green_one_point(1 + 1j, P83)
    assert e.stderr == 0.0


@pytest.mark.parametrize("z", [1j, 1 + 1j])
def test_martingale_small_run(z):
    e = estimate_martingale(z, 0.5, 0.05, small(n_paths=2000))
    g = green_one_point(z, P83)
    assert abs(e.mean - g) <= 4 * e.stderr


def test_martingale_validation():
    with pytest.raises(DomainError):
        estimate_martingale(1j, 0.5, 0.0, small(n_paths=5))
    with pytest.raises(DomainError):
        estimate_martingale(1j, -0.5, 0.05, small(n_paths=5))


# ---------------------------------------------------------------------------
# boundary


def test_boundary_conditional_inclusion():
    cfg = small(n_paths=300, horizon=2.0)
    for full, cond in estimate_boundary_grid([0.05, 0.1, 0.25], cfg):
        check_estimate(full)
        check_estimate(cond)
        assert cond.n_hits <= full.n_hits


def test_boundary_grid_is_monotone_and_matches_single():
    cfg = small(n_paths=200, horizon=2.0)
    res = estimate_boundary_grid([0.2, 0.05, 0.1], cfg)
    assert res[1][0].n_hits <= res[2][0].n_hits <= res[0][0].n_hits
    single = estimate_boundary_hit(0.1, cfg)
    assert single[0].n_hits == res[2][0].n_hits


def test_boundary_nondegenerate():
    full, _ = estimate_boundary_hit(0.25, small(n_paths=400, horizon=2.0))
    assert 0.0 < full.mean < 1.0


@pytest.mark.parametrize("y", [0.0, -0.1, 0.3])
def test_boundary_domain(y):
    with pytest.raises(DomainError):
        estimate_boundary_hit(y, small(n_paths=5))


def test_boundary_restriction_oracle_small_run():
    # kappa = 8/3 restriction: P{curve hits B(1, r)} = 1 - (1 - r^2)^{5/8}
    cfg = RunConfig(horizon=4.0, n_paths=1500, seed=9)
    full, _ = estimate_boundary_hit(0.2, cfg)
    exact = 1 - (1 - 0.4**2) ** 0.625
    assert full.ci_low - 0.01 <= exact <= full.ci_high + 0.01


@pytest.mark.parametrize("rule", ["arc", "polyline", "mesh"])
def test_boundary_hit_rules_ordering(rule):
    # the arc rule sees every hull piece, so it counts at least the polyline tips;
    # the mesh rule inflates the radius and counts the most
    cfg = small(n_paths=120, horizon=1.0, hit_rule=rule)
    full, _ = estimate_boundary_hit(0.1, cfg)
    check_estimate(full)
    if rule == "mesh":
        arc, _ = estimate_boundary_hit(0.1, small(n_paths=120, horizon=1.0))
        assert full.n_hits >= arc.n_hits


# ---------------------------------------------------------------------------
# trace events


def test_phi_tail_radius_inverts_phi():
    from slelab.core import phi_value

    for z in (1j, 2j, 0.5 + 1j):
        for e in (1.0, 0.5, 0.1):
            r = phi_tail_radius(z, e, P83)
            assert phi_value(r, z.imag, P83) == pytest.approx(e * abs(z) ** (4 * P83.a - 1))


def test_phi_tail_positive_and_monotone():
    ests = estimate_phi_tail(1j, [1.0, 0.5, 0.25], small(n_paths=200, horizon=2.0))
    assert ests[0].mean > 0
    assert ests[0].n_hits >= ests[1].n_hits >= ests[2].n_hits


def test_phi_tail_domain():
    with pytest.raises(DomainError):
        estimate_phi_tail(1j, [1.5], small(n_paths=5))


def test_passage_samples_agree_with_trace():
    cfg = small(n_paths=8, horizon=1.0, hit_rule="polyline", horizon_check=False)
    hits = passage_samples([1j], [[0.5, 0.2]], cfg)
    from slelab.estimators import path_driving
    from slelab.loewner import CurveTrace, polyline_distance

    for i in range(8):
        pts = trace_curve(path_driving(cfg, i), P83).points
        for r, rad in enumerate([0.5, 0.2]):
            exp = -1
            for j in range(1, len(pts)):
                if polyline_distance(1j, CurveTrace(np.arange(2.0), pts[j - 1: j + 1])) <= rad:
                    exp = j
                    break
            assert hits[i, 0, r] == exp


def test_passage_radii_validation():
    with pytest.raises(DomainError):
        passage_samples([1j], [[0.1, 0.2]], small(n_paths=2))


# ---------------------------------------------------------------------------
# ordered multi-point


def test_orderings_partition_the_joint_event():
    pts = [1j, 0.5 + 0.7j, -0.6 + 1.2j]
    eps = [0.3, 0.25, 0.3]
    cfg = small(n_paths=150, horizon=2.0)
    ind = ordered_multipoint_indicators(pts, eps, cfg, all_orderings(3))
    total_t = sum(v[0].astype(int) for v in ind.values())
    first = passage_samples(pts, [[e] for e in eps], cfg)[:, :, 0]
    joint_t = np.all((first >= 0) & (first <= cfg.sim_steps), axis=1)
    assert np.array_equal(total_t, joint_t.astype(int))
    total_2t = sum(v[1].astype(int) for v in ind.values())
    assert np.array_equal(total_2t, np.all(first >= 0, axis=1).astype(int))


def test_multipoint_single_point_reduces_to_passage():
    cfg = small(n_paths=100, horizon=2.0)
    e = estimate_ordered_multipoint([1j], [0.3], cfg)
    first = passage_samples([1j], [[0.3]], cfg)[:, 0, 0]
    assert e.n_hits == int(np.count_nonzero((first >= 0) & (first <= cfg.sim_steps)))


def test_multipoint_mirror_symmetric_orderings():
    z, w = -0.5 + 0.8j, 0.5 + 0.8j
    cfg = RunConfig(horizon=2.0, n_paths=1500, seed=12)
    ind = ordered_multipoint_indicators([z, w], [0.3, 0.3], cfg, [(0, 1), (1, 0)])
    a = binomial_estimate(int(ind[(0, 1)][0].sum()), cfg.n_paths)
    b = binomial_estimate(int(ind[(1, 0)][0].sum()), cfg.n_paths)
    assert a.ci_low <= b.ci_high and b.ci_low <= a.ci_high


def test_multipoint_validation():
    with pytest.raises(DomainError):
        estimate_ordered_multipoint([1j, 2j], [0.1], small(n_paths=2))
    with pytest.raises(DegenerateInputError):
        estimate_ordered_multipoint([1j, 1j], [0.1, 0.1], small(n_paths=2))


# ---------------------------------------------------------------------------
# determinism


def test_results_independent_of_workers():
    cfg1 = small(n_paths=64, horizon=0.5)
    cfg2 = small(n_paths=64, horizon=0.5, workers=2)
    assert estimate_one_point_grid(1j, [0.3, 0.5], cfg1) == estimate_one_point_grid(1j, [0.3, 0.5], cfg2)
    assert estimate_boundary_grid([0.2], cfg1) == estimate_boundary_grid([0.2], cfg2)
    assert estimate_martingale(1j, 0.3, 0.05, cfg1) == estimate_martingale(1j, 0.3, 0.05, cfg2)


def test_repeat_runs_identical():
    cfg = small(n_paths=50, horizon=0.5)
    assert estimate_two_point(0.5j, 1j, 0.1, 0.2, cfg) == estimate_two_point(0.5j, 1j, 0.1, 0.2, cfg)
    assert estimate_phi_tail(1j, [0.5], cfg) == estimate_phi_tail(1j, [0.5], cfg)


def test_seed_changes_results():
    a = upsilon_samples([1j], [0.1], small(n_paths=20, seed=1))
    b = upsilon_samples([1j], [0.1], small(n_paths=20, seed=2))
    assert not np.array_equal(a, b)


def test_path_prefix_shared_between_horizons():
    # the T run is a prefix of the 2T run, so Upsilon at T agrees
    a = upsilon_samples([1j], [0.01], small(n_paths=20, horizon=1.0, horizon_check=True))
    b = upsilon_samples([1j], [0.01], small(n_paths=20, horizon=1.0, horizon_check=False))
    assert np.array_equal(a[:, :, 0], b[:, :, 0])
    d = sample_driving(1e-3, 1000, 3, 0)
    assert d.n_steps == 1000
