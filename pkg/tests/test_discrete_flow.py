import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize_scalar

from kestrel.discrete_flow import (
    DiscreteConfig,
    DiscreteState,
    GridSpec,
    classify,
    critical_point,
    criterion_blowup_1,
    criterion_blowup_2,
    criterion_global,
    distance_to_polyline,
    energy,
    entropy_part,
    euler_residual,
    gauge,
    gradient,
    hessian,
    identity_residuals,
    integrate,
    interaction_part,
    overlay_curves,
    phase_portrait,
    separatrix,
    separatrix_side,
    verify_discrete_GNS,
)

PAPER = DiscreteConfig(0.5, 1.6)
gaps = st.floats(0.01, 10.0)


def state(u, v):
    return DiscreteState.from_gaps([u, v])


def random_state(rng, n):
    return DiscreteState.from_gaps(rng.uniform(0.05, 3.0, n - 1))


# configuration and state -----------------------------------------------------

def test_config_chi():
    assert PAPER.chi == pytest.approx(0.4)
    assert DiscreteConfig(0.5, 2.0, 7).chi == pytest.approx(0.25)


@pytest.mark.parametrize("kw", [dict(gamma=0.0, mass=1.0), dict(gamma=1.0, mass=1.0),
                                dict(gamma=0.5, mass=0.0), dict(gamma=0.5, mass=1.0, n_points=2)])
def test_config_rejects(kw):
    with pytest.raises(ValueError):
        DiscreteConfig(**kw)


def test_state_invariants():
    s = state(0.7, 1.3)
    assert abs(s.X.sum()) < 1e-15
    assert s.norm2 == pytest.approx(2 / 3 * (0.49 + 1.69 + 0.91), rel=1e-14)
    with pytest.raises(ValueError):
        DiscreteState([0.0, -1.0, 1.0])
    with pytest.raises(ValueError):
        DiscreteState([0.0, 1.0, 2.0])


# energy and gradient ---------------------------------------------------------

def test_energy_example():
    assert energy(PAPER, state(1, 1)) == pytest.approx(-0.8 * (2 + 2 ** -0.5), rel=1e-14)
    assert energy(PAPER, state(1, 1)) == pytest.approx(-2.16569, abs=1e-5)


@settings(max_examples=50, deadline=None)
@given(gaps, gaps)
def test_energy_swap_symmetry(u, v):
    assert energy(PAPER, state(u, v)) == pytest.approx(energy(PAPER, state(v, u)), rel=1e-12)


@pytest.mark.parametrize("n", [3, 4, 6])
def test_energy_dilation_split(n):
    cfg = DiscreteConfig(0.5, 1.6, n)
    s = random_state(np.random.default_rng(n), n)
    lam = 2.0
    U, W = entropy_part(cfg, s), interaction_part(cfg, s)
    expected = -(n - 1) * math.log(lam) + U - lam ** -cfg.gamma * W
    assert energy(cfg, DiscreteState(lam * s.X)) == pytest.approx(expected, rel=1e-13)


def test_energy_nonpositive_gap():
    with pytest.raises(ValueError):
        energy(PAPER, np.array([0.0, 0.0, 1.0]))


@pytest.mark.parametrize("n", [3, 4, 5])
def test_gradient_finite_differences(n):
    cfg = DiscreteConfig(0.3, 2.0, n)
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(100):
        X = random_state(rng, n).X
        g = gradient(cfg, X)
        fd = np.empty(n)
        h = 1e-6 * np.max(np.abs(X))
        for k in range(n):
            e = np.zeros(n)
            e[k] = h
            fd[k] = (energy(cfg, X + e) - energy(cfg, X - e)) / (2 * h)
        worst = max(worst, np.max(np.abs(fd - g)) / np.max(np.abs(g)))
    assert worst < 1e-6


def test_gradient_matches_three_point_system():
    gam, h = PAPER.gamma, PAPER.chi
    X1, X2, X3 = state(0.4, 0.9).X
    rhs = np.array([
        -1 / (X2 - X1) + h * ((X3 - X1) ** (-gam - 1) + (X2 - X1) ** (-gam - 1)),
        1 / (X2 - X1) - 1 / (X3 - X2) + h * ((X3 - X2) ** (-gam - 1) - (X2 - X1) ** (-gam - 1)),
        1 / (X3 - X2) - h * ((X3 - X2) ** (-gam - 1) + (X3 - X1) ** (-gam - 1)),
    ])
    assert np.allclose(-gradient(PAPER, state(0.4, 0.9)), rhs, rtol=1e-14)


def test_gap_dynamics_match_reduced_system():
    gam, h = PAPER.gamma, PAPER.chi
    u, v = 0.4, 0.9
    f = -gradient(PAPER, state(u, v))
    du = 2 / u - 1 / v + h * (v ** (-gam - 1) - 2 * u ** (-gam - 1) - (u + v) ** (-gam - 1))
    dv = 2 / v - 1 / u + h * (u ** (-gam - 1) - 2 * v ** (-gam - 1) - (u + v) ** (-gam - 1))
    assert f[1] - f[0] == pytest.approx(du, rel=1e-13)
    assert f[2] - f[1] == pytest.approx(dv, rel=1e-13)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.01, 5.0), min_size=2, max_size=6), st.floats(0.05, 0.95))
def test_gradient_sums_to_zero_and_euler(gs, gamma):
    cfg = DiscreteConfig(gamma, 1.3, len(gs) + 1)
    s = DiscreteState.from_gaps(gs)
    g = gradient(cfg, s)
    assert abs(g.sum()) <= 1e-12 * np.sum(np.abs(g))
    scale = 1 + cfg.gamma * interaction_part(cfg, s)
    assert abs(euler_residual(cfg, s)) < 1e-8 * scale


def test_hessian_finite_differences():
    cfg = DiscreteConfig(0.5, 1.6, 4)
    X = random_state(np.random.default_rng(3), 4).X
    H = hessian(cfg, X)
    h = 1e-6
    fd = np.column_stack([(gradient(cfg, X + h * e) - gradient(cfg, X - h * e)) / (2 * h)
                          for e in np.eye(4)])
    assert np.allclose(H, fd, rtol=1e-6, atol=1e-6 * np.abs(H).max())
    assert np.allclose(H @ np.ones(4), 0, atol=1e-10 * np.abs(H).max())


# integration -----------------------------------------------------------------

def test_collapse_example():
    assert criterion_blowup_1(PAPER, state(0.2, 0.2)).lhs == pytest.approx(0.08)
    out = integrate(PAPER, state(0.2, 0.2))
    assert out.classification == "Collapse"
    assert out.gap_index in (0, 1)
    assert out.time < 0.1


def test_dispersion_example():
    lhs = criterion_global(PAPER, 5, 5).lhs
    assert lhs == pytest.approx(0.35777, abs=1e-5)
    out = integrate(PAPER, state(5, 5), t_max=1e7)
    assert out.classification == "Dispersion"


def test_undecided_at_short_horizon():
    out = integrate(PAPER, state(5, 5), t_max=10.0)
    assert out.classification == "Undecided"
    assert out.reason == "t_max reached"
    assert out.time == pytest.approx(10.0)


def test_symmetric_orbit_stays_symmetric():
    for g0 in (0.2, 0.5, 3.0):
        tr = integrate(PAPER, state(g0, g0), t_max=1e7).trajectory
        gp = np.diff(tr.X, axis=1)
        assert np.max(np.abs(gp[:, 0] - gp[:, 1]) / gp.max(axis=1)) < 1e-8


def test_energy_monotone_and_identities():
    rng = np.random.default_rng(5)
    for _ in range(10):
        s = random_state(rng, 3)
        out = integrate(PAPER, s, t_max=1e7)
        tr = out.trajectory
        tol = 10 * (1e-10 + 1e-8 * np.abs(tr.G[:-1]))
        assert np.all(np.diff(tr.G) <= tol)
        e, n = identity_residuals(PAPER, tr.X)
        assert e < 1e-6 and n < 1e-6
        # centre of mass drift per unit time
        drift = np.max(np.abs(tr.X.sum(axis=1)))
        assert drift < 1e-10 * max(1.0, tr.t[-1])


def test_lyapunov_quantity_decreases_in_global_region():
    gam = PAPER.gamma
    for u0, v0 in ((5.0, 5.0), (2.0, 9.0), (1.5, 4.0)):
        assert criterion_global(PAPER, u0, v0).verdict
        tr = integrate(PAPER, state(u0, v0), t_max=1e7).trajectory
        gp = np.diff(tr.X, axis=1)
        L = (gp[:, 0] ** -gam + gp[:, 1] ** -gam) / gam
        assert np.all(np.diff(L) <= 1e-9 * L[:-1])


def test_general_n_flow():
    cfg = DiscreteConfig(0.5, 1.6, 5)
    out = integrate(cfg, DiscreteState.from_gaps([0.05] * 4))
    assert out.classification == "Collapse"
    out = integrate(cfg, DiscreteState.from_gaps([5.0] * 4), t_max=1e7)
    assert out.classification == "Dispersion"


def test_classify_is_chunking_independent(monkeypatch):
    rng = np.random.default_rng(2)
    X0 = np.array([random_state(rng, 3).X for _ in range(40)])
    a = classify(PAPER, X0)
    monkeypatch.setenv("KESTREL_THREADS", "4")
    b = classify(PAPER, X0)
    assert list(a) == list(b)


# criteria --------------------------------------------------------------------

def test_criterion_1_threshold():
    rep = criterion_blowup_1(PAPER, state(0.2, 0.2))
    assert rep.rhs == pytest.approx(0.1296, rel=1e-14)
    assert rep.verdict


def test_criterion_1_boundary_is_false():
    # walk the scale of a ray in ulps until |X|² equals the threshold exactly;
    # not every ray admits such a state, so try several
    target = criterion_blowup_1(PAPER, state(1, 1)).rhs
    for u in np.linspace(0.1, 1.0, 10):
        base = state(u, 0.3).X
        k = math.sqrt(target / (base @ base))
        for _ in range(200):
            X = k * base
            n2 = X @ X
            if n2 == target:
                rep = criterion_blowup_1(PAPER, X)
                assert rep.status == "boundary" and rep.verdict is False and rep.margin == 0.0
                return
            k = np.nextafter(k, 0.0 if n2 > target else 1.0)
    raise AssertionError("no exactly representable boundary state found")


def test_criterion_2_critical_point_sides():
    cp = critical_point(PAPER)
    rep = criterion_blowup_2(PAPER, cp)
    u = cp.gaps[0]
    assert rep.lhs == pytest.approx(2 * u * u, rel=1e-12)
    assert rep.rhs == pytest.approx(2 * math.exp(-energy(PAPER, cp) - 4), rel=1e-12)
    assert np.isfinite(rep.margin)


def test_criterion_nesting_grid():
    u = np.linspace(0.01, 2.0, 200)
    inside1 = inside2 = 0
    for a in u:
        for b in u[::10]:
            s = state(a, b)
            c1 = criterion_blowup_1(PAPER, s).verdict
            c2 = criterion_blowup_2(PAPER, s).verdict
            cg = criterion_global(PAPER, a, b).verdict
            assert not c1 or c2
            assert not (cg and (c1 or c2))
            inside1 += c1
            inside2 += c2
    assert 0 < inside1 < inside2


@pytest.mark.parametrize("gamma", np.linspace(0.01, 0.99, 50))
def test_comparison_inequality(gamma):
    assert 2 / gamma * math.log(3 / (2 + 2 ** -gamma)) < math.log(2)


def test_criterion_1_general_n_reduces():
    cfg = DiscreteConfig(0.4, 2.0, 4)
    chi, P, N, g = cfg.chi, 6, 4, 0.4
    expect = (chi * P ** (1 + g / 2) * N ** (-g / 2) / (N - 1)) ** (2 / g)
    rep = criterion_blowup_1(cfg, DiscreteState.from_gaps([1, 1, 1]))
    assert rep.rhs == pytest.approx(expect, rel=1e-14)


def test_criterion_global_examples():
    assert criterion_global(PAPER, 5, 5).verdict
    rep = criterion_global(PAPER, 0.2, 0.2)
    assert rep.lhs == pytest.approx(1.78885, abs=1e-5) and not rep.verdict
    b = (2 * PAPER.chi) ** 2
    assert b == pytest.approx(0.64)
    assert criterion_global(PAPER, b, b).lhs == pytest.approx(1.0, abs=1e-15)
    assert criterion_global(PAPER, b * 1.001, b * 1.001).verdict
    assert not criterion_global(PAPER, b * 0.999, b * 0.999).verdict
    with pytest.raises(ValueError):
        criterion_global(DiscreteConfig(0.5, 1.6, 4), 1, 1)


# landscape -------------------------------------------------------------------

@pytest.mark.parametrize("lam", [0.5, 2.0, 10.0])
def test_gauge_zero_homogeneous(lam):
    for n in (3, 4):
        cfg = DiscreteConfig(0.5, 1.6, n)
        s = random_state(np.random.default_rng(n), n)
        assert gauge(cfg, DiscreteState(lam * s.X)) == pytest.approx(gauge(cfg, s), abs=1e-8)


def test_gauge_is_ray_maximum():
    s = state(0.3, 1.7)
    res = minimize_scalar(lambda t: -energy(PAPER, DiscreteState(math.exp(t) * s.X)),
                          bounds=(-10, 10), method="bounded", options={"xatol": 1e-12})
    assert gauge(PAPER, s) == pytest.approx(-res.fun, abs=1e-9)
    # the maximizer sits where W = 2/γ, i.e. λ* = (γW/2)^(1/γ)
    lam = (PAPER.gamma * interaction_part(PAPER, s) / 2) ** (1 / PAPER.gamma)
    assert math.log(lam) == pytest.approx(res.x, abs=1e-5)
    star = DiscreteState(lam * s.X)
    assert interaction_part(PAPER, star) == pytest.approx(2 / PAPER.gamma, rel=1e-12)
    assert gauge(PAPER, s) == pytest.approx(entropy_part(PAPER, star) - 2 / PAPER.gamma,
                                            abs=1e-12)


def test_critical_point_closed_form():
    cp = critical_point(PAPER)
    u_star = (PAPER.chi * (2 + 2 ** -0.5) / 2) ** 2
    assert u_star == pytest.approx(0.2931371, abs=1e-7)
    assert np.allclose(cp.gaps, u_star, rtol=1e-12)
    assert np.linalg.norm(gradient(PAPER, cp)) < 1e-10


@pytest.mark.parametrize("n", [4, 5, 6, 8, 16])
def test_critical_point_general_n(n):
    cfg = DiscreteConfig(0.5, 1.6, n)
    cp = critical_point(cfg)
    assert np.linalg.norm(gradient(cfg, cp)) < 1e-10
    # on the maximal hypersurface
    assert interaction_part(cfg, cp) == pytest.approx((n - 1) / cfg.gamma, rel=1e-9)
    # Newton keeps the mirror symmetry of the equal-gap seed
    assert np.allclose(cp.gaps, cp.gaps[::-1], rtol=1e-8)


@pytest.fixture(scope="module")
def manifold():
    return separatrix(PAPER, 6.0)


def test_separatrix_spectrum(manifold):
    assert manifold.kind == "source"
    assert np.all(manifold.eigenvalues > 0)
    diag = np.array([1, 1]) / math.sqrt(2)
    # symmetric and antisymmetric eigen-directions
    assert abs(abs(manifold.eigenvectors[:, 1] @ diag) - 1) < 1e-10
    assert abs(manifold.eigenvectors[:, 0] @ diag) < 1e-10


def test_separatrix_branch_outcomes(manifold):
    b = manifold.branches
    # along the diagonal: outward disperses, inward collapses
    assert b[(1, 1.0)][-1].min() > 1.0
    assert b[(1, -1.0)][-1].max() < 1e-4
    # the antisymmetric branches collapse one gap
    assert b[(0, 1.0)][-1].min() < 1e-4 and b[(0, -1.0)][-1].min() < 1e-4


def test_separatrix_asymptote(manifold):
    upper, lower = manifold.separatrix
    assert np.allclose(upper[0], manifold.critical_gaps)
    assert upper[-1, 1] == pytest.approx(6.0)
    u_inf = PAPER.chi ** (1 / PAPER.gamma)
    assert u_inf < upper[-1, 0] < u_inf * 1.05
    assert np.allclose(lower, upper[:, ::-1])


def test_separatrix_predicts_outcome(manifold):
    pts = np.array([[0.5, 0.5], [2.0, 2.0], [0.2, 2.5], [0.25, 2.5], [0.1, 0.4], [2.5, 0.2]])
    side = separatrix_side(manifold, pts[:, 0], pts[:, 1])
    d = np.minimum(distance_to_polyline(pts, manifold.separatrix[0]),
                   distance_to_polyline(pts, manifold.separatrix[1]))
    classes = classify(PAPER, np.array([state(*p).X for p in pts]))
    for s, c, dist in zip(side, classes, d):
        if dist > 1e-2:
            assert (c == "Dispersion") == s


def test_distance_to_polyline():
    line = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]])
    d = distance_to_polyline(np.array([[0.5, 0.5], [2.0, 0.5], [-1.0, 0.0]]), line)
    assert np.allclose(d, [0.5, 1.0, 1.0])


# discrete GNS ----------------------------------------------------------------

@pytest.mark.parametrize("gamma", [0.1, 0.3, 0.5, 0.7, 0.9])
def test_discrete_gns_holds(gamma):
    assert verify_discrete_GNS(gamma) <= 0


def test_discrete_gns_strict_at_one():
    for g in (0.1, 0.5, 0.9):
        # scaled sides at U = 1: 2 + 2^-γ < 4
        assert 2 + 2 ** -g < 4
        assert verify_discrete_GNS(g, n_grid=1) == pytest.approx(2 + 2 ** -g - 4, rel=1e-12)


def test_discrete_gns_gamma_to_zero():
    # γ → 0: scaled difference → -(2 - 3U + 2U²), maximal at U = 3/4
    assert verify_discrete_GNS(1e-9, n_grid=4) == pytest.approx(-0.875, abs=1e-7)


def test_discrete_gns_rejects_gamma():
    with pytest.raises(ValueError):
        verify_discrete_GNS(1.0)


# portrait --------------------------------------------------------------------

def test_overlay_curves_lie_on_level_sets():
    ov = overlay_curves(PAPER)
    u, v = ov["crit1"].T
    assert np.allclose(2 / 3 * (u * u + v * v + u * v), 0.1296, rtol=1e-12)
    u, v = ov["global"].T
    assert np.allclose(PAPER.chi * (u ** -0.5 + v ** -0.5), 1.0, rtol=1e-12)
    for u, v in ov["maximal_line"][::50]:
        assert interaction_part(PAPER, state(u, v)) == pytest.approx(2 / PAPER.gamma, rel=1e-10)
    for u, v in ov["crit2"][::50]:
        rep = criterion_blowup_2(PAPER, state(u, v))
        assert rep.margin == pytest.approx(0.0, abs=1e-10 * rep.rhs)


def test_small_portrait_symmetric():
    p = phase_portrait(PAPER, GridSpec(0.02, 1.5, 0.02, 1.5, 12, 12), with_manifold=False)
    assert np.array_equal(p.classes, p.classes.T)
    assert np.array_equal(p.crit1, p.crit1.T) and np.array_equal(p.global_, p.global_.T)
    rows = list(p.rows())
    assert len(rows) == 144 and len(rows[0]) == 6


def test_portrait_requires_three_points():
    with pytest.raises(ValueError):
        phase_portrait(DiscreteConfig(0.5, 1.6, 4))
