import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kestrel.constants import compute_constants, with_ground_state
from kestrel.criteria import (
    check_first_blowup,
    check_general_blowup_necessary,
    check_incompatibility,
    check_parabolic_concentration,
    check_second_blowup,
    check_smallness,
    evaluate_report,
    incompatible_over,
    local_existence_horizon,
)
from kestrel.densities import bump_grid, gaussian, single_bump, two_bump, report


# first blow-up ---------------------------------------------------------------

def test_first_blowup_examples():
    assert check_first_blowup(3, 1.0, 1e-5).verdict
    rep = check_first_blowup(3, 1.0, 1e-4)
    assert not rep.verdict
    assert rep.rhs == pytest.approx(8.7953e-5, rel=1e-4)
    assert rep.margin == pytest.approx(rep.rhs - rep.lhs)
    assert rep.status == "violated"


@pytest.mark.parametrize("alpha", [0.1, 1.0, 10.0])
def test_first_blowup_threshold_drops_with_alpha(alpha):
    a0 = check_first_blowup(3, 1.0, 1e-5).rhs
    assert check_first_blowup(3, 1.0, 1e-5, alpha).rhs < a0


def test_first_blowup_orientation_flips():
    t = check_first_blowup(4, 2.0, 1.0).rhs
    below = check_first_blowup(4, 2.0, t * (1 - 1e-9))
    above = check_first_blowup(4, 2.0, t * (1 + 1e-9))
    assert below.verdict and below.margin > 0
    assert not above.verdict and above.margin < 0


def test_first_blowup_boundary():
    t = check_first_blowup(3, 1.0, 1.0).rhs
    rep = check_first_blowup(3, 1.0, t)
    assert rep.status == "boundary" and rep.verdict is False


def test_first_blowup_rejects_bad_input():
    with pytest.raises(ValueError):
        check_first_blowup(3, 0.0, 1.0)
    with pytest.raises(ValueError):
        check_first_blowup(3, 1.0, 1.0, -1.0)


# second blow-up --------------------------------------------------------------

def test_second_blowup_example():
    rep = check_second_blowup(3, 1.0, 0.01, 0.0)
    assert rep.rhs == pytest.approx(3 / (2 * math.pi) * math.exp(-3), rel=1e-14)
    assert rep.verdict


def test_second_blowup_large_energy_fails():
    assert not check_second_blowup(3, 1.0, 1e-8, 1e3).verdict


def test_second_blowup_sign_equivalence():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        d = int(rng.integers(3, 8))
        M = 10 ** rng.uniform(-2, 2)
        I0 = 10 ** rng.uniform(-4, 3)
        E0 = rng.uniform(-20, 20) * M
        rep = check_second_blowup(d, M, I0, E0)
        assert (rep.margin > 0) == (rep.extras["equivalent_lhs"] < 0)
        assert np.sign(rep.extras["equivalent_margin"]) == np.sign(rep.margin)


def test_second_blowup_log_space():
    rep = check_second_blowup(3, 1.0, 1.0, -2000.0)
    assert rep.extras["log_space"]
    assert rep.verdict
    assert rep.rhs == pytest.approx(math.log(compute_constants(3).k2) + 2000 * 2 / 3)
    rep = check_second_blowup(3, 1.0, 1.0, 2000.0)
    assert rep.extras["log_space"] and not rep.verdict


def test_second_blowup_orientation_flips():
    rep = check_second_blowup(5, 1.5, 1.0, -2.0)
    t = rep.rhs
    assert check_second_blowup(5, 1.5, t * (1 - 1e-9), -2.0).verdict
    assert not check_second_blowup(5, 1.5, t * (1 + 1e-9), -2.0).verdict


def test_second_blowup_inconclusive_with_stderr():
    t = check_second_blowup(3, 1.0, 1.0, 0.0).rhs
    rep = check_second_blowup(3, 1.0, t * 0.999, 0.0, sigma=0.01)
    assert rep.status == "inconclusive"
    assert rep.verdict


# smallness -------------------------------------------------------------------

def test_smallness_sobolev_example():
    sob, gn = check_smallness(3, 14.0)
    assert sob.verdict
    assert sob.rhs == pytest.approx(14.6077, rel=1e-4)
    assert gn.verdict is None and gn.status == "absent"


def test_smallness_tiny_norm(ground_states):
    c = with_ground_state(compute_constants(3), ground_states(3))
    sob, gn = check_smallness(3, 1e-12, c)
    assert sob.verdict and gn.verdict


@pytest.mark.parametrize("d", [3, 4, 5])
def test_gn_threshold_weaker(d, ground_states):
    c = with_ground_state(compute_constants(d), ground_states(d))
    sob, gn = check_smallness(d, 1.0, c)
    assert gn.rhs > sob.rhs
    # a norm between the two thresholds passes GN only
    mid = 0.5 * (gn.rhs + sob.rhs)
    sob, gn = check_smallness(d, mid, c)
    assert gn.verdict and not sob.verdict


def test_smallness_dimension_mismatch():
    with pytest.raises(ValueError):
        check_smallness(4, 1.0, compute_constants(3))


# incompatibility -------------------------------------------------------------

def test_incompatibility_gaussian_sweep():
    pairs = []
    for delta in np.logspace(-3, 4, 40):
        rep = report(gaussian(3, 1.0, float(delta)))
        sob, _ = check_smallness(3, rep.Lhalf)
        for bu in (check_first_blowup(3, rep.M, rep.I),
                   check_second_blowup(3, rep.M, rep.I, rep.E)):
            pairs.append((bu, sob))
            if bu.verdict:
                assert check_general_blowup_necessary(3, rep.Lhalf).verdict
    assert incompatible_over(pairs)
    # the sweep actually reaches the blow-up side
    assert any(bu.verdict for bu, _ in pairs)


def test_incompatibility_empty():
    assert incompatible_over([])


def test_incompatibility_mismatch():
    bu = check_first_blowup(3, 1.0, 1.0)
    sob, gn = check_smallness(4, 1.0)
    with pytest.raises(ValueError):
        check_incompatibility(bu, sob)
    with pytest.raises(ValueError):
        check_incompatibility(sob, sob)
    with pytest.raises(ValueError):
        check_incompatibility(bu, check_smallness(3, 1.0)[1])


def test_incompatibility_true_for_consistent_pair():
    assert check_incompatibility(check_first_blowup(3, 1.0, 1e-5), check_smallness(3, 30.0)[0])


def test_necessary_threshold_above_smallness():
    for d in range(3, 11):
        c = compute_constants(d)
        nec = check_general_blowup_necessary(d, 1.0).lhs
        assert nec == pytest.approx(2 * d * c.sphere_area / c.hls, rel=1e-12)
        assert nec > c.smallness_sobolev


@pytest.mark.parametrize("make", [
    lambda: gaussian(3, 1.0, 500.0),
    lambda: single_bump(3, 1.0, 0.01, "poly"),
    lambda: two_bump(3, 1.0, [0.02, 0, 0], 1e-4, "poly"),
    lambda: bump_grid(3, 1.0, 64, 0.2, "poly"),
    lambda: gaussian(4, 2.0, 50.0),
    lambda: gaussian(5, 1.0, 1e3),
])
def test_blowup_implies_necessary_on_reports(make):
    rep = report(make())
    results = {r.name: r for r in evaluate_report(rep)}
    if results["first_blowup"].verdict or results["second_blowup"].verdict:
        assert results["general_blowup_necessary"].verdict
        assert not results["smallness_sobolev"].verdict


def test_evaluate_report_alpha_skips_second():
    rep = report(gaussian(3, 1.0, 1.0), alpha=1.0)
    names = [r.name for r in evaluate_report(rep, alpha=1.0)]
    assert "second_blowup" not in names
    assert names[0] == "first_blowup"


# local existence -------------------------------------------------------------

def test_local_horizon_example():
    c = compute_constants(3)
    out = local_existence_horizon(3, 2.0, 5.0)
    delta = (3 * c.sobolev_sq / 8) ** 0.75
    assert out["delta_p"] == pytest.approx(delta, rel=1e-14)
    assert out["delta_p"] == pytest.approx(0.1338, abs=1e-4)
    assert out["r_conj"] == pytest.approx(4.0)
    assert out["T_p"] == pytest.approx(2 * delta ** -4 * 5.0 ** -2, rel=1e-13)


def test_local_horizon_delta_is_smallest_admissible():
    c = compute_constants(4)
    p = 3.0
    out = local_existence_horizon(4, p, 1.0)
    r = out["r"]
    f = lambda dl: 4 * c.sobolev_sq / (2 * dl ** r) - 4
    assert abs(f(out["delta_p"])) < 1e-12
    assert f(out["delta_p"] * 0.999) > 0


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(1e-2, 1e2), st.floats(1.6, 6.0))
def test_local_horizon_homogeneity(integral, scale, p):
    a = local_existence_horizon(3, p, integral)["T_p"]
    b = local_existence_horizon(3, p, scale * integral)["T_p"]
    assert b / a == pytest.approx(scale ** (1 / (1.5 - p)), rel=1e-10)
    if scale > 1:
        assert b < a


def test_local_horizon_rejects_small_p():
    with pytest.raises(ValueError):
        local_existence_horizon(3, 1.5, 1.0)


# parabolic concentration -----------------------------------------------------

@settings(max_examples=200, deadline=None)
@given(st.integers(3, 7), st.floats(0.05, 20), st.floats(1e-4, 1e3), st.floats(-50, 50))
def test_concentration_reduces_to_second_blowup(d, M, I0, e):
    E0 = e * M
    bu = check_second_blowup(d, M, I0, E0)
    conc = check_parabolic_concentration(d, M, I0, E0, 1e-300, 0.5, 1.0)
    if abs(bu.extras["equivalent_lhs"]) > 1e-9:
        assert conc.verdict == bu.verdict


def test_concentration_lower_bound_diverges():
    kw = dict(d=3, mass=1.0, second_moment=1e-3, energy_pp=-20.0, gamma_exp=0.5, c_d=1.0)
    bounds = [check_parabolic_concentration(eps=e, **kw).extras["lower_bound"]
              for e in (1e-2, 1e-4, 1e-6, 1e-8)]
    assert all(np.diff(bounds) > 0)
    assert bounds[-1] == pytest.approx(2 * 1e4, rel=1e-12)


def test_concentration_eps_bound():
    c = compute_constants(3)
    rep = check_parabolic_concentration(3, 1.0, 1e-3, -20.0, 1e-3, 0.5, 2.0)
    assert rep.verdict
    assert rep.extras["eps_bound"] == pytest.approx(2 * c.hls / (3 * c.sphere_area * 4))


def test_concentration_not_satisfied_has_no_bounds():
    rep = check_parabolic_concentration(3, 1.0, 10.0, 5.0, 0.1, 0.5, 1.0)
    assert not rep.verdict
    assert "lower_bound" not in rep.extras


def test_concentration_orientation():
    base = check_parabolic_concentration(3, 1.0, 1.0, 0.0, 0.1, 0.5, 1.0)
    # lhs is linear in E0 with slope 2(d-2); shift E0 to straddle zero
    e_star = -base.lhs / 2
    assert check_parabolic_concentration(3, 1.0, 1.0, e_star - 1e-6, 0.1, 0.5, 1.0).verdict
    assert not check_parabolic_concentration(3, 1.0, 1.0, e_star + 1e-6, 0.1, 0.5, 1.0).verdict


def test_concentration_consequence_flag_on_corpus():
    # for c = E_d * n the full energy reduces to S - P/2
    for prof in (gaussian(3, 1.0, 1e4), single_bump(3, 2.0, 1e-3, "poly"),
                 two_bump(3, 1.0, [0.02, 0, 0], 1e-5, "poly")):
        rep = report(prof)
        for eps in (1e-1, 1e-3):
            conc = check_parabolic_concentration(3, rep.M, rep.I, rep.E, eps, 0.5, 1.0,
                                                 l_half_norm=rep.Lhalf)
            if conc.verdict:
                assert conc.extras["small_epsilon_flag"]


@pytest.mark.parametrize("g", [0.0, 1.0, -0.2, 1.5])
def test_concentration_rejects_gamma(g):
    with pytest.raises(ValueError):
        check_parabolic_concentration(3, 1.0, 1.0, 0.0, 0.1, g, 1.0)


def test_report_dict_fields():
    d = check_first_blowup(3, 1.0, 1e-5).to_dict()
    assert list(d) == ["name", "verdict", "lhs", "rhs", "margin", "inputs"]
