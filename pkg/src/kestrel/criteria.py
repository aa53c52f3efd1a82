"""Blow-up, global-existence and concentration criteria on initial data.

Every check returns a :class:`CriterionReport` with the two compared
quantities and a signed ``margin`` oriented so that ``margin > 0`` exactly
when the criterion is satisfied.  Comparisons are strict; a margin of exactly
zero is reported with status ``"boundary"``.  When the decisive input carries
a Monte Carlo standard error, a margin within three of them is reported as
``"inconclusive"``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

from .constants import DimensionalConstants, _check_dim, compute_constants
from .kernels import k1_alpha

__all__ = [
    "CRITERIA",
    "CriterionReport",
    "check_first_blowup",
    "check_second_blowup",
    "check_smallness",
    "check_general_blowup_necessary",
    "check_incompatibility",
    "incompatible_over",
    "local_existence_horizon",
    "check_parabolic_concentration",
    "evaluate_report",
]

CRITERIA = ("first_blowup", "second_blowup", "smallness_sobolev", "smallness_gn",
            "parabolic_concentration", "general_blowup_necessary")


@dataclass(frozen=True)
class CriterionReport:
    """Outcome of one criterion.

    Attributes
    ----------
    name : str
        Criterion identifier, e.g. one of :data:`CRITERIA`.
    verdict : bool or None
        ``margin > 0`` (``margin >= 0`` for a non-strict criterion); ``None``
        when the criterion cannot be evaluated.
    lhs, rhs : float
        Compared quantities, ``lhs < rhs`` being the satisfied orientation.
    margin : float
        ``rhs - lhs`` (in log space when ``extras["log_space"]`` is set).
    inputs : dict
        Echo of the arguments.
    status : str
        ``"satisfied"``, ``"violated"``, ``"boundary"``, ``"inconclusive"``
        or ``"absent"``.
    extras : dict
        Criterion-specific by-products.
    """

    name: str
    verdict: bool | None
    lhs: float
    rhs: float
    margin: float
    inputs: dict
    status: str = "satisfied"
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "verdict": self.verdict, "lhs": self.lhs,
                "rhs": self.rhs, "margin": self.margin, "inputs": dict(self.inputs)}


def _make(name, lhs, rhs, inputs, sigma=0.0, extras=None, margin=None,
          strict=True) -> CriterionReport:
    lhs, rhs = float(lhs), float(rhs)
    if not (math.isfinite(lhs) and math.isfinite(rhs)):
        raise ValueError(f"{name}: non-finite comparison {lhs} < {rhs}")
    m = rhs - lhs if margin is None else float(margin)
    # non-strict criteria ("<=") also hold on the boundary
    verdict = m > 0 if strict else m >= 0
    if m == 0:
        status = "boundary"
    elif sigma > 0 and abs(m) < 3 * sigma:
        status = "inconclusive"
    else:
        status = "satisfied" if verdict else "violated"
    return CriterionReport(name, verdict, lhs, rhs, m, inputs, status, {} if extras is None else extras)


def _positive(**kw):
    for key, val in kw.items():
        if not (val > 0 and math.isfinite(val)):
            raise ValueError(f"{key} must be positive and finite, got {val!r}")


def check_first_blowup(d: int, mass: float, second_moment: float, alpha: float = 0.0,
                       *, sigma: float = 0.0) -> CriterionReport:
    """``I0 < K_1^α(d, M) M^(d/(d-2))``."""
    d = _check_dim(d)
    _positive(mass=mass, second_moment=second_moment)
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    threshold = k1_alpha(d, mass, alpha) * mass ** (d / (d - 2))
    inputs = dict(d=d, M=mass, I0=second_moment, alpha=alpha)
    return _make("first_blowup", second_moment, threshold, inputs, sigma)


def check_second_blowup(d: int, mass: float, second_moment: float, energy: float,
                        *, sigma: float = 0.0) -> CriterionReport:
    """``I0 < K_2(d) M^(1+2/d) exp(-2 E0/(dM))``.

    ``extras["equivalent_lhs"]`` is ``d(d-2) M F0 + B(d, M)`` with
    ``F0 = log I0 + 2 E0/(dM)``; the criterion holds iff it is negative, so
    ``extras["equivalent_margin"]``, its negation, has the sign of the margin.  When
    the threshold over- or underflows, ``lhs``/``rhs`` are reported as
    logarithms and ``extras["log_space"]`` is set.  ``sigma`` is the
    standard error of ``E0``; it is propagated to the log margin.
    """
    d = _check_dim(d)
    _positive(mass=mass, second_moment=second_moment)
    if not math.isfinite(energy):
        raise ValueError("energy must be finite")
    c = compute_constants(d)
    log_rhs = math.log(c.k2) + (1 + 2.0 / d) * math.log(mass) - 2.0 * energy / (d * mass)
    log_lhs = math.log(second_moment)
    f0 = log_lhs + 2.0 * energy / (d * mass)
    equiv_lhs = d * (d - 2) * mass * f0 + c.b_of_m(mass)
    equiv = -equiv_lhs
    inputs = dict(d=d, M=mass, I0=second_moment, E0=energy)
    log_sigma = 2.0 * sigma / (d * mass)
    if abs(log_rhs) < 700:
        rhs = math.exp(log_rhs)
        extras = {"equivalent_lhs": equiv_lhs, "equivalent_margin": equiv, "log_space": False, "log_margin": log_rhs - log_lhs}
        rep = _make("second_blowup", second_moment, rhs, inputs, 0.0, extras)
        if sigma > 0 and rep.status != "boundary" and abs(log_rhs - log_lhs) < 3 * log_sigma:
            rep = CriterionReport(rep.name, rep.verdict, rep.lhs, rep.rhs, rep.margin,
                                  rep.inputs, "inconclusive", rep.extras)
        return rep
    extras = {"equivalent_lhs": equiv_lhs, "equivalent_margin": equiv, "log_space": True, "log_margin": log_rhs - log_lhs}
    return _make("second_blowup", log_lhs, log_rhs, inputs, log_sigma, extras)


def check_smallness(d: int, l_half_norm: float,
                    constants: DimensionalConstants | None = None, *, sigma: float = 0.0):
    """Sobolev and Gagliardo-Nirenberg smallness of ``‖n0‖_(d/2)``.

    Returns ``(sobolev, gn)``.  Without a populated ``smallness_gn`` the GN
    report has ``verdict=None`` and status ``"absent"``.
    """
    d = _check_dim(d)
    _positive(l_half_norm=l_half_norm)
    c = constants if constants is not None else compute_constants(d)
    if c.d != d:
        raise ValueError("constants are for a different dimension")
    inputs = dict(d=d, Lhalf=l_half_norm)
    sob = _make("smallness_sobolev", l_half_norm, c.smallness_sobolev, inputs, sigma)
    if c.smallness_gn is None:
        gn = CriterionReport("smallness_gn", None, float(l_half_norm), math.nan, math.nan,
                             inputs, "absent", {"reason": "ground state not solved"})
    else:
        gn = _make("smallness_gn", l_half_norm, c.smallness_gn, inputs, sigma)
    return sob, gn


def check_general_blowup_necessary(d: int, l_half_norm: float, *,
                                   sigma: float = 0.0) -> CriterionReport:
    """``‖n0‖_(d/2) > 2d / ((d-2) C_S²(d))``, necessary for 1BU or 2BU.

    Oriented like the others: satisfied when the norm exceeds the bound, so
    ``lhs`` is the bound and ``rhs`` the norm.
    """
    d = _check_dim(d)
    _positive(l_half_norm=l_half_norm)
    bound = 2.0 * d / ((d - 2) * compute_constants(d).sobolev_sq)
    return _make("general_blowup_necessary", bound, l_half_norm,
                 dict(d=d, Lhalf=l_half_norm), sigma)


def check_incompatibility(blowup: CriterionReport, smallness: CriterionReport) -> bool:
    """True unless a blow-up criterion and the Sobolev smallness condition
    both hold for the same initial datum."""
    if blowup.name not in ("first_blowup", "second_blowup"):
        raise ValueError(f"{blowup.name} is not a blow-up criterion")
    if smallness.name != "smallness_sobolev":
        raise ValueError("incompatibility is only established against Sobolev smallness")
    for key in ("d", "M"):
        if key in blowup.inputs and key in smallness.inputs \
                and blowup.inputs[key] != smallness.inputs[key]:
            raise ValueError(f"reports disagree on {key}")
    if blowup.inputs["d"] != smallness.inputs["d"]:
        raise ValueError("reports disagree on d")
    return not (bool(blowup.verdict) and bool(smallness.verdict))


def incompatible_over(pairs: Iterable[tuple[CriterionReport, CriterionReport]]) -> bool:
    """:func:`check_incompatibility` over a corpus; vacuously true if empty."""
    return all(check_incompatibility(b, s) for b, s in pairs)


def local_existence_horizon(d: int, p: float, lp_norm_p_power: float,
                            constants: DimensionalConstants | None = None) -> dict:
    """Guaranteed existence time from ``∫ n0^p`` for ``p > d/2``.

    ``δ = (d C_S²/8)^(d/(2p))``, ``r = 2p/d``, ``r' = r/(r-1)`` and
    ``T_p = p/(p-1) δ^(-r') (∫ n0^p)^(1/(d/2 - p))``.
    """
    d = _check_dim(d)
    if not p > d / 2:
        raise ValueError("p must exceed d/2")
    _positive(lp_norm_p_power=lp_norm_p_power)
    c = constants if constants is not None else compute_constants(d)
    delta = (d * c.sobolev_sq / 8.0) ** (d / (2.0 * p))
    r = 2.0 * p / d
    r_conj = r / (r - 1.0)
    T = p / (p - 1.0) * delta ** (-r_conj) * lp_norm_p_power ** (1.0 / (d / 2.0 - p))
    return {"T_p": T, "delta_p": delta, "r": r, "r_conj": r_conj}


def check_parabolic_concentration(d: int, mass: float, second_moment: float,
                                  energy_pp: float, eps: float, gamma_exp: float,
                                  c_d: float, *, l_half_norm: float | None = None,
                                  sigma: float = 0.0) -> CriterionReport:
    """Initial concentration condition of the parabolic-parabolic system.

    Satisfied when ``d(d-2) M F0 + B(d, M) + d(d-2) M ε^γ < 0`` with
    ``F0 = log I0 + 2 E0/(dM)`` and ``E0`` the full parabolic energy.  The
    constant ``C(d)`` is not quantified and must be supplied.

    On a true verdict ``extras`` holds the concentration lower bound
    ``2(d-2) C(d)^(-2) ε^(γ-1)`` and the ε-smallness bound
    ``2 C_HLS / (d |S^(d-1)| C(d)²)``.  If ``l_half_norm`` is given the
    consequence ``d(d-2) ε^γ + 2d < C_HLS ‖n0‖_(d/2) / |S^(d-1)|`` is
    evaluated into ``extras["small_epsilon_flag"]``.
    """
    d = _check_dim(d)
    _positive(mass=mass, second_moment=second_moment, eps=eps, c_d=c_d)
    if not 0 < gamma_exp < 1:
        raise ValueError("gamma_exp must lie in (0, 1)")
    c = compute_constants(d)
    f0 = math.log(second_moment) + 2.0 * energy_pp / (d * mass)
    scale = d * (d - 2) * mass
    lhs = scale * f0 + c.b_of_m(mass) + scale * eps ** gamma_exp
    inputs = dict(d=d, M=mass, I0=second_moment, E0=energy_pp, eps=eps,
                  gamma_exp=gamma_exp, C_d=c_d)
    extras: dict = {}
    if l_half_norm is not None:
        _positive(l_half_norm=l_half_norm)
        extras["small_epsilon_flag"] = (
            d * (d - 2) * eps ** gamma_exp + 2 * d < c.hls * l_half_norm / c.sphere_area)
    rep = _make("parabolic_concentration", lhs, 0.0, inputs, 2.0 * (d - 2) * sigma, extras)
    if rep.verdict:
        extras["lower_bound"] = 2.0 * (d - 2) / c_d ** 2 * eps ** (gamma_exp - 1)
        extras["eps_bound"] = 2.0 * c.hls / (d * c.sphere_area * c_d ** 2)
    return rep


def evaluate_report(report, constants: DimensionalConstants | None = None,
                    *, alpha: float = 0.0) -> list[CriterionReport]:
    """All initial-data criteria for a :class:`~kestrel.densities.MomentReport`.

    The second blow-up criterion is only defined for the Newtonian kernel
    and is skipped when ``alpha > 0``.  Standard errors carried by a Monte
    Carlo report are forwarded so that close calls come out "inconclusive".
    """
    d = report.d
    c = constants if constants is not None else compute_constants(d)
    err = report.stderr or {}
    out = [check_first_blowup(d, report.M, report.I, alpha)]
    if alpha == 0:
        out.append(check_second_blowup(d, report.M, report.I, report.E,
                                       sigma=err.get("E", 0.0)))
    out.extend(check_smallness(d, report.Lhalf, c, sigma=err.get("Lhalf", 0.0)))
    out.append(check_general_blowup_necessary(d, report.Lhalf, sigma=err.get("Lhalf", 0.0)))
    return out
