"""Newtonian and Bessel kernels of the elliptic chemical equation.

The Bessel kernel of ``-Δc + αc = n`` is

    B_d^α(x) = ∫_0^∞ (4πt)^(-d/2) exp(-|x|²/(4t) - αt) dt,

and its gradient is ``∇B_d^α = g_α ∇E_d`` with the profile

    g_α(r) = Γ(d/2)^(-1) ∫_0^∞ s^(d/2-1) exp(-s - αr²/(4s)) ds.

Both integrals are evaluated by adaptive Gauss-Kronrod quadrature after a
logarithmic change of variables, split at the peak of the integrand.  Closed
forms through modified Bessel functions exist and are used only as test
oracles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .constants import _check_dim, k1_constant, sphere_area

__all__ = [
    "QuadSpec",
    "BesselParams",
    "QuadratureError",
    "MaximizerError",
    "eval_E",
    "eval_g",
    "eval_B",
    "k1_alpha",
    "k1_alpha_scan",
    "euler_identity_residual",
    "kernel_table",
]


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach the requested accuracy."""


class MaximizerError(RuntimeError):
    """The supremum defining K_1^α could not be bracketed."""

    def __init__(self, message: str, radii: np.ndarray, values: np.ndarray):
        super().__init__(message)
        self.radii = radii
        self.values = values


@dataclass(frozen=True)
class QuadSpec:
    """Quadrature controls.

    Attributes
    ----------
    limit : int
        Maximum number of Gauss-Kronrod subintervals per piece (>= 16).
    epsrel : float
        Relative tolerance per piece.
    span : float
        Truncation of the log-variable domain: the integrand is dropped once
        its exponent has fallen ``span`` below the peak value.
    """

    limit: int = 200
    epsrel: float = 1e-10
    span: float = 60.0

    def __post_init__(self):
        if self.limit < 16:
            raise ValueError("quadrature needs at least 16 subintervals")
        if not self.epsrel > 0:
            raise ValueError("epsrel must be positive")


@dataclass(frozen=True)
class BesselParams:
    d: int
    alpha: float
    quad: QuadSpec = field(default_factory=QuadSpec)

    def __post_init__(self):
        _check_dim(self.d)
        if not (self.alpha >= 0 and math.isfinite(self.alpha)):
            raise ValueError("alpha must be a finite nonnegative number")


def _integrate(f, a, b, spec: QuadSpec) -> float:
    val, err, info, *rest = quad(f, a, b, epsabs=0.0, epsrel=spec.epsrel,
                                 limit=spec.limit, full_output=1)
    if rest and err > 100 * spec.epsrel * abs(val):
        raise QuadratureError(f"quadrature on [{a:.3g}, {b:.3g}]: {rest[0]}")
    return val


def _peaked(expo, u_peak: float, spec: QuadSpec) -> float:
    """∫ exp(expo(u)) du for a unimodal exponent with maximum at ``u_peak``.

    Each side is truncated where the exponent has dropped by ``spec.span``;
    the exponent is concave in every use here, so the drop is found by
    stepping outward with doubling strides.
    """
    top = expo(u_peak)
    f = lambda u: math.exp(expo(u) - top)

    def edge(sign):
        step = 1.0
        u = u_peak
        while expo(u + sign * step) - top > -spec.span:
            u += sign * step
            step *= 2.0
        return u + sign * step

    left = _integrate(f, edge(-1.0), u_peak, spec)
    right = _integrate(f, u_peak, edge(1.0), spec)
    return math.exp(top) * (left + right)


def _as_array(r):
    arr = np.asarray(r, dtype=float)
    return arr, arr.ndim == 0


def eval_E(d: int, r):
    """Newtonian kernel μ_d r^(2-d)."""
    d = _check_dim(d)
    arr, scalar = _as_array(r)
    if np.any(~(arr > 0)):
        raise ValueError("eval_E needs r > 0")
    out = arr ** (2 - d) / ((d - 2) * sphere_area(d))
    return float(out) if scalar else out


def _g_scalar(d: int, alpha: float, r: float, spec: QuadSpec) -> float:
    c = 0.25 * alpha * r * r
    if c == 0.0:
        return 1.0
    h = 0.5 * d
    # s = e^u; exponent h u - e^u - c e^-u peaks where e^u = (h + sqrt(h^2+4c))/2
    u_peak = math.log(0.5 * (h + math.sqrt(h * h + 4 * c)))
    expo = lambda u: h * u - math.exp(u) - c * math.exp(-u) - math.lgamma(h)
    return min(1.0, _peaked(expo, u_peak, spec))


def eval_g(params: BesselParams, r):
    """Gradient profile g_α(r) in (0, 1]; ``g_0 ≡ 1``."""
    arr, scalar = _as_array(r)
    if np.any(~(arr >= 0)):
        raise ValueError("eval_g needs r >= 0")
    if params.alpha == 0:
        out = np.ones_like(arr)
    else:
        out = np.array([_g_scalar(params.d, params.alpha, float(x), params.quad)
                        for x in arr.ravel()]).reshape(arr.shape)
    return float(out) if scalar else out


def _b_scalar(d: int, alpha: float, r: float, spec: QuadSpec) -> float:
    nu = 0.5 * d - 1
    q = 0.25 * r * r
    # t = e^u; exponent -nu u - q e^-u - alpha e^u (up to the prefactor)
    u_peak = math.log(q / (0.5 * (nu + math.sqrt(nu * nu + 4 * alpha * q))))
    lc = -0.5 * d * math.log(4 * math.pi)
    expo = lambda u: lc - nu * u - q * math.exp(-u) - alpha * math.exp(u)
    return _peaked(expo, u_peak, spec)


def eval_B(params: BesselParams, r):
    """Bessel kernel B_d^α(r); equals :func:`eval_E` when α = 0."""
    arr, scalar = _as_array(r)
    if np.any(~(arr > 0)):
        raise ValueError("eval_B needs r > 0")
    if params.alpha == 0:
        return eval_E(params.d, r)
    out = np.array([_b_scalar(params.d, params.alpha, float(x), params.quad)
                    for x in arr.ravel()]).reshape(arr.shape)
    return float(out) if scalar else out


# ---------------------------------------------------------------------------
# K_1^alpha
# ---------------------------------------------------------------------------

def _k1_objective(d, mass, params, radius):
    g = eval_g(params, radius)
    lead = 2 * d * sphere_area(d)
    # g R^(d-2) / (2d|S| R^(d-2) + g M), divided through by R^(d-2)
    return g / (lead + g * mass * radius ** (2 - d))


def k1_alpha_scan(d: int, mass: float, alpha: float, *, r_min: float = 1e-3,
                  r_max: float = 1e6, n_scan: int = 200, quad: QuadSpec | None = None):
    """Objective of the K_1^α supremum on a log-spaced radius grid."""
    params = BesselParams(d, alpha, quad or QuadSpec())
    radii = np.geomspace(r_min, r_max, n_scan)
    values = np.array([_k1_objective(d, mass, params, R) for R in radii])
    return radii, values


def k1_alpha(d: int, mass: float, alpha: float, *, quad: QuadSpec | None = None,
             n_scan: int = 200, xtol: float = 1e-10) -> float:
    """First blow-up constant K_1^α(d, M).

    ``K = ½ [sup_R g_α(R) R^(d-2) / (2d|S^(d-1)| R^(d-2) + g_α(R) M)]^(2/(d-2))``.

    For α = 0 the objective increases to its limit as R → ∞ and K_1(d) is
    returned.  Otherwise a log-spaced scan locates the best sample and a
    golden-section search refines it in log R.  The scan window is
    ``[1e-3, 1e6]``, shifted down to ``1e-2/√α`` for large α so that the
    decay length of g_α stays resolved.
    """
    d = _check_dim(d)
    if not mass > 0:
        raise ValueError("mass must be positive")
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    if alpha == 0:
        return k1_constant(d)
    params = BesselParams(d, alpha, quad or QuadSpec())
    r_min = min(1e-3, 1e-2 / math.sqrt(alpha))
    radii, values = k1_alpha_scan(d, mass, alpha, r_min=r_min, n_scan=n_scan,
                                  quad=params.quad)
    i = int(np.argmax(values))
    if i == 0 or i == len(radii) - 1:
        raise MaximizerError(
            f"objective maximal at scan endpoint R={radii[i]:.3g}", radii, values)

    f = lambda t: -_k1_objective(d, mass, params, math.exp(t))
    a, b = math.log(radii[i - 1]), math.log(radii[i + 1])
    invphi = (math.sqrt(5) - 1) / 2
    c, e = b - invphi * (b - a), a + invphi * (b - a)
    fc, fe = f(c), f(e)
    while b - a > xtol:
        if fc < fe:
            b, e, fe = e, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, e, fe
            e = a + invphi * (b - a)
            fe = f(e)
    best = max(-fc, -fe, values[i])
    return 0.5 * best ** (2.0 / (d - 2))


# ---------------------------------------------------------------------------
# Euler identity on the Fourier side
# ---------------------------------------------------------------------------

def euler_identity_residual(d: int, alpha: float, xi, step: float = 1e-5) -> float:
    """Check ``-∇·(ξ/(α+4π²|ξ|²)) = -(d-2)/(α+4π²|ξ|²) - 2α/(α+4π²|ξ|²)²``.

    The divergence is taken by centred differences of the vector field, the
    right side is evaluated in closed form; the relative mismatch is
    returned.
    """
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (d,):
        raise ValueError(f"xi must have shape ({d},)")
    field_ = lambda z: z / (alpha + 4 * math.pi ** 2 * (z @ z))
    div = 0.0
    for k in range(d):
        e = np.zeros(d)
        e[k] = step
        div += (field_(xi + e)[k] - field_(xi - e)[k]) / (2 * step)
    den = alpha + 4 * math.pi ** 2 * (xi @ xi)
    rhs = -(d - 2) / den - 2 * alpha / den ** 2
    return abs(-div - rhs) / abs(rhs)


def kernel_table(params: BesselParams, radii) -> np.ndarray:
    """Rows ``(r, E, B, g)`` for the CSV tabulation."""
    r = np.asarray(radii, dtype=float)
    return np.column_stack([r, eval_E(params.d, r), eval_B(params, r),
                            eval_g(params, r)])
