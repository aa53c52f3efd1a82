"""Cell densities in R^d and their moment / energy reports.

Two representations are supported:

* ``radial-grid``: values of a radial density on an increasing grid of radii.
* ``bump-mixture``: a finite sum ``Σ w_i λ_i^(-d) φ((x - a_i)/λ_i)`` of
  rescaled unit-mass radial profiles ``φ``.  Two profiles are available, the
  Gaussian ``π^(-d/2) exp(-|z|²)`` and the compact bump
  ``c_d (1 - |z|²)_+²``.

Reports are exact up to 1D quadrature for radial grids, single bumps and
mixtures of compact bumps with pairwise disjoint supports.  Anything else
(overlapping bumps, several Gaussians) is estimated by stratified Monte Carlo
with a standard error attached to each field.

The interaction potential is ``P = ∬ n(x) K(x - y) n(y) dx dy`` with ``K`` the
Newtonian kernel (α = 0) or the Bessel kernel (α > 0), the free energy is
``E = S - P/2`` and the corrected energy ``F = log I + 2E/(dM)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.integrate import cumulative_simpson, quad, simpson
from scipy.special import gammainc, ive, kve

from .constants import _check_dim, sphere_area

__all__ = [
    "PROFILES",
    "DensityProfile",
    "MomentReport",
    "SupportOverlapError",
    "radial_profile",
    "mixture",
    "gaussian",
    "single_bump",
    "two_bump",
    "bump_grid",
    "report",
    "moment_derivative",
    "unit_profile_stats",
    "load_profile",
    "save_profile",
    "profile_from_dict",
    "profile_to_dict",
]

PROFILES = ("poly", "gaussian")
_REPORT_FIELDS = ("M", "I", "S", "P", "Lhalf", "E", "F")
_GAUSS_REACH = 9.0  # exp(-81) ~ 7e-36 of the mass lies outside this radius


class SupportOverlapError(ValueError):
    """Compact bumps were requested with intersecting supports."""


# ---------------------------------------------------------------------------
# Unit profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _UnitStats:
    """Scale-free integrals of a unit-mass, unit-width profile."""

    m2: float       # ∫ |z|² φ
    ent: float      # ∫ φ log φ
    self_pot: float  # ∬ φ E_d φ
    reach: float    # support radius (finite for compact profiles)


def _poly_norm(d: int) -> float:
    return d * (d + 2) * (d + 4) / (8.0 * sphere_area(d))


def _phi(profile: str, d: int, rho):
    rho = np.asarray(rho, dtype=float)
    if profile == "gaussian":
        return math.pi ** (-d / 2) * np.exp(-rho * rho)
    if profile == "poly":
        return _poly_norm(d) * np.clip(1.0 - rho * rho, 0.0, None) ** 2
    raise ValueError(f"unknown profile {profile!r}; choose from {PROFILES}")


def _mass_within(profile: str, d: int, rho):
    """Mass of the unit profile inside radius ``rho``."""
    rho = np.asarray(rho, dtype=float)
    if profile == "gaussian":
        return gammainc(d / 2, rho * rho)
    r = np.clip(rho, 0.0, 1.0)
    return sphere_area(d) * _poly_norm(d) * (
        r ** d / d - 2 * r ** (d + 2) / (d + 2) + r ** (d + 4) / (d + 4))


def _newton_potential(profile: str, d: int, rho):
    """E_d * φ at radius ``rho`` and its radial derivative (unit width)."""
    rho = np.asarray(rho, dtype=float)
    area = sphere_area(d)
    mu = 1.0 / ((d - 2) * area)
    inner = _mass_within(profile, d, rho)
    if profile == "gaussian":
        # ∫_rho^∞ s φ(s) |S| ds in closed form
        outer = area * math.pi ** (-d / 2) * 0.5 * np.exp(-rho * rho)
    else:
        outer = area * _poly_norm(d) * np.clip(1.0 - rho * rho, 0.0, None) ** 3 / 6.0
    with np.errstate(divide="ignore", invalid="ignore"):
        val = mu * (np.where(rho > 0, rho ** (2 - d) * inner, 0.0) + outer)
        der = np.where(rho > 0, -inner / (area * rho ** (d - 1)), 0.0)
    return val, der


@lru_cache(maxsize=None)
def unit_profile_stats(profile: str, d: int) -> _UnitStats:
    """Second moment, entropy and Newtonian self-energy of a unit profile."""
    d = _check_dim(d)
    area = sphere_area(d)
    if profile == "gaussian":
        mu = 1.0 / ((d - 2) * area)
        return _UnitStats(
            m2=d / 2.0,
            ent=-0.5 * d * math.log(math.pi) - 0.5 * d,
            # the difference of two samples is N(0, I): E|Z|^(2-d) closed form
            self_pot=mu * 2.0 ** (1 - d / 2) / math.gamma(d / 2),
            reach=math.inf,
        )
    if profile != "poly":
        raise ValueError(f"unknown profile {profile!r}; choose from {PROFILES}")
    c = _poly_norm(d)

    def ent_integrand(r):
        v = c * (1 - r * r) ** 2
        return area * v * math.log(v) * r ** (d - 1) if v > 0 else 0.0

    def pot_integrand(r):
        return area * float(_phi("poly", d, r)) * float(_newton_potential("poly", d, r)[0]) \
            * r ** (d - 1)

    ent = quad(ent_integrand, 0.0, 1.0, epsabs=0, epsrel=1e-13, limit=200)[0]
    pot = quad(pot_integrand, 0.0, 1.0, epsabs=0, epsrel=1e-13, limit=200)[0]
    return _UnitStats(m2=d / (d + 6.0), ent=ent, self_pot=pot, reach=1.0)


def _lq_unit(profile: str, d: int, q: float) -> float:
    """∫ φ^q for the unit profile."""
    if profile == "gaussian":
        return math.pi ** (0.5 * d * (1 - q)) * q ** (-0.5 * d)
    area = sphere_area(d)
    c = _poly_norm(d)
    f = lambda r: area * (c * (1 - r * r) ** 2) ** q * r ** (d - 1)
    return quad(f, 0.0, 1.0, epsabs=0, epsrel=1e-13, limit=200)[0]


# ---------------------------------------------------------------------------
# Profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DensityProfile:
    """A nonnegative density in R^d.

    For ``kind == "radial-grid"`` the density is ``values`` sampled on
    ``radii``; for ``kind == "bump-mixture"`` it is described by the arrays
    ``weights`` (w_i), ``centers`` (a_i, shape ``(N, d)``), ``widths``
    (λ_i) and the tuple ``profiles``.
    """

    d: int
    kind: str
    radii: np.ndarray | None = None
    values: np.ndarray | None = None
    weights: np.ndarray | None = None
    centers: np.ndarray | None = None
    widths: np.ndarray | None = None
    profiles: tuple = ()

    @property
    def n_bumps(self) -> int:
        return 0 if self.weights is None else len(self.weights)

    @property
    def mass(self) -> float:
        if self.kind == "bump-mixture":
            return float(self.weights.sum())
        return float(sphere_area(self.d) * simpson(self.values * self.radii ** (self.d - 1),
                                                   x=self.radii))

    def density(self, x) -> np.ndarray:
        """Evaluate n at points ``x`` of shape ``(..., d)``."""
        x = np.asarray(x, dtype=float)
        if self.kind == "radial-grid":
            r = np.linalg.norm(x, axis=-1)
            return np.interp(r, self.radii, self.values, right=0.0)
        flat = x.reshape(-1, self.d)
        out = np.zeros(len(flat))
        for prof in set(self.profiles):
            idx = np.array([p == prof for p in self.profiles])
            w, a, lam = self.weights[idx], self.centers[idx], self.widths[idx]
            for lo in range(0, len(flat), 2048):
                pts = flat[lo:lo + 2048]
                rho = np.linalg.norm(pts[:, None, :] - a[None], axis=-1) / lam
                out[lo:lo + 2048] += (_phi(prof, self.d, rho) * (w * lam ** (-self.d))).sum(1)
        return out.reshape(x.shape[:-1])


def radial_profile(d: int, radii, values) -> DensityProfile:
    """Radial density from samples; ``radii`` must start at 0 and increase."""
    d = _check_dim(d)
    r = np.asarray(radii, dtype=float)
    n = np.asarray(values, dtype=float)
    if r.ndim != 1 or r.shape != n.shape or len(r) < 5:
        raise ValueError("radii and values must be 1D arrays of equal length >= 5")
    if r[0] != 0.0 or np.any(np.diff(r) <= 0):
        raise ValueError("radii must start at 0 and be strictly increasing")
    if np.any(~np.isfinite(n)) or np.any(n < 0):
        raise ValueError("density values must be finite and nonnegative")
    prof = DensityProfile(d=d, kind="radial-grid", radii=r, values=n)
    if not prof.mass > 0:
        raise ValueError("density has zero mass")
    return prof


def mixture(d: int, weights, centers, widths, profiles="poly") -> DensityProfile:
    """Bump mixture ``Σ w_i λ_i^(-d) φ((x - a_i)/λ_i)``."""
    d = _check_dim(d)
    w = np.atleast_1d(np.asarray(weights, dtype=float))
    a = np.asarray(centers, dtype=float).reshape(len(w), d)
    lam = np.broadcast_to(np.asarray(widths, dtype=float), w.shape).copy()
    profs = (profiles,) * len(w) if isinstance(profiles, str) else tuple(profiles)
    if len(profs) != len(w):
        raise ValueError("one profile id per bump is required")
    for p in set(profs):
        if p not in PROFILES:
            raise ValueError(f"unknown profile {p!r}; choose from {PROFILES}")
    if np.any(~(w > 0)) or not np.all(np.isfinite(w)):
        raise ValueError("bump weights must be positive and finite")
    if np.any(~(lam > 0)) or not np.all(np.isfinite(lam)):
        raise ValueError("bump widths must be positive and finite")
    if not np.all(np.isfinite(a)):
        raise ValueError("bump centers must be finite")
    return DensityProfile(d=d, kind="bump-mixture", weights=w, centers=a, widths=lam,
                          profiles=profs)


def single_bump(d: int, mass: float, width: float, profile: str = "poly",
                center=None) -> DensityProfile:
    c = np.zeros(d) if center is None else center
    return mixture(d, [mass], [c], [width], profile)


def gaussian(d: int, mass: float, delta: float, *, grid: bool = False,
             n_grid: int = 4001) -> DensityProfile:
    """``M (δ/π)^(d/2) exp(-δ|x|²)`` as a single bump, or sampled on a grid."""
    if not (mass > 0 and delta > 0):
        raise ValueError("mass and delta must be positive")
    if not grid:
        return single_bump(d, mass, 1.0 / math.sqrt(delta), "gaussian")
    r = np.linspace(0.0, _GAUSS_REACH / math.sqrt(delta), n_grid)
    return radial_profile(d, r, mass * (delta / math.pi) ** (d / 2) * np.exp(-delta * r * r))


def two_bump(d: int, mass: float, a, lam: float, profile: str = "poly") -> DensityProfile:
    """Two bumps of mass M/2 and width λ centred at ±a."""
    a = np.asarray(a, dtype=float).reshape(d)
    if not lam > 0:
        raise ValueError("width must be positive")
    if profile == "poly" and np.linalg.norm(a) <= lam:
        raise SupportOverlapError(
            f"|a| = {np.linalg.norm(a):.6g} must exceed the width {lam:.6g}")
    return mixture(d, [mass / 2, mass / 2], [a, -a], [lam, lam], profile)


def bump_grid(d: int, mass: float, n_points: int, scale: float,
              profile: str = "poly") -> DensityProfile:
    """``N = k^d`` equal bumps of width ``λ = N^(1/(2-d))`` on a centred grid.

    Centers sit at ``L((i + 1/2)/k - 1/2)`` per axis, so the family lies in
    ``[-L/2, L/2]^d`` and is symmetric under ``x -> -x``.
    """
    d = _check_dim(d)
    k = round(n_points ** (1.0 / d))
    if k < 1 or k ** d != n_points:
        raise ValueError(f"n_points must be a perfect {d}-th power")
    if not scale > 0:
        raise ValueError("scale must be positive")
    lam = float(n_points) ** (1.0 / (2 - d))
    spacing = scale / k
    if profile == "poly" and n_points > 1 and not lam < 0.5 * spacing:
        raise SupportOverlapError(
            f"width {lam:.6g} is not below half the grid spacing {spacing:.6g}")
    axis = scale * ((np.arange(k) + 0.5) / k - 0.5)
    centers = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), -1).reshape(-1, d)
    return mixture(d, np.full(n_points, mass / n_points), centers, lam, profile)


# ---------------------------------------------------------------------------
# Radial machinery
# ---------------------------------------------------------------------------

def _rI(nu: float, k: float, a: np.ndarray) -> np.ndarray:
    """a^(-nu) I_nu(k a) e^(-k a), with its a -> 0 limit."""
    out = np.empty_like(a)
    pos = a > 0
    out[pos] = a[pos] ** (-nu) * ive(nu, k * a[pos])
    out[~pos] = (0.5 * k) ** nu / math.gamma(nu + 1)
    return out


def _shell_potential(d: int, alpha: float, r: np.ndarray, n: np.ndarray):
    """Bessel potential of a radial density on its own grid, and c'(r).

    Per unit mass, a uniform shell of radius s has potential
    ``u(r_<) v(r_>) / |S|`` at radius r, with ``u(x) = x^(-ν) I_ν(kx)``,
    ``v(x) = x^(-ν) K_ν(kx)``, ν = d/2 - 1 and k = √α.  The kernel is
    separable, so

        c(r) = v(r) ∫_0^r u ρ + u(r) ∫_r^R v ρ,   ρ = n s^(d-1),

    and ``c'(r)`` follows by differentiating u and v only.  Both running
    integrals are cumulative Simpson sums (the tail one accumulated from the
    outer end), which handles the kink at r = s exactly.  When ``kR`` is so
    large that u overflows, a dense matrix in exponentially scaled Bessel
    functions is used instead.
    """
    nu = 0.5 * d - 1
    k = math.sqrt(alpha)
    rho = n * r ** (d - 1)
    if k * r[-1] > 500:
        return _shell_matrix(d, alpha, r, rho)
    pos = r > 0
    rp = np.where(pos, r, 1.0)
    u = _rI(nu, k, r) * np.exp(k * r)
    du = np.where(pos, k * rp ** (-nu) * ive(nu + 1, k * rp) * np.exp(k * rp), 0.0)
    v = np.where(pos, rp ** (-nu) * kve(nu, k * rp) * np.exp(-k * rp), 0.0)
    dv = np.where(pos, -k * rp ** (-nu) * kve(nu + 1, k * rp) * np.exp(-k * rp), 0.0)
    inner = cumulative_simpson(u * rho, x=r, initial=0.0)
    outer = cumulative_simpson((v * rho)[::-1], x=-r[::-1], initial=0.0)[::-1]
    # at r = 0 the inner integral vanishes faster than v blows up
    c = v * inner + u * outer
    dc = dv * inner + du * outer
    return c, dc


def _shell_matrix(d: int, alpha: float, r: np.ndarray, rho: np.ndarray,
                  chunk: int = 512):
    nu = 0.5 * d - 1
    k = math.sqrt(alpha)
    wts = simpson(np.eye(len(r)), x=r, axis=1) * rho if len(r) <= 4000 else \
        np.gradient(r) * rho
    pos = r > 0
    rp = np.where(pos, r, 1.0)
    us = _rI(nu, k, r)                                    # u e^{-kr}
    dus = np.where(pos, k * rp ** (-nu) * ive(nu + 1, k * rp), 0.0)
    vs = np.where(pos, rp ** (-nu) * kve(nu, k * rp), 0.0)  # v e^{kr}
    dvs = np.where(pos, -k * rp ** (-nu) * kve(nu + 1, k * rp), 0.0)
    idx = np.arange(len(r))
    c = np.empty_like(r)
    dc = np.empty_like(r)
    for lo in range(0, len(r), chunk):
        i = idx[lo:lo + chunk, None]
        lo_i = np.minimum(i, idx[None])
        hi_i = np.maximum(i, idx[None])
        damp = np.exp(-k * (r[hi_i] - r[lo_i]))
        c[lo:lo + chunk] = (us[lo_i] * vs[hi_i] * damp) @ wts
        inner = i <= idx[None]
        dker = np.where(inner, dus[lo_i] * vs[hi_i], us[lo_i] * dvs[hi_i]) * damp
        dc[lo:lo + chunk] = dker @ wts
    return c, dc


@dataclass(frozen=True)
class _RadialResult:
    M: float
    I: float
    S: float
    P: float
    lq: float          # ∫ n^(d/2)
    c: np.ndarray      # potential on the grid
    dc: np.ndarray     # its radial derivative
    c_sq: float        # ∫ c² over R^d (α > 0 only)
    far: float         # A in c(r) = A r^(-ν) K_ν(kr) beyond the grid (α > 0)


def _radial(d: int, r: np.ndarray, n: np.ndarray, alpha: float) -> _RadialResult:
    area = sphere_area(d)
    jac = area * r ** (d - 1)
    integ = lambda f: float(simpson(f * jac, x=r))
    M = integ(n)
    I = integ(n * r * r)
    with np.errstate(divide="ignore", invalid="ignore"):
        nlogn = np.where(n > 0, n * np.log(np.where(n > 0, n, 1.0)), 0.0)
    S = integ(nlogn)
    lq = integ(n ** (0.5 * d))
    if alpha == 0:
        mu = 1.0 / ((d - 2) * area)
        inner = cumulative_simpson(n * jac, x=r, initial=0.0)
        tail_cum = cumulative_simpson(area * n * r, x=r, initial=0.0)
        outer = tail_cum[-1] - tail_cum
        with np.errstate(divide="ignore", invalid="ignore"):
            c = mu * (np.where(r > 0, r ** (2 - d) * inner, 0.0) + outer)
            dc = np.where(r > 0, -inner / (area * r ** (d - 1)), 0.0)
        return _RadialResult(M, I, S, integ(n * c), lq, c, dc, math.nan, math.nan)

    nu = 0.5 * d - 1
    k = math.sqrt(alpha)
    c, dc = _shell_potential(d, alpha, r, n)
    R = float(r[-1])
    # beyond the grid c(r) = A r^-nu K_nu(kr); A carries e^{kR} so keep it scaled
    a_scaled = float(simpson(n * r ** (d - 1) * _rI(nu, k, r) * np.exp(k * (r - R)), x=r))
    tail = quad(lambda t: t * (kve(nu, k * t) * math.exp(-k * (t - R))) ** 2, R, math.inf,
                epsabs=0, epsrel=1e-12, limit=200)[0]
    c_sq = integ(c * c) + area * a_scaled ** 2 * tail
    return _RadialResult(M, I, S, integ(n * c), lq, c, dc, c_sq, a_scaled)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MomentReport:
    """Moments and energies of a density.

    ``stderr`` holds one-sigma Monte Carlo errors per field (zeros for exact
    evaluations); ``method`` is ``"quadrature"`` or ``"monte-carlo"``.
    """

    M: float
    I: float
    S: float
    P: float
    Lhalf: float
    E: float
    F: float
    d: int = 3
    alpha: float = 0.0
    method: str = "quadrature"
    stderr: dict = field(default_factory=lambda: dict.fromkeys(_REPORT_FIELDS, 0.0))

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in _REPORT_FIELDS}

    def sandwich(self, hls: float) -> tuple[float, float]:
        """Lower and upper bounds on the Newtonian potential P.

        The confinement bounds hold for ``∬ n |x-y|^(2-d) n = P / μ_d``:
        ``2^(1-d/2) M^(d/2+1) I^(1-d/2) <= P/μ_d <= C_HLS M ‖n‖_(d/2)``.
        """
        d = self.d
        mu = 1.0 / ((d - 2) * sphere_area(d))
        lower = 2.0 ** (1 - d / 2) * self.M ** (d / 2 + 1) * self.I ** (1 - d / 2)
        return mu * lower, mu * hls * self.M * self.Lhalf


def _finish(d, alpha, M, I, S, P, lq, method, err=None) -> MomentReport:
    E = S - 0.5 * P
    F = math.log(I) + 2.0 * E / (d * M)
    vals = dict(M=M, I=I, S=S, P=P, Lhalf=lq ** (2.0 / d), E=E, F=F)
    for key, v in vals.items():
        if not math.isfinite(v):
            raise ValueError(f"non-finite {key} = {v}")
    stderr = dict.fromkeys(_REPORT_FIELDS, 0.0)
    if err:
        stderr.update(err)
    return MomentReport(d=d, alpha=float(alpha), method=method, stderr=stderr, **vals)


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not (alpha >= 0 and math.isfinite(alpha)):
        raise ValueError("alpha must be finite and nonnegative")
    return alpha


def _disjoint(prof: DensityProfile, chunk: int = 256) -> bool:
    """True when every pair of bumps has disjoint compact supports."""
    if prof.n_bumps == 1:
        return True
    if any(p != "poly" for p in prof.profiles):
        return False
    a, lam = prof.centers, prof.widths
    for lo in range(0, len(a), chunk):
        dist = np.linalg.norm(a[lo:lo + chunk, None] - a[None], axis=-1)
        reach = lam[lo:lo + chunk, None] + lam[None]
        idx = np.arange(lo, min(lo + chunk, len(a)))
        dist[np.arange(len(idx)), idx] = np.inf
        if np.any(dist <= reach):
            return False
    return True


@dataclass(frozen=True)
class _BumpAlpha:
    """Bessel-kernel data of one bump of given width: self energy, ∫c²,
    spherical-mean factors Λ and ∂Λ/∂α, and the potential table."""

    self_pot: float
    c_sq: float
    lam_mean: float
    lam_mean_da: float
    radii: np.ndarray
    c: np.ndarray
    dc: np.ndarray
    far: float


@lru_cache(maxsize=256)
def _bump_alpha(profile: str, d: int, width: float, alpha: float,
                n_grid: int = 2001) -> _BumpAlpha:
    reach = 1.0 if profile == "poly" else _GAUSS_REACH
    r = np.linspace(0.0, reach * width, n_grid)
    n = _phi(profile, d, r / width) * width ** (-d)
    res = _radial(d, r, n, alpha)
    nu = 0.5 * d - 1
    k = math.sqrt(alpha)
    area = sphere_area(d)
    x = k * r
    # Λ(ρ) = Γ(ν+1) (2/(kρ))^ν I_ν(kρ); ∂Λ/∂α = Γ(ν+1) 2^ν ρ (kρ)^(-ν) I_{ν+1}(kρ) / (2k)
    with np.errstate(divide="ignore", invalid="ignore"):
        lam_r = np.where(x > 0, math.gamma(nu + 1) * (2 / x) ** nu * ive(nu, x) * np.exp(x), 1.0)
        dlam_r = np.where(x > 0, math.gamma(nu + 1) * 2 ** nu * r * x ** (-nu)
                          * ive(nu + 1, x) * np.exp(x) / (2 * k), 0.0)
    jac = area * r ** (d - 1) * n
    return _BumpAlpha(
        self_pot=res.P, c_sq=res.c_sq,
        lam_mean=float(simpson(lam_r * jac, x=r)),
        lam_mean_da=float(simpson(dlam_r * jac, x=r)),
        radii=r, c=res.c, dc=res.dc, far=res.far,
    )


def _bessel_B(d: int, alpha: float, r):
    nu = 0.5 * d - 1
    k = math.sqrt(alpha)
    return (2 * math.pi) ** (-d / 2) * (k / r) ** nu * kve(nu, k * r) * np.exp(-k * r)


def _bessel_BB(d: int, alpha: float, r):
    """(B * B)(r) = -∂B/∂α = (2π)^(-d/2) r^(1-ν) k^(ν-1) K_(ν-1)(kr) / 2."""
    nu = 0.5 * d - 1
    k = math.sqrt(alpha)
    return (2 * math.pi) ** (-d / 2) * 0.5 * r ** (1 - nu) * k ** (nu - 1) \
        * kve(nu - 1, k * r) * np.exp(-k * r)


def _pair_sums(prof: DensityProfile, alpha: float, chunk: int = 256):
    """Σ_{i≠j} w_i w_j f(|a_i - a_j|) for the pair kernels of a disjoint
    mixture; returns (P_pairs, c²_pairs)."""
    d = prof.d
    w, a, lam = prof.weights, prof.centers, prof.widths
    if alpha > 0:
        facs = [_bump_alpha(p, d, float(l), alpha) for p, l in zip(prof.profiles, lam)]
        L = np.array([f.lam_mean for f in facs])
        dL = np.array([f.lam_mean_da for f in facs])
    mu = 1.0 / ((d - 2) * sphere_area(d))
    p_sum = 0.0
    c2_sum = 0.0
    for lo in range(0, len(a), chunk):
        dist = np.linalg.norm(a[lo:lo + chunk, None] - a[None], axis=-1)
        idx = np.arange(lo, min(lo + chunk, len(a)))
        dist[np.arange(len(idx)), idx] = np.inf
        ww = w[idx, None] * w[None]
        if alpha == 0:
            p_sum += float(np.sum(ww * mu * dist ** (2 - d)))
        else:
            Li, Lj = L[idx, None], L[None]
            off = np.isfinite(dist)
            safe = np.where(off, dist, 1.0)
            B = np.where(off, _bessel_B(d, alpha, safe), 0.0)
            BB = np.where(off, _bessel_BB(d, alpha, safe), 0.0)
            p_sum += float(np.sum(ww * B * Li * Lj))
            c2_sum += float(np.sum(ww * (BB * Li * Lj
                                         - B * (dL[idx, None] * Lj + Li * dL[None]))))
    return p_sum, c2_sum


def _exact_mixture(prof: DensityProfile, alpha: float):
    d = prof.d
    w, a, lam = prof.weights, prof.centers, prof.widths
    M = float(w.sum())
    stats = [unit_profile_stats(p, d) for p in prof.profiles]
    m2 = np.array([s.m2 for s in stats])
    ent = np.array([s.ent for s in stats])
    I = float(np.sum(w * (np.sum(a * a, axis=1) + lam ** 2 * m2)))
    S = float(np.sum(w * (np.log(w) - d * np.log(lam) + ent)))
    q = 0.5 * d
    lq_unit = {p: _lq_unit(p, d, q) for p in set(prof.profiles)}
    lq = float(np.sum(w ** q * lam ** (d * (1 - q)) * np.array([lq_unit[p] for p in prof.profiles])))
    if alpha == 0:
        self_p = float(np.sum(w ** 2 * lam ** (2 - d) * np.array([s.self_pot for s in stats])))
        self_c2 = math.nan
    else:
        facs = [_bump_alpha(p, d, float(l), alpha) for p, l in zip(prof.profiles, lam)]
        self_p = float(np.sum(w ** 2 * np.array([f.self_pot for f in facs])))
        self_c2 = float(np.sum(w ** 2 * np.array([f.c_sq for f in facs])))
    pair_p, pair_c2 = _pair_sums(prof, alpha) if prof.n_bumps > 1 else (0.0, 0.0)
    return M, I, S, self_p + pair_p, lq, self_c2 + pair_c2


# --- Monte Carlo -------------------------------------------------------------

@lru_cache(maxsize=16)
def _radius_table(profile: str, d: int, n: int = 20001):
    reach = 1.0 if profile == "poly" else _GAUSS_REACH
    rho = np.linspace(0.0, reach, n)
    return _mass_within(profile, d, rho), rho


def _sample_unit(profile: str, d: int, count: int, rng: np.random.Generator):
    if profile == "gaussian":
        return rng.standard_normal((count, d)) / math.sqrt(2.0)
    cdf, rho = _radius_table(profile, d)
    radius = np.interp(rng.random(count), cdf, rho)
    direction = rng.standard_normal((count, d))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    return radius[:, None] * direction


def _bump_potential(profile, d, width, alpha, rho):
    """Potential of a unit-mass bump and its radial derivative at distance rho."""
    if alpha == 0:
        v, dv = _newton_potential(profile, d, rho / width)
        return v * width ** (2 - d), dv * width ** (1 - d)
    tab = _bump_alpha(profile, d, width, alpha)
    nu = 0.5 * d - 1
    k = math.sqrt(alpha)
    R = tab.radii[-1]
    inside = rho <= R
    v = np.empty_like(rho)
    dv = np.empty_like(rho)
    v[inside] = np.interp(rho[inside], tab.radii, tab.c)
    dv[inside] = np.interp(rho[inside], tab.radii, tab.dc)
    out = rho[~inside]
    scale = np.exp(-k * (out - R)) * out ** (-nu) * tab.far
    v[~inside] = scale * kve(nu, k * out)
    dv[~inside] = -k * scale * kve(nu + 1, k * out)
    return v, dv


def _mc_mixture(prof: DensityProfile, alpha: float, samples: int, seed: int,
                chunk: int = 4096):
    """Stratified Monte Carlo over x ~ n/M, one stratum per bump.

    Returned means are ``∫ n f`` (stratum means weighted by w_i)."""
    d = prof.d
    w, a, lam = prof.weights, prof.centers, prof.widths
    M = float(w.sum())
    rng = np.random.default_rng(seed)
    alloc = np.maximum(2, np.round(samples * w / M).astype(int))
    q = 0.5 * d
    keys = ("S", "P", "lq", "E", "J")
    mean = {k: 0.0 for k in keys}
    var = {k: 0.0 for k in keys}
    for i in range(prof.n_bumps):
        x = a[i] + lam[i] * _sample_unit(prof.profiles[i], d, int(alloc[i]), rng)
        vals = {k: [] for k in keys}
        for lo in range(0, len(x), chunk):
            xs = x[lo:lo + chunk]
            dens = prof.density(xs)
            diff = xs[:, None, :] - a[None]
            rho = np.linalg.norm(diff, axis=-1)
            pot = np.zeros(len(xs))
            xgrad = np.zeros(len(xs))
            for j in range(prof.n_bumps):
                v, dv = _bump_potential(prof.profiles[j], d, float(lam[j]), alpha, rho[:, j])
                pot += w[j] * v
                with np.errstate(invalid="ignore", divide="ignore"):
                    radial = np.where(rho[:, j] > 0, dv / rho[:, j], 0.0)
                xgrad += w[j] * radial * np.einsum("ij,ij->i", xs, diff[:, j])
            logn = np.log(dens)
            vals["S"].append(logn)
            vals["P"].append(pot)
            vals["lq"].append(dens ** (q - 1))
            vals["E"].append(logn - 0.5 * pot)
            vals["J"].append(-2.0 * xgrad)
        for k in keys:
            arr = np.concatenate(vals[k])
            mean[k] += w[i] * arr.mean()
            var[k] += w[i] ** 2 * arr.var(ddof=1) / len(arr)
    I = float(np.sum(w * (np.sum(a * a, axis=1) + lam ** 2 * np.array(
        [unit_profile_stats(p, d).m2 for p in prof.profiles]))))
    err = {k: math.sqrt(v) for k, v in var.items()}
    return M, I, mean, err


def report(profile: DensityProfile, alpha: float = 0.0, *, method: str = "auto",
           samples: int = 1_000_000, seed: int = 0) -> MomentReport:
    """Mass, second moment, entropy, potential, L^(d/2) norm and energies.

    Parameters
    ----------
    profile : DensityProfile
    alpha : float
        Chemical degradation rate; 0 selects the Newtonian kernel.
    method : {"auto", "quadrature", "monte-carlo"}
        ``"auto"`` uses quadrature whenever the profile is radial, a single
        bump, or a mixture of compact bumps with disjoint supports.
    samples, seed : int
        Monte Carlo budget and seed.
    """
    alpha = _check_alpha(alpha)
    d = profile.d
    if profile.kind == "radial-grid":
        if method == "monte-carlo":
            raise ValueError("Monte Carlo is only available for bump mixtures")
        res = _radial(d, profile.radii, profile.values, alpha)
        return _finish(d, alpha, res.M, res.I, res.S, res.P, res.lq, "quadrature")
    if method not in ("auto", "quadrature", "monte-carlo"):
        raise ValueError(f"unknown method {method!r}")
    exact_ok = _disjoint(profile)
    if method == "quadrature" and not exact_ok:
        raise ValueError("quadrature needs disjoint compact supports or a single bump")
    if method != "monte-carlo" and exact_ok:
        M, I, S, P, lq, _ = _exact_mixture(profile, alpha)
        return _finish(d, alpha, M, I, S, P, lq, "quadrature")
    M, I, mean, err = _mc_mixture(profile, alpha, samples, seed)
    S, P, lq, E = mean["S"], mean["P"], mean["lq"], mean["E"]
    lhalf = lq ** (2.0 / d)
    out = _finish(d, alpha, M, I, S, P, lq, "monte-carlo", {
        "S": err["S"], "P": err["P"], "E": err["E"],
        "Lhalf": (2.0 / d) * lhalf / lq * err["lq"],
        "F": 2.0 / (d * M) * err["E"],
    })
    # E from the joint per-sample estimator is consistent with S - P/2 exactly
    assert math.isclose(out.E, E, rel_tol=1e-9, abs_tol=1e-9)
    return out


def moment_derivative(profile: DensityProfile, alpha: float = 0.0, *,
                      method: str = "auto", samples: int = 1_000_000,
                      seed: int = 0, return_stderr: bool = False):
    """Instantaneous dI/dt of the parabolic-elliptic flow at ``profile``.

    ``2dM - |S^(d-1)|^(-1) ∬ n(x) g_α(|x-y|) |x-y|^(2-d) n(y) dx dy``.  The
    double integral is rewritten through ``x·∇B_d^α = -(d-2)B_d^α - 2α B*B``
    as ``(d-2)P + 2α ∫ c²`` with ``c = B_d^α * n``, which only needs the
    potential; Monte Carlo uses ``-2 ∫ n x·∇c`` instead.
    """
    alpha = _check_alpha(alpha)
    d = profile.d
    if profile.kind == "radial-grid":
        res = _radial(d, profile.radii, profile.values, alpha)
        inter = (d - 2) * res.P + (2 * alpha * res.c_sq if alpha > 0 else 0.0)
        val, err = 2 * d * res.M - inter, 0.0
    elif method != "monte-carlo" and _disjoint(profile):
        M, _, _, P, _, c_sq = _exact_mixture(profile, alpha)
        inter = (d - 2) * P + (2 * alpha * c_sq if alpha > 0 else 0.0)
        val, err = 2 * d * M - inter, 0.0
    else:
        M, _, mean, errs = _mc_mixture(profile, alpha, samples, seed)
        val, err = 2 * d * M - mean["J"], errs["J"]
    if not math.isfinite(val):
        raise ValueError("moment derivative did not converge")
    return (val, err) if return_stderr else val


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------

def profile_to_dict(profile: DensityProfile) -> dict:
    if profile.kind == "radial-grid":
        return {"d": profile.d, "kind": "radial-grid",
                "grid": {"r": profile.radii.tolist(), "n": profile.values.tolist()}}
    bumps = [{"w": float(w), "a": a.tolist(), "lambda": float(l), "profile": p}
             for w, a, l, p in zip(profile.weights, profile.centers, profile.widths,
                                   profile.profiles)]
    return {"d": profile.d, "kind": "bump-mixture", "bumps": bumps}


def profile_from_dict(data: dict) -> DensityProfile:
    d = int(data["d"])
    kind = data.get("kind")
    if kind == "radial-grid":
        return radial_profile(d, data["grid"]["r"], data["grid"]["n"])
    if kind == "bump-mixture":
        bumps = data["bumps"]
        if not bumps:
            raise ValueError("a bump mixture needs at least one bump")
        return mixture(d, [b["w"] for b in bumps], [b["a"] for b in bumps],
                       [b["lambda"] for b in bumps], [b.get("profile", "poly") for b in bumps])
    raise ValueError(f"unknown profile kind {kind!r}")


def load_profile(path) -> DensityProfile:
    with open(path) as fh:
        return profile_from_dict(json.load(fh))


def save_profile(profile: DensityProfile, path) -> None:
    with open(path, "w") as fh:
        json.dump(profile_to_dict(profile), fh, indent=2)
