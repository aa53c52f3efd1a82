"""Sharp functional-inequality constants for the Keller-Segel system in R^d.

All closed forms are evaluated with ``math.gamma``/``math.lgamma`` (correctly
rounded to a few ulp), which is what the strict-inequality checks downstream
need.  The Gagliardo-Nirenberg constant at ``p = d/2`` has no closed form; it
is obtained from the ground state of

    psi'' + (d-1)/r psi' - (2/d) psi + psi^(1+4/d) = 0

computed by shooting on ``psi(0)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import simpson, solve_ivp
from scipy.special import kve

__all__ = [
    "DimensionalConstants",
    "GroundStateSolution",
    "GroundStateError",
    "sphere_area",
    "sobolev_sq",
    "hls_constant",
    "k1_constant",
    "k2_constant",
    "b_constant",
    "compute_constants",
    "solve_ground_state",
    "gn_constant",
    "with_ground_state",
]


class GroundStateError(RuntimeError):
    """Shooting failed to bracket or converge."""


def _check_dim(d: int) -> int:
    if int(d) != d or d < 3:
        raise ValueError(f"dimension must be an integer >= 3, got {d!r}")
    return int(d)


def sphere_area(d: int) -> float:
    """Surface measure |S^{d-1}| of the unit sphere in R^d."""
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


def sobolev_sq(d: int) -> float:
    """Square of the sharp Sobolev constant, 4 / (d (d-2) |S^d|^(2/d)).

    Note the sphere is S^d (the unit sphere of R^{d+1}), not S^{d-1}.
    """
    return 4.0 / (d * (d - 2) * sphere_area(d + 1) ** (2.0 / d))


def hls_constant(d: int) -> float:
    """Lieb's sharp HLS constant C_HLS(d, d-2)."""
    log_ratio = math.lgamma(d) - math.lgamma(d / 2)
    return (
        math.pi ** (d / 2 - 1)
        / math.gamma(d / 2 + 1)
        * math.exp(2.0 / d * log_ratio)
    )


def k1_constant(d: int) -> float:
    """First blow-up constant 2^(-d/(d-2)) (d |S^{d-1}|)^(-2/(d-2))."""
    return 2.0 ** (-d / (d - 2)) * (d * sphere_area(d)) ** (-2.0 / (d - 2))


def k2_constant(d: int) -> float:
    """Second blow-up constant (d / 2 pi) exp(-d/(d-2))."""
    return d / (2 * math.pi) * math.exp(-d / (d - 2))


def b_constant(d: int, mass: float) -> float:
    """B(d, M) = d^2 M - 2(d-2) [M log M + (dM/2) log(dM / 2 pi)]."""
    m = float(mass)
    return d * d * m - 2 * (d - 2) * (
        m * math.log(m) + 0.5 * d * m * math.log(d * m / (2 * math.pi))
    )


@dataclass(frozen=True)
class DimensionalConstants:
    """Sharp constants and derived thresholds for one space dimension.

    ``smallness_gn`` stays ``None`` until a ground state has been solved
    (see :func:`with_ground_state`).
    """

    d: int
    sphere_area: float
    mu_d: float
    sobolev_sq: float
    hls: float
    k1: float
    k2: float
    smallness_sobolev: float
    smallness_gn: float | None = None

    def b_of_m(self, mass: float) -> float:
        return b_constant(self.d, mass)

    def to_dict(self) -> dict:
        keys = ("d", "sphere_area", "mu_d", "sobolev_sq", "hls", "k1", "k2",
                "smallness_sobolev", "smallness_gn")
        return {k: getattr(self, k) for k in keys}

    @classmethod
    def from_dict(cls, data: dict) -> "DimensionalConstants":
        return cls(**{k: data[k] for k in (
            "d", "sphere_area", "mu_d", "sobolev_sq", "hls", "k1", "k2",
            "smallness_sobolev")}, smallness_gn=data.get("smallness_gn"))


def compute_constants(d: int) -> DimensionalConstants:
    """Evaluate every closed-form constant for dimension ``d >= 3``."""
    d = _check_dim(d)
    area = sphere_area(d)
    cs2 = sobolev_sq(d)
    return DimensionalConstants(
        d=d,
        sphere_area=area,
        mu_d=1.0 / ((d - 2) * area),
        sobolev_sq=cs2,
        hls=hls_constant(d),
        k1=k1_constant(d),
        k2=k2_constant(d),
        smallness_sobolev=8.0 / (d * cs2),
    )


# ---------------------------------------------------------------------------
# Ground state by shooting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GroundStateSolution:
    d: int
    radial_grid: np.ndarray
    psi: np.ndarray
    psi0: float
    l2_norm: float
    residual: float


_R0 = 1e-6


def _rhs(d: int):
    p = 1.0 + 4.0 / d
    c = 2.0 / d

    def f(r, y):
        psi, dpsi = y
        return [dpsi, -(d - 1) / r * dpsi + c * psi - np.sign(psi) * abs(psi) ** p]

    return f


def _series_start(d: int, psi0: float, r: float):
    # psi(r) ~ psi0 + psi''(0) r^2 / 2 with d psi''(0) = (2/d) psi0 - psi0^(1+4/d)
    curv = ((2.0 / d) * psi0 - psi0 ** (1 + 4.0 / d)) / d
    return psi0 + 0.5 * curv * r * r, curv * r


def _shoot(d: int, psi0: float, r_end: float, rtol: float):
    """Integrate from the origin; classify as +1 (turns upward), -1 (crosses
    zero) or 0 (neither before ``r_end``)."""

    def crosses(r, y):
        return y[0]

    def turns(r, y):
        return y[1]

    crosses.terminal = True
    turns.terminal = True
    turns.direction = 1
    sol = solve_ivp(_rhs(d), (_R0, r_end), list(_series_start(d, psi0, _R0)),
                    method="DOP853", rtol=rtol, atol=1e-300,
                    events=(crosses, turns), dense_output=True)
    if sol.t_events[0].size:
        return -1, sol
    if sol.t_events[1].size:
        return 1, sol
    return 0, sol


def _tail(d: int, r: np.ndarray, r_match: float, psi_match: float):
    # decaying solution of the linearized equation, A r^(-nu) K_nu(k r),
    # returned with its derivative -A k r^(-nu) K_(nu+1)(k r)
    nu = d / 2 - 1
    k = math.sqrt(2.0 / d)
    scale = psi_match / (r_match ** (-nu) * kve(nu, k * r_match))
    damp = np.exp(-k * (r - r_match)) * r ** (-nu) * scale
    return damp * kve(nu, k * r), -k * damp * kve(nu + 1, k * r)


def solve_ground_state(d: int, tol: float = 1e-6, *, n_grid: int = 4001,
                       r_max: float = 40.0, max_iter: int = 200,
                       ) -> GroundStateSolution:
    """Positive radial ground state of ``Δψ - (2/d)ψ + ψ^(1+4/d) = 0``.

    Shooting on ``psi0 = ψ(0)`` with bisection: below the ground state the
    trajectory turns upward without a zero, above it the trajectory crosses
    zero.  The bisected trajectory is trusted up to the radius where ψ is the
    geometric mean of ψ(0) and its minimum; beyond that the exponentially
    decaying solution of the linearized equation is spliced in.

    Parameters
    ----------
    d : int
        Space dimension, ``d >= 3``.
    tol : float
        Bound on the ODE residual, in ``(0, 1e-3]``.
    n_grid : int
        Number of uniformly spaced radii in the returned grid.
    r_max : float
        Initial outer radius, doubled until ``ψ(r_max) < 1e-10``.
    """
    d = _check_dim(d)
    if not 0 < tol <= 1e-3:
        raise ValueError("tol must lie in (0, 1e-3]")
    rtol = 1e-12
    r_end = 4.0 * r_max

    lo = (2.0 / d) ** (d / 4) * (1 + 1e-3)
    hi = 2.0 * lo
    if _shoot(d, lo, r_end, rtol)[0] != 1:
        raise GroundStateError("lower shooting value does not turn upward")
    for _ in range(60):
        if _shoot(d, hi, r_end, rtol)[0] == -1:
            break
        hi *= 2.0
    else:
        raise GroundStateError("could not find a shooting value crossing zero")

    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _shoot(d, mid, r_end, rtol)[0] == 1:
            lo = mid
        else:
            hi = mid
    else:
        raise GroundStateError(f"bisection did not converge in {max_iter} steps")

    outcome, sol = _shoot(d, lo, r_end, rtol)
    if outcome != 1:
        raise GroundStateError("final trajectory is not of the turning kind")
    r_turn = float(sol.t_events[1][0])
    psi_min = float(sol.sol(r_turn)[0])
    target = math.sqrt(psi_min * lo)
    rs = np.linspace(_R0, r_turn, 20001)
    vals = sol.sol(rs)[0]
    r_match = float(rs[np.argmax(vals < target)])
    psi_match = float(sol.sol(r_match)[0])

    def profile(r):
        r = np.asarray(r, dtype=float)
        val = np.empty_like(r)
        der = np.empty_like(r)
        small = r < _R0
        mid = (~small) & (r <= r_match)
        far = r > r_match
        val[small], der[small] = _series_start(d, lo, r[small])
        if mid.any():
            val[mid], der[mid] = sol.sol(r[mid])
        if far.any():
            val[far], der[far] = _tail(d, r[far], r_match, psi_match)
        return val, der

    while profile(np.array([r_max]))[0][0] >= 1e-10:
        r_max *= 2.0

    grid = np.linspace(0.0, r_max, n_grid)
    psi = profile(grid)[0]
    area = sphere_area(d)
    l2 = math.sqrt(area * simpson(psi ** 2 * grid ** (d - 1), x=grid))

    # ODE residual: psi'' by centred differences of the dense-output psi'
    eta = 1e-5
    rr = grid[grid > 10 * eta]
    p_0, d1 = profile(rr)
    d2 = (profile(rr + eta)[1] - profile(rr - eta)[1]) / (2 * eta)
    res = d2 + (d - 1) / rr * d1 - (2.0 / d) * p_0 + np.abs(p_0) ** (1 + 4.0 / d)
    residual = float(np.max(np.abs(res)))
    if residual > tol:
        raise GroundStateError(f"ODE residual {residual:.3e} exceeds tol {tol:.1e}")
    if not (np.all(psi > 0) and np.all(np.diff(psi) < 0)):
        raise GroundStateError("profile is not positive and strictly decreasing")

    return GroundStateSolution(d=d, radial_grid=grid, psi=psi, psi0=lo,
                               l2_norm=l2, residual=residual)


def gn_constant(gs: GroundStateSolution) -> float:
    """Sharp Gagliardo-Nirenberg constant C_GN(d/2, d) from a ground state."""
    if not isinstance(gs, GroundStateSolution):
        raise TypeError("gn_constant needs a GroundStateSolution")
    d = gs.d
    return (1 + 2.0 / d) ** (d / (2.0 * (d + 2))) * gs.l2_norm ** (-2.0 / (d + 2))


def with_ground_state(consts: DimensionalConstants,
                      gs: GroundStateSolution) -> DimensionalConstants:
    """Return ``consts`` with ``smallness_gn = (8/d) C_GN^(-2(1+2/d))``."""
    if gs.d != consts.d:
        raise ValueError("ground state and constants are for different dimensions")
    d = consts.d
    cgn = gn_constant(gs)
    return replace(consts, smallness_gn=8.0 / d * cgn ** (-2.0 * (1 + 2.0 / d)))
