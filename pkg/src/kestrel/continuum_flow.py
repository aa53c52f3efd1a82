"""Particle discretization of the one-dimensional aggregation equation.

The density ``n`` of mass ``M`` on the line is represented through its
pseudo-inverse distribution function ``X(m)``, ``m ∈ (0, M)``, sampled at
the midpoints ``m_i = (i - 1/2)h`` with ``h = M/N``.  In these variables the
equation is the gradient flow

    X' = -(1/h) ∇G[X],
    G[X] = -h Σ log((X_(i+1) - X_i)/h) - (h²/(2γ)) Σ_(i≠j) |X_i - X_j|^(-γ)

for the kernel ``|x|^(-γ)/γ``.  The logarithmic kernel replaces the pair
term by ``+(h²/2) Σ_(i≠j) log|X_i - X_j|``.  Under dilation ``X → λX`` the
logarithmic energy changes by ``M(M/2 - 1) log λ`` in the limit, which
makes ``M = 2`` critical: the second moment ``I = h Σ X_i²`` then satisfies
``I' = -2M(M/2 - 1)`` exactly for the continuum problem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from ._integrate import EVENT, STEP_LIMIT, TIME_LIMIT, UNDERFLOW, integrate_batch

__all__ = [
    "ContinuumConfig",
    "ParticleState",
    "TrajectoryRecord",
    "GapCollapseError",
    "ProxError",
    "initial_state",
    "rhs",
    "energy",
    "gradient",
    "hessian",
    "second_moment",
    "moment_rate",
    "dissipation",
    "reconstruct_density",
    "reconstructed_second_moment",
    "prox_step",
    "simulate",
    "richardson_moment_rate",
]

POWER, LOG = "power", "log"


class GapCollapseError(ValueError):
    """Two particles are closer than the state can safely represent."""


class ProxError(RuntimeError):
    """Implicit (proximal) step failed even at the smallest step size."""


@dataclass(frozen=True)
class ContinuumConfig:
    """Parameters of the particle model.

    Attributes
    ----------
    mass : float
        Total mass ``M``.
    n_particles : int
        Number of particles ``N >= 16``.
    kernel : {"power", "log"}
    gamma : float
        Exponent of the power kernel ``|x|^(-γ)/γ``, in ``(0, 1)``; ignored
        for the logarithmic kernel.
    rtol, atol : float
        Tolerances of the explicit controller.
    gap_tol : float
        A run stops when the smallest gap falls below this value.
    """

    mass: float
    n_particles: int
    kernel: str = LOG
    gamma: float = 0.5
    rtol: float = 1e-8
    atol: float = 1e-10
    gap_tol: float = 1e-8

    def __post_init__(self):
        if not (self.mass > 0 and math.isfinite(self.mass)):
            raise ValueError("mass must be positive")
        if int(self.n_particles) != self.n_particles or self.n_particles < 16:
            raise ValueError("n_particles must be an integer >= 16")
        if self.kernel not in (POWER, LOG):
            raise ValueError(f"kernel must be {POWER!r} or {LOG!r}")
        if self.kernel == POWER and not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")

    @property
    def h(self) -> float:
        return self.mass / self.n_particles

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(1, self.n_particles + 1) - 0.5) * self.h


@dataclass(frozen=True)
class ParticleState:
    """Strictly increasing particle positions at time ``t``."""

    X: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 1:
            raise ValueError("X must be a vector")
        if not np.all(np.isfinite(X)):
            raise ValueError("positions must be finite")
        if not np.all(np.diff(X) > 0):
            raise ValueError("positions must be strictly increasing")
        object.__setattr__(self, "X", X)


@dataclass(frozen=True)
class TrajectoryRecord:
    """Diagnostics at every accepted step.

    ``X`` holds the full states (rows) when snapshots were requested.
    ``status`` is ``"t_max"``, ``"collapse"`` or ``"stalled"``.
    """

    t: np.ndarray
    I: np.ndarray
    G: np.ndarray
    X: np.ndarray | None
    status: str
    n_steps: int
    n_prox: int = 0

    def rows(self):
        for t, i, g in zip(self.t, self.I, self.G):
            yield float(t), float(i), float(g)


def initial_state(config: ContinuumConfig, width: float = 1.0,
                  profile: str = "gaussian") -> ParticleState:
    """Quantiles of a centred profile at the mass midpoints.

    ``"gaussian"`` samples the normal law of standard deviation ``width``;
    ``"uniform"`` the uniform law on ``[-width, width]``.
    """
    q = config.midpoints / config.mass
    if profile == "gaussian":
        X = width * ndtri(q)
    elif profile == "uniform":
        X = width * (2 * q - 1)
    else:
        raise ValueError(f"unknown profile {profile!r}")
    return ParticleState(X)


def _as_X(config: ContinuumConfig, state) -> np.ndarray:
    X = state.X if isinstance(state, ParticleState) else np.asarray(state, dtype=float)
    if X.shape != (config.n_particles,):
        raise ValueError(f"expected {config.n_particles} positions, got shape {X.shape}")
    return X


def _check_gaps(X: np.ndarray) -> None:
    g = np.diff(X)
    safe = 64 * np.finfo(float).eps * max(1.0, float(np.max(np.abs(X))))
    if not np.all(g > safe):
        raise GapCollapseError(f"gap {g.min():.3e} below machine safety {safe:.1e}")


def _rhs_rows(config: ContinuumConfig, X: np.ndarray) -> np.ndarray:
    """``-(1/h)∇G`` for each row of ``X``; no validation."""
    h = config.h
    flux = np.zeros((X.shape[0], X.shape[1] + 1))
    flux[:, 1:-1] = h / np.diff(X, axis=1)  # 1/∂_m X on the gaps, zero at both ends
    D = (flux[:, 1:] - flux[:, :-1]) / h
    d = X[:, :, None] - X[:, None, :]
    a = np.abs(d)
    np.einsum("bii->bi", a)[:] = np.inf
    p = 1.0 if config.kernel == LOG else config.gamma + 1.0
    S = h * np.sum(np.sign(d) * a ** -p, axis=2)
    return -(D + S)


def rhs(config: ContinuumConfig, state) -> np.ndarray:
    """Velocity ``X' = -(D + S)`` of every particle.

    ``D`` is the centred difference of the flux ``1/∂_m X`` with zero flux
    at both ends and ``S_i = h Σ_(j≠i) sign(X_i - X_j)|X_i - X_j|^(-γ-1)``
    (exponent ``-1`` for the logarithmic kernel).

    Raises
    ------
    GapCollapseError
        If a gap is below a few ulps of the state scale.
    """
    X = _as_X(config, state)
    _check_gaps(X)
    return _rhs_rows(config, X[None, :])[0]


def _energy_rows(config: ContinuumConfig, X: np.ndarray) -> np.ndarray:
    h, N = config.h, X.shape[1]
    ent = -h * np.sum(np.log(np.diff(X, axis=1) / h), axis=1)
    iu = np.triu_indices(N, 1)
    a = np.abs(X[:, iu[1]] - X[:, iu[0]])
    if config.kernel == LOG:
        pair = h * h * np.sum(np.log(a), axis=1)
    else:
        pair = -(h * h / config.gamma) * np.sum(a ** -config.gamma, axis=1)
    return ent + pair


def energy(config: ContinuumConfig, state) -> float:
    """Discrete free energy ``G`` (the ``i ≠ j`` sum counts each pair twice)."""
    X = _as_X(config, state)
    if not np.all(np.diff(X) > 0):
        raise ValueError("nonpositive gap")
    return float(_energy_rows(config, X[None, :])[0])


def gradient(config: ContinuumConfig, state) -> np.ndarray:
    """``∇G``; equal to ``-h·rhs`` by construction."""
    return -config.h * rhs(config, state)


def hessian(config: ContinuumConfig, state) -> np.ndarray:
    """Analytic Hessian of :func:`energy`."""
    X = _as_X(config, state)
    h, N = config.h, X.size
    H = np.zeros((N, N))
    w = h / np.diff(X) ** 2
    i = np.arange(N - 1)
    H[i, i] += w
    H[i + 1, i + 1] += w
    H[i, i + 1] -= w
    H[i + 1, i] -= w
    a = np.abs(X[:, None] - X[None, :])
    np.fill_diagonal(a, np.inf)
    if config.kernel == LOG:
        c = -h * h * a ** -2.0
    else:
        c = -h * h * (config.gamma + 1) * a ** (-config.gamma - 2)
    # pair (i, j) contributes c_ij (e_i - e_j)(e_i - e_j)^T
    H += np.diag(c.sum(axis=1)) - c
    return H


def second_moment(config: ContinuumConfig, state) -> float:
    """``I = h Σ X_i²``, the midpoint rule for ``∫ X(m)² dm``."""
    X = _as_X(config, state)
    return float(config.h * X @ X)


def moment_rate(config: ContinuumConfig, state) -> float:
    """``dI/dt = 2h Σ X_i X_i'`` along the flow."""
    X = _as_X(config, state)
    return float(2 * config.h * X @ rhs(config, X))


def dissipation(config: ContinuumConfig, state) -> float:
    """``-dG/dt = h Σ (X_i')²``."""
    v = rhs(config, state)
    return float(config.h * v @ v)


def reconstruct_density(config: ContinuumConfig, state) -> tuple[np.ndarray, np.ndarray]:
    """Piecewise-constant density ``n = h/(X_(i+1) - X_i)`` on each gap.

    Returns the cell edges (the particle positions) and the ``N - 1`` cell
    values; every cell carries mass ``h`` exactly.
    """
    X = _as_X(config, state)
    return X.copy(), config.h / np.diff(X)


def reconstructed_second_moment(config: ContinuumConfig, state) -> float:
    """``∫ x² n dx`` for the piecewise-constant reconstruction."""
    X, n = reconstruct_density(config, state)
    return float(np.sum(n * (X[1:] ** 3 - X[:-1] ** 3) / 3.0))


# ---------------------------------------------------------------------------
# time stepping
# ---------------------------------------------------------------------------

def _field(config: ContinuumConfig):
    """Augmented field for ``(X, t)`` in a rescaled time.

    As in the three-particle model, ``dX/ds = ψ X'`` and ``dt/ds = ψ`` with
    ``ψ = m/(m + |X'|∞)``, so an aggregating run approaches the collapse
    time without needing to resolve it in ``t``.
    """

    def f(Y):
        X = Y[:, :-1]
        F = _rhs_rows(config, X)
        m = np.min(np.diff(X, axis=1), axis=1)
        psi = m / (m + np.max(np.abs(F), axis=1))
        return np.column_stack([psi[:, None] * F, psi])

    return f


def _valid(Y):
    return np.all(np.diff(Y[:, :-1], axis=1) > 0, axis=1)


def prox_step(config: ContinuumConfig, X: np.ndarray, tau: float, *,
              tol: float = 1e-10, max_iter: int = 50) -> np.ndarray:
    """One implicit Euler step ``argmin h|Y - X|²/(2τ) + G[Y]``.

    The weight ``h`` matches the metric in which the particle system is a
    gradient flow, so the step is consistent with ``X' = -(1/h)∇G``.  The
    optimality condition is solved by damped Newton from ``X``.

    Raises
    ------
    ProxError
        If Newton fails to converge or cannot keep the particles ordered.
    """
    h = config.h
    Y = np.array(X, dtype=float)

    def resid(Y):
        return h * (Y - X) / tau - h * _rhs_rows(config, Y[None, :])[0]

    F = resid(Y)
    scale = h * max(1.0, float(np.max(np.abs(X)))) / tau
    for _ in range(max_iter):
        if np.linalg.norm(F, np.inf) < tol * scale:
            return Y
        J = h / tau * np.eye(Y.size) + hessian(config, Y)
        try:
            step = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError as exc:
            raise ProxError("singular Newton matrix") from exc
        lam = 1.0
        while lam > 1e-8:
            Yn = Y + lam * step
            if np.all(np.diff(Yn) > 0):
                Fn = resid(Yn)
                if np.linalg.norm(Fn) < np.linalg.norm(F):
                    break
            lam *= 0.5
        else:
            raise ProxError("Newton line search failed")
        Y, F = Yn, Fn
    raise ProxError(f"Newton did not converge in {max_iter} iterations")


def _prox_run(config, X, t, t_max, tau, max_steps, ts, Xs):
    """Implicit steps until ``t_max``; ``τ`` halves on failure and doubles
    after a success, never beyond its initial value."""
    tau0, n = tau, 0
    while t < t_max * (1 - 1e-15) and n < max_steps:
        dt = min(tau, t_max - t)
        try:
            Y = prox_step(config, X, dt)
        except ProxError:
            tau *= 0.5
            if tau < 1e-14 * max(1.0, t):
                return X, t, "stalled", n
            continue
        X, t, n = Y, t + dt, n + 1
        ts.append(t)
        Xs.append(X)
        if np.min(np.diff(X)) < config.gap_tol:
            return X, t, "collapse", n
        tau = min(2.0 * tau, tau0)
    return X, t, ("t_max" if t >= t_max * (1 - 1e-15) else "stalled"), n


def simulate(config: ContinuumConfig, state0, t_max: float, *, method: str = "explicit",
             tau: float | None = None, snapshots: bool = False,
             max_steps: int = 5_000) -> TrajectoryRecord:
    """Integrate the particle system up to ``t_max``.

    Parameters
    ----------
    method : {"explicit", "prox"}
        ``"explicit"`` uses the adaptive Dormand-Prince controller and falls
        back to implicit steps if it stalls (step-size underflow or step
        limit), starting from the last explicit step size.  ``"prox"``
        takes implicit steps of size ``tau`` from the start.
    tau : float, optional
        Initial implicit step size; defaults to ``t_max/100``.
    snapshots : bool
        Keep the full state at every step.
    max_steps : int
        Budget for each of the explicit and implicit phases.

    Notes
    -----
    A run stops early with status ``"collapse"`` when the smallest gap
    drops below ``config.gap_tol``.
    """
    X0 = _as_X(config, state0)
    _check_gaps(X0)
    if not t_max > 0:
        raise ValueError("t_max must be positive")
    ts, Xs, n_steps, n_prox = [0.0], [X0.copy()], 0, 0

    if method == "explicit":
        gap_event = lambda Y: np.min(np.diff(Y[:, :-1], axis=1), axis=1) - config.gap_tol
        time_event = lambda Y: t_max - Y[:, -1]
        Y0 = np.concatenate([X0, [0.0]])[None, :]
        res = integrate_batch(_field(config), Y0, np.inf, rtol=config.rtol, atol=config.atol,
                              events=(gap_event, time_event), valid=_valid, record=True,
                              max_steps=max_steps)
        rec = res.records[0]
        if res.status[0] == EVENT:
            rec[-1] = (rec[-1][0], res.y[0].copy())
        for _, Y in rec[1:]:
            ts.append(float(Y[-1]))
            Xs.append(Y[:-1])
        n_steps = int(res.n_steps[0])
        X, t = Xs[-1], ts[-1]
        if res.status[0] == EVENT:
            status = "collapse" if res.event[0] == 0 else "t_max"
        elif res.status[0] in (UNDERFLOW, STEP_LIMIT, TIME_LIMIT):
            # stiff stall: continue implicitly from the last explicit step size
            last = ts[-1] - ts[-2] if len(ts) > 1 else t_max / 100
            X, t, status, n_prox = _prox_run(config, X, t, t_max, max(last, 1e-12),
                                             max_steps, ts, Xs)
        else:
            status = "stalled"
    elif method == "prox":
        _, _, status, n_prox = _prox_run(config, X0, 0.0, t_max,
                                         t_max / 100 if tau is None else tau,
                                         max_steps, ts, Xs)
    else:
        raise ValueError(f"unknown method {method!r}")

    Xa = np.array(Xs)
    t = np.array(ts)
    G = np.concatenate([_energy_rows(config, c) for c in np.array_split(Xa, 1 + len(Xa) // 256)])
    return TrajectoryRecord(t=t, I=config.h * np.sum(Xa * Xa, axis=1),
                            G=G, X=Xa if snapshots else None,
                            status=status, n_steps=n_steps, n_prox=n_prox)


def richardson_moment_rate(mass: float, ns=(64, 128, 256), *, kernel: str = LOG,
                           gamma: float = 0.5, width: float = 1.0) -> dict:
    """Extrapolate ``dI/dt`` at ``t = 0`` to ``h → 0``.

    The rate is evaluated on Gaussian initial data for each ``N`` in the
    doubling sequence ``ns``; the mesh error is first order in ``h``, so
    repeated Richardson elimination ``(2^k a(h/2) - a(h))/(2^k - 1)``,
    ``k = 1, 2, ...``, removes successive orders.

    Returns a dict with the raw rates, the Richardson table and the
    extrapolated value.
    """
    ns = list(ns)
    if any(b != 2 * a for a, b in zip(ns, ns[1:])):
        raise ValueError("ns must be a doubling sequence")
    raw = []
    for n in ns:
        cfg = ContinuumConfig(mass, n, kernel=kernel, gamma=gamma)
        raw.append(moment_rate(cfg, initial_state(cfg, width)))
    table = [raw]
    for k in range(1, len(ns)):
        prev = table[-1]
        table.append([(2 ** k * b - a) / (2 ** k - 1) for a, b in zip(prev, prev[1:])])
    return {"ns": ns, "raw": raw, "table": table, "extrapolated": table[-1][0]}
