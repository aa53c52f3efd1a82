"""Finite-dimensional gradient-flow model of one-dimensional aggregation.

The pseudo-inverse distribution function is sampled at ``N`` points of the
mass interval, ``m_i = iM/(N+1)``, and the energy is discretized as

    G[X] = U[X] - W[X],
    U[X] = -Σ log(X_(i+1) - X_i),
    W[X] = (χ/γ) Σ_(i<j) (X_j - X_i)^(-γ),   χ = M/(N+1).

The flow is ``X' = -∇G``.  For ``N = 3`` the gaps ``u = X2 - X1`` and
``v = X3 - X2`` describe the dynamics once the centre of mass is fixed at 0;
the orbits either collapse (a gap vanishes) or disperse (both grow).
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from ._integrate import EVENT, STEP_LIMIT, TIME_LIMIT, UNDERFLOW, integrate_batch
from .criteria import CriterionReport, _make

__all__ = [
    "DiscreteConfig",
    "DiscreteState",
    "Trajectory",
    "FlowOutcome",
    "Manifold",
    "GridSpec",
    "Portrait",
    "NewtonError",
    "energy",
    "entropy_part",
    "interaction_part",
    "gradient",
    "hessian",
    "euler_residual",
    "identity_residuals",
    "integrate",
    "classify",
    "criterion_blowup_1",
    "criterion_blowup_2",
    "criterion_global",
    "gauge",
    "critical_point",
    "separatrix",
    "separatrix_side",
    "distance_to_polyline",
    "verify_discrete_GNS",
    "phase_portrait",
    "overlay_curves",
]

COLLAPSE, DISPERSION, UNDECIDED = "Collapse", "Dispersion", "Undecided"
_CODES = {COLLAPSE: 1, DISPERSION: 2, UNDECIDED: 0}


class NewtonError(RuntimeError):
    """Damped Newton iteration for the critical point did not converge."""


@dataclass(frozen=True)
class DiscreteConfig:
    """Model parameters.

    Attributes
    ----------
    gamma : float
        Homogeneity of the kernel ``|x|^(-γ)/γ``, in ``(0, 1)``.
    mass : float
        Total mass ``M > 0``.
    n_points : int
        Number of mass nodes ``N >= 3``.
    """

    gamma: float
    mass: float
    n_points: int = 3

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not (self.mass > 0 and math.isfinite(self.mass)):
            raise ValueError("mass must be positive")
        if int(self.n_points) != self.n_points or self.n_points < 3:
            raise ValueError("n_points must be an integer >= 3")

    @property
    def chi(self) -> float:
        return self.mass / (self.n_points + 1)

    @property
    def n_pairs(self) -> int:
        return self.n_points * (self.n_points - 1) // 2


@dataclass(frozen=True)
class DiscreteState:
    """Ordered particle positions with zero centre of mass."""

    X: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 1 or X.size < 3:
            raise ValueError("X must be a vector of at least 3 positions")
        if not np.all(np.diff(X) > 0):
            raise ValueError("positions must be strictly increasing")
        if abs(X.sum()) >= 1e-12 * np.max(np.abs(X)):
            raise ValueError("centre of mass must be 0")
        object.__setattr__(self, "X", X)

    @classmethod
    def from_gaps(cls, gaps) -> "DiscreteState":
        return cls(_from_gaps(np.asarray(gaps, dtype=float)[None, :])[0])

    @property
    def gaps(self) -> np.ndarray:
        return np.diff(self.X)

    @property
    def norm2(self) -> float:
        return float(self.X @ self.X)


def _from_gaps(gaps: np.ndarray) -> np.ndarray:
    """Rows of gaps to rows of positions with zero mean."""
    X = np.concatenate([np.zeros((gaps.shape[0], 1)), np.cumsum(gaps, axis=1)], axis=1)
    return X - X.mean(axis=1, keepdims=True)


def _as_X(state) -> np.ndarray:
    X = state.X if isinstance(state, DiscreteState) else np.asarray(state, dtype=float)
    if np.any(np.diff(X, axis=-1) <= 0):
        raise ValueError("nonpositive gap")
    return X


def _pair_diffs(X):
    # D[..., i, j] = X_j - X_i
    return X[..., None, :] - X[..., :, None]


# ---------------------------------------------------------------------------
# energy and derivatives
# ---------------------------------------------------------------------------

def entropy_part(config: DiscreteConfig, state) -> float:
    """``U[X] = -Σ log(gap)``."""
    return float(-np.sum(np.log(np.diff(_as_X(state)))))


def interaction_part(config: DiscreteConfig, state) -> float:
    """``W[X] = (χ/γ) Σ_(i<j) |X_j - X_i|^(-γ)``."""
    X = _as_X(state)
    iu = np.triu_indices(X.size, 1)
    return float(config.chi / config.gamma * np.sum(_pair_diffs(X)[iu] ** -config.gamma))


def energy(config: DiscreteConfig, state) -> float:
    """``G[X] = U[X] - W[X]``."""
    return entropy_part(config, state) - interaction_part(config, state)


def _grad_rows(config: DiscreteConfig, X: np.ndarray) -> np.ndarray:
    """∇G for every row of ``X`` (shape ``(B, N)``)."""
    g = np.diff(X, axis=1)
    inv = 1.0 / g
    out = np.zeros_like(X)
    out[:, :-1] += inv
    out[:, 1:] -= inv
    D = _pair_diffs(X)  # X_j - X_i
    absD = np.abs(D)
    N = X.shape[1]
    eye = np.eye(N, dtype=bool)
    absD[:, eye] = 1.0
    # χ Σ_j sign(X_i - X_j) |X_i - X_j|^(-γ-1)
    term = -np.sign(D) * absD ** (-config.gamma - 1)
    term[:, eye] = 0.0
    out += config.chi * term.sum(axis=2)
    return out


def gradient(config: DiscreteConfig, state) -> np.ndarray:
    """Analytic gradient of :func:`energy`."""
    X = _as_X(state)
    return _grad_rows(config, X[None, :])[0]


def hessian(config: DiscreteConfig, state) -> np.ndarray:
    """Analytic Hessian of :func:`energy`."""
    X = _as_X(state)
    N = X.size
    H = np.zeros((N, N))
    for i, gi in enumerate(np.diff(X)):
        e = np.zeros(N)
        e[i], e[i + 1] = -1.0, 1.0
        H += np.outer(e, e) / gi ** 2
    gam, chi = config.gamma, config.chi
    for i in range(N):
        for j in range(i + 1, N):
            e = np.zeros(N)
            e[i], e[j] = -1.0, 1.0
            H -= chi * (gam + 1) * (X[j] - X[i]) ** (-gam - 2) * np.outer(e, e)
    return H


def _W_rows(config: DiscreteConfig, X: np.ndarray) -> np.ndarray:
    iu = np.triu_indices(X.shape[1], 1)
    return config.chi / config.gamma * np.sum(_pair_diffs(X)[:, iu[0], iu[1]] ** -config.gamma,
                                              axis=1)


def euler_residual(config: DiscreteConfig, state, *, extended: bool = False) -> float:
    """``<X, ∇G> - (-(N-1) + γW)``; vanishes identically.

    Near a collapse the gradient components are huge and cancel in the
    inner product, so double precision loses about ``|X||∇G|·1e-16``.
    ``extended=True`` evaluates the same formulas in ``np.longdouble``.
    """
    X = _as_X(state)
    dt = np.longdouble if extended else float
    Xr = np.asarray(X, dtype=dt)[None, :]
    lhs = np.sum(Xr * _grad_rows(config, Xr), axis=1)[0]
    return float(lhs - (-(X.size - 1) + config.gamma * _W_rows(config, Xr)[0]))


def identity_residuals(config: DiscreteConfig, X: np.ndarray, *,
                       extended: bool = True) -> tuple[float, float]:
    """Largest deviations along sampled states ``X`` (rows) of

    * the Euler identity ``<X, ∇G> = -(N-1) + γW`` and
    * the norm evolution ``½ d|X|²/dt = <X, X'> = (N-1) - γW``,

    the velocity being the vector field the integrator advances.
    """
    dt = np.longdouble if extended else float
    Xr = np.asarray(X, dtype=dt)
    q = Xr.shape[1] - 1
    grad = _grad_rows(config, Xr)
    W = _W_rows(config, Xr)
    euler = np.sum(Xr * grad, axis=1) - (-q + config.gamma * W)
    norm = np.sum(Xr * (-grad), axis=1) - (q - config.gamma * W)
    return float(np.max(np.abs(euler))), float(np.max(np.abs(norm)))


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Trajectory:
    """Samples at the accepted integrator steps."""

    t: np.ndarray
    X: np.ndarray
    G: np.ndarray
    norm2: np.ndarray


@dataclass(frozen=True)
class FlowOutcome:
    """Classification of one orbit.

    ``classification`` is ``"Collapse"``, ``"Dispersion"`` or
    ``"Undecided"``; ``gap_index`` names the vanishing gap of a collapse
    (0-based); ``reason`` explains an undecided outcome.
    """

    classification: str
    time: float
    gap_index: int | None = None
    reason: str = ""
    trajectory: Trajectory | None = None
    n_steps: int = 0


def _field(config: DiscreteConfig, sign: float = 1.0):
    """Augmented field for ``(X, t)`` in the rescaled time ``s``.

    ``dX/ds = ψ f(X)`` and ``dt/ds = ψ`` with ``ψ = m/(m + |f|∞)`` and ``m``
    the smallest gap.  Orbits are those of ``X' = f(X)``; near collapse the
    gap decays geometrically in ``s`` instead of vanishing at a finite time
    that double precision cannot resolve, and elsewhere ``ψ ≈ 1``.
    """

    def f(Y):
        X = Y[:, :-1]
        F = -sign * _grad_rows(config, X)
        m = np.min(np.diff(X, axis=1), axis=1)
        psi = m / (m + np.max(np.abs(F), axis=1))
        return np.column_stack([psi[:, None] * F, sign * psi])

    return f


def _events(gap_tol: float, r_max: float, t_max: float, sign: float = 1.0):
    collapse = lambda Y: np.min(np.diff(Y[:, :-1], axis=1), axis=1) - gap_tol
    disperse = lambda Y: r_max - np.sqrt(np.sum(Y[:, :-1] ** 2, axis=1))
    timeout = lambda Y: t_max - sign * Y[:, -1]
    return collapse, disperse, timeout


def _valid(Y):
    return np.all(np.diff(Y[:, :-1], axis=1) > 0, axis=1)


def _run(config, X0, t_max, gap_tol, r_max, rtol, atol, record, sign=1.0,
         max_steps=100_000, extra_events=()):
    Y0 = np.column_stack([X0, np.zeros(X0.shape[0])])
    return integrate_batch(_field(config, sign), Y0, np.inf, rtol=rtol, atol=atol,
                           events=_events(gap_tol, r_max, t_max, sign) + tuple(extra_events),
                           valid=_valid, record=record, max_steps=max_steps)


def _outcome(res, i) -> tuple[str, int | None, str]:
    st, ev = res.status[i], res.event[i]
    if st == EVENT and ev == 0:
        return COLLAPSE, int(np.argmin(np.diff(res.y[i, :-1]))), ""
    if st == EVENT and ev == 1:
        return DISPERSION, None, ""
    if st == EVENT and ev == 2:
        return UNDECIDED, None, "t_max reached"
    if st == UNDERFLOW:
        return UNDECIDED, None, "step-size underflow, collapse suspected"
    if st == STEP_LIMIT:
        return UNDECIDED, None, "step limit reached"
    return UNDECIDED, None, "integration stopped"


def integrate(config: DiscreteConfig, state0, t_max: float = 1e3, *,
              gap_tol: float = 1e-8, R_max: float = 1e3, rtol: float = 1e-8,
              atol: float = 1e-10, record: bool = True) -> FlowOutcome:
    """Integrate ``X' = -∇G`` from ``state0`` until an event or ``t_max``.

    Collapse fires when the smallest gap drops below ``gap_tol``, dispersion
    when ``|X|`` exceeds ``R_max``.  A step-size underflow is never
    silently classified; it is reported as undecided with a reason.
    """
    X0 = _as_X(state0)[None, :]
    res = _run(config, X0, t_max, gap_tol, R_max, rtol, atol, record)
    cls, gap, reason = _outcome(res, 0)
    traj = None
    if record:
        Ys = np.array([r[1] for r in res.records[0]])
        if res.status[0] == EVENT:
            Ys[-1] = res.y[0]
        ts, Xs = Ys[:, -1], Ys[:, :-1]
        ok = np.all(np.diff(Xs, axis=1) > 0, axis=1)
        ts, Xs = ts[ok], Xs[ok]
        G = np.array([energy(config, x) for x in Xs])
        traj = Trajectory(t=ts, X=Xs, G=G, norm2=np.sum(Xs * Xs, axis=1))
    return FlowOutcome(cls, float(res.y[0, -1]), gap, reason, traj, int(res.n_steps[0]))


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("KESTREL_THREADS", "1")))
    except ValueError:
        return 1


def classify(config: DiscreteConfig, X0: np.ndarray, t_max: float = 1e7, *,
             gap_tol: float = 1e-8, R_max: float = 1e3, rtol: float = 1e-8,
             atol: float = 1e-10) -> np.ndarray:
    """Classify many initial states at once (rows of ``X0``).

    Returns an array of outcome names.  Work is split into contiguous
    chunks, one per thread when ``KESTREL_THREADS`` is set; results do not
    depend on the split.
    """
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    if not np.all(_valid(X0)):
        raise ValueError("every initial state needs positive gaps")
    chunks = np.array_split(np.arange(X0.shape[0]), _threads())

    def work(idx):
        res = _run(config, X0[idx], t_max, gap_tol, R_max, rtol, atol, False)
        return [_outcome(res, i)[0] for i in range(idx.size)]

    chunks = [c for c in chunks if c.size]
    if len(chunks) > 1:
        with ThreadPoolExecutor(len(chunks)) as ex:
            parts = list(ex.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    return np.array([c for part in parts for c in part], dtype=object)


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------

def _threshold_1(config: DiscreteConfig) -> float:
    N, gam, chi = config.n_points, config.gamma, config.chi
    if N == 3:
        return (1.5 * chi) ** (2.0 / gam)
    P = config.n_pairs
    return (chi * P ** (1 + gam / 2) * N ** (-gam / 2) / (N - 1)) ** (2.0 / gam)


def criterion_blowup_1(config: DiscreteConfig, state0) -> CriterionReport:
    """``|X0|² < (3χ/2)^(2/γ)`` for ``N = 3``; general ``N`` uses the same
    Jensen argument with ``P = N(N-1)/2`` pairs."""
    X = _as_X(state0)
    if X.size != config.n_points:
        raise ValueError("state size does not match n_points")
    inputs = dict(gamma=config.gamma, M=config.mass, N=config.n_points, norm2=float(X @ X))
    return _make("discrete_blowup_1", X @ X, _threshold_1(config), inputs)


def criterion_blowup_2(config: DiscreteConfig, state0) -> CriterionReport:
    """``|X0|² <= 2 exp(-G[X0] - 2/γ)`` for ``N = 3`` (non-strict); general
    ``N`` uses ``((N-1)/N) exp(-2G/(N-1) - 2/γ)``."""
    X = _as_X(state0)
    N = config.n_points
    if X.size != N:
        raise ValueError("state size does not match n_points")
    G = energy(config, X)
    if N == 3:
        rhs = 2.0 * math.exp(-G - 2.0 / config.gamma)
    else:
        rhs = (N - 1) / N * math.exp(-2.0 * G / (N - 1) - 2.0 / config.gamma)
    inputs = dict(gamma=config.gamma, M=config.mass, N=N, norm2=float(X @ X), G=G)
    return _make("discrete_blowup_2", X @ X, rhs, inputs, strict=False)


def criterion_global(config: DiscreteConfig, u0: float, v0: float) -> CriterionReport:
    """``χ(u0^(-γ) + v0^(-γ)) < 1`` (three points only)."""
    if config.n_points != 3:
        raise ValueError("the global existence criterion is stated for N = 3")
    if not (u0 > 0 and v0 > 0):
        raise ValueError("gaps must be positive")
    lhs = config.chi * (u0 ** -config.gamma + v0 ** -config.gamma)
    return _make("discrete_global", lhs, 1.0,
                 dict(gamma=config.gamma, M=config.mass, u=u0, v=v0))


# ---------------------------------------------------------------------------
# landscape geometry
# ---------------------------------------------------------------------------

def gauge(config: DiscreteConfig, state) -> float:
    """Maximum of ``G`` along the ray through ``state``:
    ``H = U - (q/γ)(log(γW/q) + 1)`` with ``q = N - 1``."""
    q = config.n_points - 1
    U = entropy_part(config, state)
    W = interaction_part(config, state)
    return U - q / config.gamma * (math.log(config.gamma * W / q) + 1.0)


def _newton_log_gaps(config: DiscreteConfig, y: np.ndarray, tol: float,
                     max_iter: int) -> np.ndarray:
    """Damped Newton on ``g_k ∂G/∂g_k = 0`` in log-gap coordinates ``y``.

    Working with ``y = log g`` keeps every iterate ordered; the residual is
    the gap-weighted gradient, which vanishes exactly where ``∇G`` does.
    """
    N = y.size + 1
    A = np.tril(np.ones((N, N - 1)), -1)  # X = A g

    def resid(y):
        g = np.exp(y)
        return g * (A.T @ gradient(config, A @ g)), g

    F, g = resid(y)
    for _ in range(max_iter):
        if np.linalg.norm(gradient(config, A @ g)) < tol:
            return A @ g
        S = A.T @ gradient(config, A @ g)
        J = g[:, None] * (A.T @ hessian(config, A @ g) @ A) * g[None, :] + np.diag(g * S)
        step = np.linalg.lstsq(J, -F, rcond=None)[0]
        lam = 1.0
        while lam > 1e-10:
            yn = y + lam * step
            with np.errstate(over="ignore", invalid="ignore"):
                Xn = A @ np.exp(yn)
            if np.all(np.isfinite(Xn)) and np.all(np.diff(Xn) > 0):
                Fn, gn = resid(yn)
                if np.linalg.norm(Fn) < np.linalg.norm(F):
                    break
            lam *= 0.5
        else:
            raise NewtonError("line search failed")
        y, F, g = yn, Fn, gn
    raise NewtonError(f"no convergence in {max_iter} iterations")


def critical_point(config: DiscreteConfig, *, tol: float = 1e-11,
                   max_iter: int = 100) -> DiscreteState:
    """Solve ``∇G = 0`` by damped Newton from equal gaps on ``W = (N-1)/γ``.

    For ``N = 3`` the equal-gap seed lies in the basin of the symmetric
    critical point.  For larger ``N`` the critical points are clustered and
    Newton from equal gaps can stall; the seed is then replaced by the
    maximizer of the gauge over shapes, rescaled onto ``W = (N-1)/γ``,
    which Newton polishes.
    """
    N, gam = config.n_points, config.gamma

    def onto_maximal(X):
        return X * (gam * interaction_part(config, X) / (N - 1)) ** (1.0 / gam)

    def log_gaps(X):
        return np.log(np.diff(X))

    X0 = onto_maximal(_from_gaps(np.ones((1, N - 1)))[0])
    try:
        X = _newton_log_gaps(config, log_gaps(X0), tol, max_iter)
    except NewtonError:
        def shape(z):
            X = _from_gaps(np.exp(np.concatenate([[0.0], z]))[None, :])[0]
            return X - X.mean()

        def objective(z):
            X = shape(np.clip(z, -30.0, 30.0))
            return -gauge(config, X) if np.all(np.diff(X) > 0) else np.inf

        res = minimize(objective, np.zeros(N - 2), method="BFGS",
                       options={"gtol": 1e-12})
        X = _newton_log_gaps(config, log_gaps(onto_maximal(shape(res.x))), tol, max_iter)
    return DiscreteState(X - X.mean())


@dataclass(frozen=True)
class Manifold:
    """Eigen-manifolds of the critical point in gap coordinates.

    Attributes
    ----------
    critical_gaps : ndarray
    eigenvalues : ndarray
        Eigenvalues of the linearized gap dynamics.
    eigenvectors : ndarray
        Columns, unit length.
    branches : dict
        ``(k, sign)`` mapped to a polyline of gaps, traced from
        ``gaps* + sign δ0 e_k``; forward in time for a positive eigenvalue,
        backward for a negative one.
    separatrix : tuple of ndarray
        The two orbits bounding the collapse and dispersion basins, each
        running from the critical point outward (``N = 3`` only; empty
        otherwise).
    kind : str
        ``"source"``, ``"saddle"`` or ``"sink"``.
    """

    critical_gaps: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    branches: dict
    separatrix: tuple
    kind: str


def _gap_jacobian(config: DiscreteConfig, X: np.ndarray) -> np.ndarray:
    N = X.size
    Dm = np.diff(np.eye(N), axis=0)  # X -> gaps
    P = _from_gaps(np.eye(N - 1))  # gaps -> X (rows)
    return Dm @ (-hessian(config, X)) @ P.T


def _boundary_point(config, far, gap_tol, t_max, rounds=14, width=16):
    """Smallest ``u`` at which ``(u, far)`` disperses, by multisection."""
    lo, hi = 1e-3 * far, far
    for _ in range(rounds):
        us = np.linspace(lo, hi, width + 2)
        X0 = _from_gaps(np.column_stack([us, np.full_like(us, far)]))
        res = _run(config, X0, t_max, gap_tol, 4.0 * far, 1e-10, 1e-12, False)
        out = np.array([_outcome(res, i)[0] for i in range(us.size)])
        if out[0] != COLLAPSE or out[-1] != DISPERSION:
            raise ValueError("could not bracket the basin boundary")
        k = int(np.argmax(out != COLLAPSE))
        if out[k] != DISPERSION:
            raise ValueError("undecided orbit while bracketing the basin boundary")
        lo, hi = us[k - 1], us[k]
        if hi - lo < 1e-14 * far:
            break
    return hi


def separatrix(config: DiscreteConfig, arc_length: float = 50.0, *,
               offset: float = 1e-6, gap_tol: float = 1e-8,
               t_max: float = 1e9) -> Manifold:
    """Trace the eigen-manifolds of the critical point and the basin boundary.

    Each eigen-branch starts ``offset·|X*|`` away along an eigenvector and is
    integrated (forward for a positive eigenvalue, backward otherwise) until
    a gap collapses, ``|X|`` exceeds ``arc_length`` or ``t_max`` elapses.

    For ``N = 3`` the critical point is a source and no eigen-branch bounds
    the basins: the boundary is the orbit that leaves the source and runs
    off to infinity along ``u → χ^(1/γ)``.  It is located on the line
    ``v = arc_length`` by multisection on the outcome and then integrated
    backward in time, a direction in which neighbouring orbits contract
    onto it, until it reaches the source.  The mirror branch follows from
    the ``u ↔ v`` symmetry.
    """
    Xs = critical_point(config)
    gaps = Xs.gaps
    J = _gap_jacobian(config, Xs.X)
    vals, vecs = np.linalg.eig(J)
    if np.iscomplexobj(vals) and np.any(np.abs(vals.imag) > 1e-12 * np.abs(vals.real).max()):
        raise ValueError("critical point has a complex spectrum")
    vals, vecs = vals.real, vecs.real
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    kind = "source" if np.all(vals > 0) else "sink" if np.all(vals < 0) else "saddle"
    delta = offset * math.sqrt(Xs.norm2)

    branches = {}
    for k in range(vals.size):
        sg = 1.0 if vals[k] > 0 else -1.0
        for s in (1.0, -1.0):
            X0 = _from_gaps((gaps + s * delta * vecs[:, k])[None, :])
            res = _run(config, X0, t_max, gap_tol, arc_length, 1e-10, 1e-12, True, sign=sg)
            pts = np.array([np.diff(r[1][:-1]) for r in res.records[0]])
            pts = pts[np.all(pts > 0, axis=1)]
            branches[(k, s)] = np.vstack([gaps, pts])

    sep: tuple = ()
    if config.n_points == 3:
        far = arc_length
        u_c = _boundary_point(config, far, gap_tol, t_max)
        near = lambda Y: np.linalg.norm(np.diff(Y[:, :-1], axis=1) - gaps, axis=1) - delta
        X0 = _from_gaps(np.array([[u_c, far]]))
        res = _run(config, X0, t_max, gap_tol, 4.0 * far, 1e-10, 1e-12, True,
                   sign=-1.0, extra_events=(near,))
        if not (res.status[0] == EVENT and res.event[0] == 3):
            raise ValueError("backward trace of the basin boundary missed the source")
        pts = np.array([np.diff(r[1][:-1]) for r in res.records[0]])
        upper = np.vstack([gaps, pts[::-1]])
        sep = (upper, upper[:, ::-1].copy())
    return Manifold(gaps, vals, vecs, branches, sep, kind)


def distance_to_polyline(points: np.ndarray, line: np.ndarray) -> np.ndarray:
    """Euclidean distance of each point to a polyline (both in ``R^2``)."""
    p = np.asarray(points, dtype=float)[:, None, :]
    a, b = line[:-1][None], line[1:][None]
    ab = b - a
    den = np.maximum(np.sum(ab * ab, axis=2), 1e-300)
    t = np.clip(np.sum((p - a) * ab, axis=2) / den, 0.0, 1.0)
    proj = a + t[..., None] * ab
    return np.min(np.linalg.norm(p - proj, axis=2), axis=1)


def separatrix_side(manifold: Manifold, u, v) -> np.ndarray:
    """True where ``(u, v)`` lies on the dispersion side of the separatrix.

    The two branches together with a far corner bound the dispersion basin;
    membership is decided by an even-odd ray-crossing test.
    """
    if manifold.critical_gaps.size != 2:
        raise ValueError("side test is defined in the (u, v) plane")
    b1, b2 = manifold.separatrix
    far = 10.0 * max(b1.max(), b2.max())
    poly = np.vstack([b1[::-1], b2[1:], [[far, far]]])
    pu, pv = np.asarray(u, dtype=float).ravel(), np.asarray(v, dtype=float).ravel()
    x0, y0 = poly[:, 0], poly[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    inside = np.zeros(pu.size, dtype=bool)
    for a, b, c, d in zip(x0, y0, x1, y1):
        cond = (b > pv) != (d > pv)
        xint = a + (pv - b) * (c - a) / np.where(d == b, 1.0, d - b)
        inside ^= cond & (pu < xint)
    return inside.reshape(np.shape(u))


# ---------------------------------------------------------------------------
# global existence inequality
# ---------------------------------------------------------------------------

def verify_discrete_GNS(gamma: float, n_grid: int = 10_000) -> float:
    """Largest value of lhs - rhs of the reduced inequality over ``U ∈ (0, 1]``.

    Both sides are multiplied by ``U^(2γ+2) > 0`` before subtracting, which
    keeps the comparison free of cancellation as ``U → 0``:

        lhs = 2 + 2U^(2γ+2) - 2U^(γ+1) + (1+U)^(-γ-1) (U^(γ+1) + U^(2γ+2))
        rhs = (1 + U^γ)(2 + 2U^(γ+2) - U - U^(γ+1))
    """
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    U = np.linspace(1.0 / n_grid, 1.0, n_grid)
    g = gamma
    lhs = 2 + 2 * U ** (2 * g + 2) - 2 * U ** (g + 1) \
        + (1 + U) ** (-g - 1) * (U ** (g + 1) + U ** (2 * g + 2))
    rhs = (1 + U ** g) * (2 + 2 * U ** (g + 2) - U - U ** (g + 1))
    return float(np.max(lhs - rhs))


# ---------------------------------------------------------------------------
# phase portrait
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    """Cell centres ``u_min < u <= u_max`` (and likewise for ``v``)."""

    u_min: float = 0.02
    u_max: float = 3.0
    v_min: float = 0.02
    v_max: float = 3.0
    n_u: int = 100
    n_v: int = 100

    def __post_init__(self):
        if not (0 <= self.u_min < self.u_max and 0 <= self.v_min < self.v_max):
            raise ValueError("grid bounds must satisfy 0 <= min < max")
        if self.n_u < 1 or self.n_v < 1:
            raise ValueError("grid needs at least one cell per axis")

    def axes(self):
        u = np.linspace(self.u_min, self.u_max, self.n_u + 1)[1:]
        v = np.linspace(self.v_min, self.v_max, self.n_v + 1)[1:]
        return u, v


@dataclass
class Portrait:
    """Per-cell classification with criterion masks and overlay curves."""

    config: DiscreteConfig
    u: np.ndarray
    v: np.ndarray
    classes: np.ndarray
    crit1: np.ndarray
    crit2: np.ndarray
    global_: np.ndarray
    overlays: dict = field(default_factory=dict)
    manifold: Manifold | None = None

    def rows(self):
        """CSV rows ``u, v, class, crit1, crit2, global`` in row-major order."""
        for j in range(self.v.size):
            for i in range(self.u.size):
                yield (self.u[i], self.v[j], self.classes[j, i], bool(self.crit1[j, i]),
                       bool(self.crit2[j, i]), bool(self.global_[j, i]))


def _ray_parts(config, a, b):
    """Entropy, interaction and |X|² of the gap direction ``(a, b)``."""
    gam, chi = config.gamma, config.chi
    U = -np.log(a) - np.log(b)
    W = chi / gam * (a ** -gam + b ** -gam + (a + b) ** -gam)
    q = 2.0 / 3.0 * (a * a + b * b + a * b)
    return U, W, q


def _criteria_masks(config, uu, vv):
    gam, chi = config.gamma, config.chi
    U, W, n2 = _ray_parts(config, uu, vv)
    c1 = n2 < _threshold_1(config)
    G = U - W
    c2 = n2 <= 2.0 * np.exp(-G - 2.0 / gam)
    cg = chi * (uu ** -gam + vv ** -gam) < 1.0
    return c1, c2, cg


def overlay_curves(config: DiscreteConfig, s_max: float = 3.0, n: int = 801) -> dict:
    """Boundaries of the two blow-up criteria, the maximal line ``W = 2/γ``
    and the global-existence boundary, as polylines in the ``(u, v)`` plane.

    Each curve is found in closed form along rays ``(u, v) = s(a, 1-a)``,
    using the homogeneities of ``U`` and ``W``.
    """
    if config.n_points != 3:
        raise ValueError("overlays are drawn for N = 3")
    gam, chi = config.gamma, config.chi
    a = np.linspace(0.0, 1.0, n + 2)[1:-1]
    b = 1.0 - a
    U, W, q = _ray_parts(config, a, b)
    out = {}
    s1 = np.sqrt(_threshold_1(config) / q)
    out["crit1"] = np.column_stack([s1 * a, s1 * b])
    den = np.log(q / 2) + U + 2.0 / gam
    with np.errstate(divide="ignore", invalid="ignore"):
        s2 = np.where(den > 0, (W / den) ** (1.0 / gam), np.inf)
    out["crit2"] = np.column_stack([s2 * a, s2 * b])
    s3 = (gam * W / 2.0) ** (1.0 / gam)
    out["maximal_line"] = np.column_stack([s3 * a, s3 * b])
    s4 = (chi * (a ** -gam + b ** -gam)) ** (1.0 / gam)
    out["global"] = np.column_stack([s4 * a, s4 * b])
    for key, pts in out.items():
        keep = np.all(np.isfinite(pts), axis=1) & (np.max(pts, axis=1) <= s_max * 1.5)
        out[key] = pts[keep]
    return out


def phase_portrait(config: DiscreteConfig, grid: GridSpec | None = None,
                   t_max: float = 1e7, *, gap_tol: float = 1e-8, R_max: float = 1e3,
                   with_manifold: bool = True) -> Portrait:
    """Classify every grid cell by integration and attach the overlays.

    ``t_max`` defaults to ``1e7`` because dispersing orbits grow like
    ``sqrt(t)`` and need ``t ~ R_max²/4`` to reach ``R_max``; the adaptive
    step grows with ``t``, so this costs only a few hundred steps.
    """
    if config.n_points != 3:
        raise ValueError("the phase portrait is drawn for N = 3")
    grid = grid or GridSpec()
    u, v = grid.axes()
    uu, vv = np.meshgrid(u, v)
    X0 = _from_gaps(np.column_stack([uu.ravel(), vv.ravel()]))
    classes = classify(config, X0, t_max, gap_tol=gap_tol, R_max=R_max).reshape(uu.shape)
    c1, c2, cg = _criteria_masks(config, uu, vv)
    s_max = max(grid.u_max, grid.v_max)
    overlays = overlay_curves(config, s_max=s_max)
    manifold = None
    if with_manifold:
        manifold = separatrix(config, arc_length=10.0 * s_max, gap_tol=gap_tol)
        sep = np.vstack([manifold.separatrix[0][::-1], manifold.separatrix[1][1:]])
        overlays["separatrix"] = sep
    return Portrait(config, u, v, classes, c1, c2, cg, overlays, manifold)
