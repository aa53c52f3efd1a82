"""Batched Dormand-Prince 5(4) integrator with event location.

Every row of the state array is an independent trajectory with its own
step size, error control and termination.  This is what makes a 10⁴-cell
phase portrait cheap: one numpy pass advances every live trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

# Butcher tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
_D = np.array([-12715105075 / 11282082432, 0.0, 87487479700 / 32700410799,
               -10690763975 / 1880347072, 701980252875 / 199316789632,
               -1453857185 / 822651844, 69997945 / 29380423])

RUNNING, EVENT, TIME_LIMIT, UNDERFLOW, STEP_LIMIT = 0, 1, 2, 3, 4


@dataclass
class BatchResult:
    """Final state of every trajectory.

    ``status`` holds one of the module codes; ``event`` the index of the
    event that fired (or -1); ``t`` and ``y`` the final time and state, at
    the located event when one fired.
    """

    t: np.ndarray
    y: np.ndarray
    status: np.ndarray
    event: np.ndarray
    n_steps: np.ndarray
    n_rejected: np.ndarray
    records: list | None = field(default=None)


def _dense(y0, y1, k1, k7, ks, h, theta):
    """Fourth-order continuous extension at fractions ``theta`` of the step."""
    dy = y1 - y0
    bspl = h[:, None] * k1 - dy
    r4 = dy - h[:, None] * k7 - bspl
    r5 = h[:, None] * np.einsum("j,jbn->bn", _D, ks)
    th = theta[:, None]
    return y0 + th * (dy + (1 - th) * (bspl + th * (r4 + (1 - th) * r5)))


def integrate_batch(
    f: Callable[[np.ndarray], np.ndarray],
    y0: np.ndarray,
    t_max: float,
    *,
    rtol: float = 1e-8,
    atol: float = 1e-10,
    events: tuple = (),
    valid: Callable[[np.ndarray], np.ndarray] | None = None,
    h0: float | None = None,
    max_steps: int = 100_000,
    record: bool = False,
    h_min_rel: float = 1e-14,
) -> BatchResult:
    """Integrate the autonomous system ``y' = f(y)`` row by row.

    Parameters
    ----------
    f : callable
        Vectorized field mapping ``(B, n)`` to ``(B, n)``.
    y0 : ndarray, shape (B, n)
    t_max : float
        Final time (use a negated field for backward integration).
    events : tuple of callables
        Each maps ``(B, n)`` to ``(B,)``; a trajectory stops when the value
        becomes nonpositive, the crossing being located by bisection on the
        dense output.
    valid : callable, optional
        Rows for which it returns False after any stage are rejected and the
        step is shrunk, so the state never leaves the admissible set.
    record : bool
        Keep ``(t, y)`` after every accepted step, one list per row.
    """
    y = np.array(y0, dtype=float)
    if y.ndim != 2:
        raise ValueError("y0 must have shape (B, n)")
    B, n = y.shape
    t = np.zeros(B)
    status = np.full(B, RUNNING)
    event = np.full(B, -1)
    n_steps = np.zeros(B, dtype=int)
    n_rej = np.zeros(B, dtype=int)
    records = [[(0.0, y[i].copy())] for i in range(B)] if record else None

    with np.errstate(all="ignore"):
        k1 = f(y)
        if h0 is None:
            scale = atol + rtol * np.abs(y)
            d0 = np.sqrt(np.mean((y / scale) ** 2, axis=1))
            d1 = np.sqrt(np.mean((k1 / scale) ** 2, axis=1))
            h = np.where((d0 < 1e-5) | (d1 < 1e-5), 1e-6, 0.01 * d0 / d1)
            h = np.minimum(h, t_max)
        else:
            h = np.full(B, float(h0))

        for ev_i, ev in enumerate(events):
            hit = (ev(y) <= 0) & (status == RUNNING)
            status[hit] = EVENT
            event[hit] = ev_i

        while True:
            act = np.flatnonzero(status == RUNNING)
            if act.size == 0:
                break
            ya, ta, ha, k1a = y[act], t[act], h[act], k1[act]
            ha = np.minimum(ha, t_max - ta)
            ks = np.empty((7, act.size, n))
            ks[0] = k1a
            ok = np.ones(act.size, dtype=bool)
            for s in range(1, 7):
                ys = ya + ha[:, None] * np.einsum("j,jbn->bn", np.asarray(_A[s]), ks[:s])
                if valid is not None:
                    ok &= valid(ys)
                ks[s] = f(ys)
            y_new = ys  # stage 7 is evaluated at the 5th-order solution
            err_vec = ha[:, None] * np.einsum("j,jbn->bn", _E, ks)
            sc = atol + rtol * np.maximum(np.abs(ya), np.abs(y_new))
            err = np.sqrt(np.mean((err_vec / sc) ** 2, axis=1))
            ok &= np.all(np.isfinite(ks), axis=(0, 2)) & np.isfinite(err)
            err = np.where(ok, err, np.inf)
            accept = err <= 1.0

            fac = np.where(accept, 0.9 * np.maximum(err, 1e-10) ** -0.2, 0.9 * err ** -0.25)
            fac = np.where(ok, np.clip(fac, 0.2, 10.0), 0.25)
            h_next = ha * fac

            rej = act[~accept]
            n_rej[rej] += 1
            h[rej] = h_next[~accept]
            tiny = h[rej] < h_min_rel * np.maximum(1.0, np.abs(t[rej]))
            status[rej[tiny]] = UNDERFLOW

            acc = act[accept]
            if acc.size:
                sel = np.flatnonzero(accept)
                y_old, t_old = y[acc], t[acc]
                y[acc] = y_new[sel]
                t[acc] = t_old + ha[sel]
                k1[acc] = ks[6][sel]
                h[acc] = h_next[sel]
                n_steps[acc] += 1

                fired = np.zeros(acc.size, dtype=bool)
                for ev_i, ev in enumerate(events):
                    g = ev(y[acc])
                    hit = (g <= 0) & ~fired
                    if hit.any():
                        idx = np.flatnonzero(hit)
                        yl, tl = _locate(ev, y_old[idx], y[acc[idx]], ks[:, sel[idx]],
                                         ha[sel[idx]], t_old[idx])
                        y[acc[idx]] = yl
                        t[acc[idx]] = tl
                        status[acc[idx]] = EVENT
                        event[acc[idx]] = ev_i
                        fired |= hit
                done = (~fired) & (t[acc] >= t_max * (1 - 1e-15))
                status[acc[done]] = TIME_LIMIT
                status[acc[(n_steps[acc] >= max_steps) & (status[acc] == RUNNING)]] = STEP_LIMIT
                if record:
                    for i in acc:
                        records[i].append((float(t[i]), y[i].copy()))

    return BatchResult(t=t, y=y, status=status, event=event, n_steps=n_steps,
                       n_rejected=n_rej, records=records)


def _locate(ev, y0, y1, ks, h, t0, iters: int = 60):
    """Bisect for the first zero of ``ev`` inside each accepted step."""
    lo = np.zeros(len(h))
    hi = np.ones(len(h))
    k1, k7 = ks[0], ks[6]
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        g = ev(_dense(y0, y1, k1, k7, ks, h, mid))
        pos = g > 0
        lo = np.where(pos, mid, lo)
        hi = np.where(pos, hi, mid)
    return _dense(y0, y1, k1, k7, ks, h, hi), t0 + hi * h
