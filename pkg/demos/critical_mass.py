"""Critical mass M = 2 of the one-dimensional logarithmic model.

The extrapolated dI/dt at t = 0 matches -2M(M/2 - 1), and simulations
below, at and above M = 2 show dispersion, a flat second moment and
collapse.
"""

from kestrel.continuum_flow import (
    ContinuumConfig,
    initial_state,
    richardson_moment_rate,
    simulate,
)


def main():
    for M in (1.0, 2.0, 4.0):
        rate = richardson_moment_rate(M)["extrapolated"]
        cfg = ContinuumConfig(M, 128)
        rec = simulate(cfg, initial_state(cfg), t_max=1.0)
        print(f"M={M:g}: dI/dt = {rate:+.6f} (exact {-2 * M * (M / 2 - 1) + 0.0:+g}); "
              f"I: {rec.I[0]:.4f} -> {rec.I[-1]:.4f} at t={rec.t[-1]:.4f} [{rec.status}]")


if __name__ == "__main__":
    main()
