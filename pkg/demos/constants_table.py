"""Print the dimensional constants and the smallness thresholds for d = 3..6.

The Gagliardo-Nirenberg threshold needs the radial ground state, which is
solved by shooting; it is always weaker than the Sobolev one.
"""

from kestrel.constants import compute_constants, solve_ground_state, with_ground_state


def main():
    print(f"{'d':>2} {'C_S^2':>12} {'K1':>12} {'K2':>12} {'Sobolev':>12} {'GN':>12}")
    for d in range(3, 7):
        c = with_ground_state(compute_constants(d), solve_ground_state(d))
        print(f"{d:>2} {c.sobolev_sq:12.7g} {c.k1:12.6g} {c.k2:12.6g} "
              f"{c.smallness_sobolev:12.7g} {c.smallness_gn:12.7g}")


if __name__ == "__main__":
    main()
