"""Sweep the Gaussian family in d = 3 and show where each criterion holds.

Blow-up criteria only switch on once the L^{3/2} norm is far above the
Sobolev smallness threshold, so the two never hold together.
"""

import numpy as np

from kestrel.criteria import evaluate_report
from kestrel.densities import gaussian, report


def main(mass=1.0):
    print(f"{'delta':>10} {'I0':>11} {'E0':>10} {'Lhalf':>10}  1BU   2BU   small")
    for delta in np.logspace(0, 8, 17):
        r = report(gaussian(3, mass, float(delta)))
        v = {c.name: c.verdict for c in evaluate_report(r)}
        print(f"{delta:10.3g} {r.I:11.4g} {r.E:10.4g} {r.Lhalf:10.4g}  "
              f"{v['first_blowup']!s:5} {v['second_blowup']!s:5} {v['smallness_sobolev']!s:5}")


if __name__ == "__main__":
    main()
