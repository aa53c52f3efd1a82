"""Phase portrait of the three-particle model at gamma = 1/2, M = 1.6.

Writes ``portrait.svg`` (basins, criterion curves and separatrix) and
prints the cell counts.  Optional arguments: grid size and output path.
"""

import sys

import numpy as np

from kestrel.discrete_flow import DiscreteConfig, GridSpec, phase_portrait
from kestrel.output import emit, portrait_svg


def main(n=100, path="portrait.svg"):
    p = phase_portrait(DiscreteConfig(0.5, 1.6), GridSpec(n_u=n, n_v=n))
    for name in ("Collapse", "Dispersion", "Undecided"):
        print(f"{name:>10}: {int(np.sum(p.classes == name))}")
    print(f"critical gaps: {p.manifold.critical_gaps}, "
          f"eigenvalues: {p.manifold.eigenvalues}")
    emit(portrait_svg(p), path)
    print(f"wrote {path}")


if __name__ == "__main__":
    main(*[f(a) for f, a in zip((int, str), sys.argv[1:3])])
