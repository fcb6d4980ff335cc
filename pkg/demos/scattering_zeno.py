"""Localized loss on a band of 2 j_cutoff + 1 levels.

Above gamma = 4v one eigenvalue detaches from the band with a decay rate
near the cutoff (quantum Zeno regime); below it the loss is shared.
"""
import numpy as np

from dissflow.matcore import reference_spectrum
from dissflow.models import (
    DomainError,
    ScatteringSpec,
    build_scattering_matrix,
    solve_secular,
    strongly_dissipative_branch,
    strongly_dissipative_eigenvalue,
    weak_coupling_eigenvalue,
    zero_real_part_branch,
)


def main():
    print(f"{'gamma/v':>8} {'dense':>12} {'closed form':>12} {'secular':>12}")
    for gamma in (0.5, 1.0, 2.0, 3.0, 5.0, 6.0, 8.0):
        s = ScatteringSpec(gamma=gamma, box_size=201.0, j_cutoff=100)
        w = reference_spectrum(build_scattering_matrix(s))
        if gamma > 4:
            dense, approx = strongly_dissipative_branch(w).imag, strongly_dissipative_eigenvalue(s).imag
        else:
            dense = zero_real_part_branch(w).imag
            try:
                approx = weak_coupling_eigenvalue(s).imag
            except DomainError:
                approx = np.nan
        root = solve_secular(s).eigenvalue(s).imag
        print(f"{gamma:>8.1f} {dense:>12.6g} {approx:>12.6g} {root:>12.6g}")


if __name__ == "__main__":
    main()
