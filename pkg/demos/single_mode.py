"""Single fermionic mode with loss g1 and gain g2.

The flow diagonalises the 2x2 superfermion matrix; the co-flowed charge
gives the stationary occupation and the relaxation n(t).
"""
import numpy as np

from dissflow.flowengine import FlowConfig, run_flow
from dissflow.superfermion import (
    single_mode_density_evolution,
    single_mode_density_from_flow,
    single_mode_matrix,
    single_mode_steady_density,
)


def main(eps=0.4, g1=1.0, g2=3.0, n0=0.1):
    cfg = FlowConfig(generator="wegner", step=1e-2, max_flow=100, adaptive=True, error_threshold=1e-14,
                     truncation_fraction=0.0, stop_when=1e-28)
    res = run_flow(single_mode_matrix(eps, g1, g2), cfg)
    print("flowed eigenvalues:", np.round(res.eigenvalues, 12))
    print("expected          :", eps - 0.5j * (g1 + g2), eps + 0.5j * (g1 + g2))
    print(f"steady density {single_mode_steady_density(g1, g2, eps):.12f} vs g2/(g1+g2) = {g2 / (g1 + g2):.12f}")
    t = np.linspace(0, 3, 7)
    flow = single_mode_density_from_flow(g1, g2, n0, t, eps)
    closed = single_mode_density_evolution(g1, g2, n0, t)
    for ti, a, b in zip(t, flow, closed):
        print(f"t={ti:4.1f}  n_flow={a:.10f}  n_closed={b:.10f}")


if __name__ == "__main__":
    main()
