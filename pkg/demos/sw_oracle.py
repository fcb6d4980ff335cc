"""Second-order Schrieffer-Wolff blocks against exact spectra and the flow.

Both errors should shrink as xi^3.
"""
from dissflow.swtransform import random_sw_instance, sw_scaling


def main(seed=0):
    l0, l1 = random_sw_instance(6, seed)
    rep = sw_scaling(l0, l1, [1e-3, 3e-3, 1e-2])
    for x, a, b in zip(rep.xis, rep.max_sw_vs_exact, rep.max_flow_vs_sw):
        print(f"xi={x:.0e}  |SW - exact|={a:.3e}  |flow - SW|={b:.3e}")
    print(f"fitted exponents: SW {rep.sw_exponent:.3f}, flow {rep.flow_exponent:.3f}")


if __name__ == "__main__":
    main()
