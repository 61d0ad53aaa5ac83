#!/usr/bin/env python3
"""Upper dimension estimate against ``n (r_w - 1)`` for anisotropic power weights.

    python3 scripts/dimension_vs_critical.py
"""
import itertools

from mwlab import diagnostics as dg
from mwlab.weights import MatrixWeightSpec


def main(exponents=(0.0, 0.5, 1.0, 1.5)):
    print("a1,a2,d_upper_est,r_w,n(r_w-1),gap")
    for a in itertools.combinations_with_replacement(exponents, 2):
        W = MatrixWeightSpec.anisotropic(a)
        d = dg.dimension_estimate(W, 1.0).d_upper_est
        r_w = dg.critical_index(W).value
        bound = W.n * (r_w - 1)
        print(f"{a[0]},{a[1]},{d:.4f},{r_w},{bound},{bound - d:.4f}")


if __name__ == "__main__":
    main()
