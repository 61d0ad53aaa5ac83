#!/usr/bin/env python3
"""Contraction norm of the generic-sampling residual against the refinement N.

    python3 scripts/sampling_decay.py [--j 2] [--n 1]
"""
import argparse

from mwlab import phitransform as pt


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--j", type=int, default=2)
    ap.add_argument("--n", type=int, default=1)
    ap.add_argument("--Ns", type=int, nargs="*", default=[2, 3, 4, 5, 6])
    args = ap.parse_args()
    Ns = args.Ns if args.n == 1 else [N for N in args.Ns if N <= 4]
    print("points," + ",".join(f"N={N}" for N in Ns) + ",decay_per_N")
    for mode in ("corner", "center", "random"):
        norms, factor = pt.contraction_decay(args.j, args.n, Ns, mode)
        print(mode + "," + ",".join(f"{v:.4g}" for v in norms) + f",{factor:.3f}")


if __name__ == "__main__":
    main()
