#!/usr/bin/env python3
"""Window-growth study of the almost-diagonal boundedness probe.

With a margin ``m`` above the D threshold, the image of a unit field has
l^p mass ``sum_{|k| <= K} (1 + |k|)^{-(n + d2 + m p)}``, whose tail decays
only like ``K^{-m p}``.  The ratio growth per window doubling therefore
drops slowly; this script tabulates the measured growth against that
prediction for many doublings.

    python3 scripts/probe_truncation.py --p 1 --d2 0 --doublings 10
"""
import argparse
import time

import numpy as np

from mwlab import adop
from mwlab.dyadic import CubeWindow
from mwlab.seqspaces import SpaceParams
from mwlab.weights import MatrixWeightSpec


def predicted_growth(alpha, K0, doublings):
    """Relative growth of ``(sum_{|k|<=K} (1+|k|)^{-alpha})^{1/p}`` per doubling of ``K``, before the power."""
    K = K0 * 2 ** np.arange(doublings + 1)
    S = adop._lattice_shell_sums(alpha, 1, [int(k) for k in K])
    return S[1:] / S[:-1] - 1.0


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--p", type=float, default=1.0)
    ap.add_argument("--q", type=float, default=2.0)
    ap.add_argument("--d2", type=float, default=0.0)
    ap.add_argument("--margin", type=float, default=0.1)
    ap.add_argument("--doublings", type=int, default=8)
    ap.add_argument("--batch", type=int, default=10)
    args = ap.parse_args()

    sp = SpaceParams(0.0, 0.0, args.p, args.q, "B")
    k = adop.kernel_above_thresholds(sp, 0.0, args.d2, 1, args.margin)
    W = MatrixWeightSpec.power(args.d2) if args.d2 else None
    win = CubeWindow(1, -1, 1, 1)
    t0 = time.perf_counter()
    rep = adop.boundedness_probe(k, sp, W, win, batch=args.batch, doublings=args.doublings)
    pred = predicted_growth(k.D * args.p - args.d2, 4, args.doublings)
    print(f"kernel {k}, {time.perf_counter() - t0:.1f} s")
    print("window_size,ratio,growth,unit_field_prediction")
    for i, (size, r) in enumerate(zip(rep.window_sizes, rep.ratios)):
        g = rep.growth[i - 1] if i else float("nan")
        pg = (1 + pred[i - 1]) ** (1 / args.p) - 1 if i else float("nan")
        print(f"{size},{r:.6g},{g:.4f},{pg:.4f}")
    print("verdict:", rep.verdict)


if __name__ == "__main__":
    main()
