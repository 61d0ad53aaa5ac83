"""Acceptance suite: one test (or a few parametrized parts) per criterion.

Each part records its outcome through ``conftest.record`` before asserting,
and the terminal summary prints one PASS/FAIL line per criterion.
"""
import csv
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from conftest import builtin_catalogue, record
from oracles import thresholds_reference
from mwlab import adop, cli, diagnostics as dg, phitransform as pt, seqspaces as ss
from mwlab.dyadic import CubeWindow, covering_shifted_cube
from mwlab.seqspaces import SpaceParams
from mwlab.weights import MatrixWeightSpec, Quadrature, ReducingFamily, verify_reducing

QUAD = Quadrature()
PS = (0.5, 1.0, 2.0, 3.0)


def window_for(W, cubes=200):
    """Smallest symmetric window with at least ``cubes`` cubes."""
    win = CubeWindow(1, -2, 2, 5) if W.n == 1 else CubeWindow(2, -1, 1, 2)
    assert len(win) >= cubes
    return win


def scalar_power_average(d, Q):
    """avg_Q |x|^d for a 1-d cube (closed form)."""
    a, b = float(Q.corner[0]), float(Q.corner[0] + Q.edge)

    def prim(x):
        return math.copysign(abs(x) ** (d + 1), x) / (d + 1)

    return (prim(b) - prim(a)) / (b - a)


# ---------------------------------------------------------------- 1

def test_criterion_1_reducing_certificates():
    t0 = time.perf_counter()
    worst_excess, worst_exact, worst_closed, count = 0.0, 0.0, 0.0, 0
    for m in (1, 2, 3):
        for name, W in builtin_catalogue(m):
            cubes = list(window_for(W).cubes())[:200]
            for p in PS:
                john = ReducingFamily(W, p, "john", QUAD)
                for Q in cubes:
                    lo, hi = verify_reducing(john, Q)
                    worst_excess = max(worst_excess, (hi / lo) / math.sqrt(m))
                    if m == 1:
                        worst_exact = max(worst_exact, abs(hi / lo - 1))
                        if W.kind == "power":
                            ref = scalar_power_average(W.exponents[0], Q) ** (1 / p)
                            worst_closed = max(worst_closed, abs(john[Q][0, 0].real / ref - 1))
                    count += 1
                if p == 2.0:
                    gram = ReducingFamily(W, p, "gram2", QUAD)
                    for Q in cubes:
                        lo, hi = verify_reducing(gram, Q)
                        worst_exact = max(worst_exact, abs(lo - 1), abs(hi - 1))
    elapsed = time.perf_counter() - t0
    ok = worst_excess <= 1.1 and worst_exact <= 1e-8 and elapsed <= 60
    record(1, ok, f"{count} cube checks, max (c_hi/c_lo)/sqrt(m) = {worst_excess:.4f}, "
                  f"exact-case defect {worst_exact:.1e}, scalar closed-form rel dev {worst_closed:.1e}, "
                  f"{elapsed:.1f} s")
    assert ok


# ---------------------------------------------------------------- 2

def test_criterion_2_identity_weight():
    win = CubeWindow(1, -1, 1, 1)
    worst_const, worst_dim = 0.0, 0.0
    thresholds_ok = True
    for m in (1, 2, 3):
        W = MatrixWeightSpec.identity(1, m)
        for p in PS:
            rep = dg.constants_report(W, p, win, QUAD, grid_depth=4)
            worst_const = max(worst_const, *(abs(v - 1) for v in (rep.ap, rep.apinfty, rep.fujii_sc, rep.fujii_vec)))
        dims = dg.dimension_estimate(W, 1.0, quad=QUAD)
        worst_dim = max(worst_dim, abs(dims.lower_slope), abs(dims.upper_slope))
        # thresholds with the measured dimensions against the unweighted formula
        for n in (1, 2, 3):
            for p in (0.5, 1.0, 2.0):
                for q in (0.5, 2.0, math.inf):
                    for fam in "BF":
                        for tau in (0.0, 1.0 / p, 1.0):
                            sp = SpaceParams(0.3, tau, p, q, fam)
                            got = adop.thresholds(sp, dims.d_lower_est, dims.d_upper_est, n)
                            ref = thresholds_reference(n, 0.3, tau, p, q, fam, 0.0, 0.0)
                            thresholds_ok &= got == ref
    ok = worst_const <= 1e-9 and worst_dim <= 0.02 and thresholds_ok
    record(2, ok, f"max |constant - 1| = {worst_const:.1e}, max |slope| = {worst_dim:.1e}, "
                  f"thresholds match: {thresholds_ok}")
    assert ok


# ---------------------------------------------------------------- 3

def test_criterion_3_anisotropic_dimension():
    t0 = time.perf_counter()
    grid = dg.default_lambda_grid(8)
    W = MatrixWeightSpec.anisotropic((0.5, 1.5))
    d_up = dg.dimension_estimate(W, 1.0, lambda_grid=grid, quad=QUAD).d_upper_est
    r_w = dg.critical_index(W).value
    W11 = MatrixWeightSpec.anisotropic((1.0, 1.0))
    d_up11 = dg.dimension_estimate(W11, 1.0, lambda_grid=grid, quad=QUAD).d_upper_est
    r_w11 = dg.critical_index(W11).value
    elapsed = time.perf_counter() - t0
    ok = (abs(d_up - 2.0) <= 0.15 and r_w == 2.5 and d_up < 2 * (r_w - 1) - 0.5
          and abs(d_up11 - 2 * (r_w11 - 1)) <= 0.15 and elapsed <= 120)
    record(3, ok, f"a=(1/2,3/2): d_upper = {d_up:.4f}, r_w = {r_w}; a=(1,1): d_upper = {d_up11:.4f} "
                  f"vs n(r_w-1) = {2 * (r_w11 - 1):.1f}; {elapsed:.1f} s")
    assert ok


# ---------------------------------------------------------------- 4

def test_criterion_4_ordering():
    violations, low, checked = 0, math.inf, 0
    for m in (1, 2, 3):
        for name, W in builtin_catalogue(m):
            for win in (CubeWindow(W.n, -1, 0, 1), CubeWindow(W.n, 0, 1, 1)):
                for p in (0.5, 1.0):
                    a = dg.ap_constant(W, p, win, QUAD, detect_divergence=False)
                    b = dg.apinfty_constant(W, p, win, QUAD, detect_divergence=False)
                    violations += not (b <= a)
                    low = min(low, a, b)
                    checked += 1
    ok = violations == 0 and low >= 1 - 1e-9
    record(4, ok, f"{checked} weight/window/p cases, {violations} ordering violations, min constant {low:.6f}")
    assert ok


# ---------------------------------------------------------------- 5

def test_criterion_5_reverse_holder():
    worst, where = 0.0, ""
    for m in (1, 2, 3):
        for name, W in builtin_catalogue(m):
            rep = dg.reverse_holder_check(W, 1.0, CubeWindow(W.n, -1, 1, 1), quad=QUAD, grid_depth=5)
            if rep.worst_ratio > worst:
                worst, where = rep.worst_ratio, f"{name}, m={m}, r={rep.r_grid[0]:.4f}"
    ok = worst <= 2.05
    record(5, ok, f"worst ratio {worst:.4f} ({where})")
    assert ok


# ---------------------------------------------------------------- 6

def test_criterion_6_calderon():
    fam = pt.build_lp_family(1024, 1)
    rng = np.random.default_rng(2024)
    funcs = [pt.random_band_function(1024, 1, 1, fam.band, rng) for _ in range(100)]
    t0 = time.perf_counter()
    errs = [pt.calderon_error(f, fam) for f in funcs]
    elapsed = time.perf_counter() - t0
    adj = max(pt.adjoint_defect(pt.analyze(g, fam), f, fam) for f, g in zip(funcs[:20], funcs[20:40]))
    ok = max(errs) <= 1e-9 and elapsed <= 5.0 and adj <= 1e-10
    record(6, ok, f"max rel error {max(errs):.1e} over 100 functions in {elapsed:.2f} s, "
                  f"adjoint defect {adj:.1e}")
    assert ok


# ---------------------------------------------------------------- 7

def test_criterion_7_generic_sampling():
    j = 2
    f = pt.random_band_function(64, 1, 1, pt.SAMPLING_ALPHA * 2 ** j, np.random.default_rng(7))
    errors = []
    for N in (2, 3, 4, 5, 6):
        rec = pt.generic_sampling_reconstruct(f, j, N, pt.sample_points(j, N, 1, "corner"))
        errors.append(rec.error)
    norms, factor = pt.contraction_decay(j, 1, (2, 3, 4, 5, 6), "corner")
    ok = max(errors) <= 1e-6 and abs(factor - 2.0) <= 0.2
    record(7, ok, f"max corner-sample error {max(errors):.1e}, contraction decay per unit N {factor:.3f}")
    assert ok


# ---------------------------------------------------------------- 8

def threshold_points(count=50, seed=8):
    rng = np.random.default_rng(seed)
    pts = [(1, 0.0, 0.0, 2.0, 2.0, "B", 0.0, 0.0), (1, 0.0, 0.0, 1.0, 1.0, "B", 0.0, 1.0),
           (1, 0.0, 1.0, 1.0, 2.0, "B", 0.0, 0.0)]
    while len(pts) < count:
        n = int(rng.integers(1, 4))
        p = float(rng.choice([0.5, 1.0, 2.0, 4.0]))
        q = float(rng.choice([0.5, 1.0, 2.0, math.inf]))
        tau = float(rng.choice([0.0, 0.25, 1.0 / p, 1.0 / p + 0.5]))
        pts.append((n, round(float(rng.uniform(-1, 1)), 3), tau, p, q, str(rng.choice(["B", "F"])),
                    round(float(rng.uniform(0, n - 0.01)), 3), round(float(rng.uniform(0, 2)), 3)))
    return pts


def test_criterion_8_thresholds_sweep(tmp_path):
    mismatches = 0
    for i, (n, s, tau, p, q, fam, d1, d2) in enumerate(threshold_points()):
        cfg = cli.Config.from_string(
            f"[space]\ns = {s!r}\ntau = {tau!r}\np = {p!r}\nq = {q!r}\nfamily = {fam}\n"
            f"[adop]\nn = {n}\nd1 = {d1!r}\nd2 = {d2!r}\n")
        cli.run("adop-thresholds", cfg, tmp_path / str(i))
        with open(tmp_path / str(i) / "adop-thresholds.csv", newline="") as fh:
            row = next(csv.DictReader(fh))
        got = (float(row["D_min"]), float(row["E_min"]), float(row["F_min"]))
        mismatches += got != thresholds_reference(n, s, tau, p, q, fam, d1, d2)
    ok = mismatches == 0
    record(8, ok, f"thresholds: {50 - mismatches}/50 exact matches")
    assert ok


def test_criterion_8_sharpness():
    # calibrate the classifier on pure p-series first
    calib = all(adop.classify_partial_sums(adop.p_series_partial_sums(a)) == "divergent" for a in (0.8, 0.9, 1.0)) \
        and all(adop.classify_partial_sums(adop.p_series_partial_sums(a)) == "convergent" for a in (1.1, 1.2, 1.5))
    wrong = []
    for n in (1, 2, 3):
        for p in (0.5, 1.0, 2.0):
            for d2 in (0.0, 1.0):
                for gap in (-0.5, -0.1, 0.1, 0.5):
                    rep = adop.d_sum((n + gap + d2) / p, p, d2, n)
                    want = "convergent" if gap > 0 else "divergent"
                    if rep.classification != want:
                        wrong.append((n, p, d2, gap))
    ok = calib and not wrong
    record(8, ok, f"sharpness: calibration {'ok' if calib else 'failed'}, {72 - len(wrong)}/72 D-sums classified")
    assert ok


PROBE_CASES = [(p, d2) for p in (0.5, 1.0, 2.0) for d2 in (0.0, 1.0)]


@pytest.mark.parametrize("p,d2", [
    pytest.param(p, d2, marks=pytest.mark.xfail(
        strict=True, reason="truncation growth of the kernel tail exceeds 5% per doubling on feasible windows"))
    if p < 2 else (p, d2) for p, d2 in PROBE_CASES])
def test_criterion_8_probe(p, d2):
    sp = SpaceParams(0.0, 0.0, p, 2.0, "B")
    k = adop.kernel_above_thresholds(sp, 0.0, d2, 1, 0.1)
    W = MatrixWeightSpec.power(d2) if d2 else None
    rep = adop.boundedness_probe(k, sp, W, CubeWindow(1, -1, 1, 1), batch=10, doublings=3)
    ok = rep.verdict == "bounded-consistent"
    record(8, ok, f"probe p={p:g} d2={d2:g}: growth per doubling "
                  + ", ".join(f"{g:.3f}" for g in rep.growth))
    assert ok


# ---------------------------------------------------------------- 9

def test_criterion_9_embedding():
    rng = np.random.default_rng(9)
    win = CubeWindow(1, -1, 2, 2)
    W = MatrixWeightSpec.conjugated((0.0, 1.0), math.pi / 4)
    failures, total = 0, 0
    for p, q in ((1.0, 2.0), (2.0, 1.0), (0.5, 3.0)):
        fam = ReducingFamily(W, p, "gram2", QUAD)
        for i in range(200):
            t = ss.random_field(win, 2, rng)
            weighting = fam if i % 2 else None
            failures += not ss.embedding_check(t, 0.3, p, q, weighting)
            total += 1
    ok = failures == 0
    record(9, ok, f"{total - failures}/{total} fields satisfy both inequalities")
    assert ok


# ---------------------------------------------------------------- 10

def test_criterion_10_equivalence():
    worst, where = 0.0, ""
    bands = []
    for W in (MatrixWeightSpec.identity(), MatrixWeightSpec.power(0.5), MatrixWeightSpec.power(1.0)):
        for p in (1.0, 2.0):
            for fam in "BF":
                rep = ss.equivalence_band(SpaceParams(0.0, 0.0, p, 2.0, fam), W, CubeWindow(1, -1, 1, 2),
                                          count=40, seed=10)
                bands.append(rep.band_doubled)
                if rep.drift >= worst:
                    worst, where = rep.drift, f"{W.kind}{W.exponents}, p={p:g}, {fam}"
    lo = min(b[0] for b in bands)
    hi = max(b[1] for b in bands)
    ok = worst <= 0.05
    record(10, ok, f"max drift {worst:.1e} ({where}); ratio bands within [{lo:.4f}, {hi:.4f}]")
    assert ok


# ---------------------------------------------------------------- 11

def test_criterion_11_shifted_cover():
    bad = 0
    for n in (1, 2, 3):
        rng = np.random.default_rng(100 + n)
        for _ in range(1000):
            edge = Fraction(float(2.0 ** rng.uniform(-8, 8)))
            corner = [Fraction(float(c)) for c in rng.uniform(-100, 100, n)]
            _, S = covering_shifted_cube(corner, edge)
            inside = all(s <= c and c + edge <= s + S.edge for s, c in zip(S.corner_exact(), corner))
            bad += not (inside and Fraction(3, 2) * edge < S.edge <= 3 * edge)
    ok = bad == 0
    record(11, ok, f"{3000 - bad}/3000 random cubes covered with l(S) in (1.5 l(Q), 3 l(Q)]")
    assert ok
