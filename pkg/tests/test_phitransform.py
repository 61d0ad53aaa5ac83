import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mwlab import phitransform as pt
from mwlab.dyadic import CubeIndex, CubeWindow
from mwlab.seqspaces import SequenceField, SpaceParams, seq_norm
from mwlab.weights import MatrixWeightSpec


@pytest.fixture(scope="module")
def fam1():
    return pt.build_lp_family(1024, 1)


@pytest.fixture(scope="module")
def fam_small():
    return pt.build_lp_family(64, 1)


def exponential(N, n, k0, m=1):
    F = np.zeros((N,) * n + (m,), dtype=complex)
    F[tuple(np.mod(k0, N))] = 1.0
    return pt.GridFunction.from_spectrum(n, N, F)


# ---------------------------------------------------------------- windows

def test_window_values():
    assert pt.Phi_hat(0.0) == 1.0
    assert pt.phi_hat(0.0) == 0.0
    r = np.linspace(0, 3, 301)
    # overlap of the first two windows
    np.testing.assert_allclose(pt.Phi_hat(r) ** 2 + pt.phi_hat(r / 2) ** 2, pt.chi(r / 2), atol=1e-15)
    assert pt.Phi_hat(1.0) ** 2 + pt.phi_hat(0.5) ** 2 == pytest.approx(1.0, abs=1e-15)
    assert pt.Phi_hat(1.5) ** 2 + pt.phi_hat(0.75) ** 2 == pytest.approx(1.0, abs=1e-15)


def test_windows_supports():
    r = np.linspace(0, 10, 2001)
    assert np.all(pt.Phi_hat(r[r >= 2]) == 0)
    assert np.all(pt.phi_hat(r[(r <= 0.5) | (r >= 2)]) == 0)
    assert np.all(pt.phi_hat(r[(r > 0.5) & (r < 2)]) > 0)


@given(st.floats(0, 2))
def test_smooth_step_monotone(r):
    a = pt.smooth_step(r, 1, 2)
    b = pt.smooth_step(r + 1e-3, 1, 2)
    assert 0 <= b <= a <= 1


@pytest.mark.parametrize("N,n", [(16, 1), (64, 1), (1024, 1), (32, 2), (128, 2)])
def test_partition_of_unity(N, n):
    assert pt.build_lp_family(N, n).partition_defect() <= 1e-12


def test_max_level():
    assert pt.max_level(1024) == 10
    for N in (4, 16, 256):
        j = pt.max_level(N)
        assert 2 ** (j + 1) < math.pi * N <= 2 ** (j + 2)


def test_resolution_error():
    with pytest.raises(pt.ResolutionError):
        pt.build_lp_family(64, 1, j_max=8)
    with pytest.raises(ValueError):
        pt.build_lp_family(48, 1)


# ---------------------------------------------------------------- filters

def test_band_filter_disjoint_support(fam1):
    j = 6
    kmax = int(2 ** (j - 2) / (2 * math.pi))
    f = pt.random_band_function(1024, 1, 1, 2.0 * math.pi * kmax, np.random.default_rng(0))
    assert pt.band_filter(f, fam1, j).l2_norm() <= 1e-15 * f.l2_norm()


def test_band_filter_constant(fam1):
    f = pt.GridFunction(1, 1024, np.full(1024, 2.5 + 1j))
    np.testing.assert_allclose(pt.band_filter(f, fam1, 0).samples, f.samples, atol=1e-14)
    for j in range(1, fam1.j_max + 1):
        assert pt.band_filter(f, fam1, j).l2_norm() < 1e-14


def test_band_filter_level_range(fam_small):
    f = pt.GridFunction(1, 64, np.ones(64))
    with pytest.raises(ValueError):
        pt.band_filter(f, fam_small, fam_small.j_max + 1)


@pytest.mark.parametrize("n,N", [(1, 1024), (2, 64)])
def test_parseval_bookkeeping(n, N):
    fam = pt.build_lp_family(N, n)
    f = pt.random_band_function(N, n, 2, fam.band, np.random.default_rng(3))
    energy = sum(pt.band_filter(f, fam, j).l2_norm() ** 2 for j in range(fam.j_max + 1))
    assert energy == pytest.approx(f.l2_norm() ** 2, rel=1e-12)


# ---------------------------------------------------------------- transform

def test_analyze_zero(fam_small):
    t = pt.analyze(pt.GridFunction(1, 64, np.zeros(64)), fam_small)
    assert np.all(t.values == 0)


def test_analyze_single_frequency(fam1):
    k0 = 37
    f = exponential(1024, 1, (k0,))
    t = pt.analyze(f, fam1)
    xi = 2 * math.pi * k0
    for Q, v in zip(t.cubes, t.values):
        mult = pt.Phi_hat(xi) if Q.j == 0 else pt.phi_hat(xi / 2 ** Q.j)
        ref = 2.0 ** (-Q.j / 2) * mult * np.exp(2j * math.pi * k0 * Q.k[0] / 2 ** Q.j)
        assert abs(v[0] - ref) <= 1e-10


@pytest.mark.parametrize("n,N", [(1, 1024), (2, 64)])
def test_plancherel(n, N):
    fam = pt.build_lp_family(N, n)
    sp = SpaceParams(0.0, 0.0, 2.0, 2.0, "F", homogeneous=False)
    for seed in range(3):
        f = pt.random_band_function(N, n, 1, fam.band, np.random.default_rng(seed))
        t = pt.analyze(f, fam)
        # both norms see the unweighted l2 sum of all coefficients
        assert np.linalg.norm(t.values) == pytest.approx(f.l2_norm(), rel=1e-9)
        assert seq_norm(t, sp) == pytest.approx(f.l2_norm(), rel=1e-9)


def test_synthesize_zero(fam_small):
    t = pt.analyze(pt.GridFunction(1, 64, np.zeros(64)), fam_small)
    assert pt.synthesize(t, fam_small).l2_norm() == 0.0


def test_wave_packet(fam_small):
    Q = CubeIndex(3, (5,))
    t = SequenceField.unit(fam_small.window_cube(), Q)
    g = pt.synthesize(t, fam_small)
    # direct trigonometric sum, no FFT
    x = np.arange(64) / 64
    ref = np.zeros(64, dtype=complex)
    for l in range(-32, 32):
        ref += pt.phi_hat(2 * math.pi * abs(l) / 8) * np.exp(2j * math.pi * l * (x - 5 / 8))
    ref *= 2.0 ** (-3 / 2)
    np.testing.assert_allclose(g.samples[:, 0], ref, atol=1e-13)


def test_calderon_n1(fam1):
    rng = np.random.default_rng(11)
    for _ in range(10):
        f = pt.random_band_function(1024, 1, 2, fam1.band, rng)
        assert pt.calderon_error(f, fam1) <= 1e-9


def test_calderon_n2():
    fam = pt.build_lp_family(256, 2)
    f = pt.random_band_function(256, 2, 1, fam.band, np.random.default_rng(4))
    assert pt.calderon_error(f, fam) <= 1e-9


def test_adjointness(fam_small):
    rng = np.random.default_rng(5)
    g = pt.random_band_function(64, 1, 2, 1e9, rng)
    t = pt.analyze(pt.random_band_function(64, 1, 2, 1e9, rng), fam_small)
    assert pt.adjoint_defect(t, g, fam_small) <= 1e-10


def test_misaligned_grid(fam_small):
    with pytest.raises(pt.ResolutionError):
        pt.analyze(pt.GridFunction(1, 32, np.ones(32)), fam_small)


def test_synthesize_level_out_of_range(fam_small):
    win = CubeWindow(1, 0, fam_small.j_max + 1, 1, inhomogeneous=True)
    t = SequenceField(win, (CubeIndex(fam_small.j_max + 1, (0,)),), np.ones((1, 1)))
    with pytest.raises(pt.ResolutionError):
        pt.synthesize(t, fam_small)


@settings(max_examples=20, deadline=None)
@given(st.integers(-300, 300))
def test_evaluate_interpolates_exponentials(k0):
    f = exponential(1024, 1, (k0,))
    x = np.array([[0.123], [0.77]])
    np.testing.assert_allclose(f.evaluate(x)[:, 0], np.exp(2j * math.pi * k0 * x[:, 0]), atol=1e-12)


# ---------------------------------------------------------------- lattice sampling

def test_lattice_constant():
    f = pt.GridFunction(1, 64, np.full(64, 3.0))
    assert pt.lattice_sampling_check(f, 0) <= 1e-14


def test_lattice_offset_invariance():
    j = 3
    f = pt.random_band_function(128, 1, 1, pt.SAMPLING_ALPHA * 2 ** j, np.random.default_rng(0))
    a = pt.lattice_sampling(f, j)
    b = pt.lattice_sampling(f, j, y=[0.0371])
    np.testing.assert_allclose(a.samples, b.samples, atol=1e-12)
    np.testing.assert_allclose(a.samples, f.samples, atol=1e-12)


def test_lattice_single_frequency():
    f = exponential(64, 2, (1, -1))
    assert pt.lattice_sampling_check(f, 3) <= 1e-10


def test_lattice_leakage():
    f = exponential(64, 1, (5,))  # |xi| = 10 pi > 2 * 2^2
    with pytest.raises(pt.SpectrumLeakage):
        pt.lattice_sampling(f, 2)


# ---------------------------------------------------------------- generic sampling

def test_generic_center_samples():
    f = pt.random_band_function(64, 1, 2, pt.SAMPLING_ALPHA * 4, np.random.default_rng(1))
    rec = pt.generic_sampling_reconstruct(f, 2, 5, pt.sample_points(2, 5, 1, "center"))
    assert rec.error <= 1e-9


@pytest.mark.parametrize("mode", ["corner", "random"])
def test_generic_adversarial_samples(mode):
    f = pt.random_band_function(64, 1, 1, pt.SAMPLING_ALPHA * 4, np.random.default_rng(2))
    rec = pt.generic_sampling_reconstruct(f, 2, 3, pt.sample_points(2, 3, 1, mode, seed=9))
    assert rec.error <= 1e-6
    assert rec.contraction_norm < 1


def test_generic_n2():
    f = pt.random_band_function(32, 2, 1, pt.SAMPLING_ALPHA * 2, np.random.default_rng(3))
    rec = pt.generic_sampling_reconstruct(f, 1, 3)
    assert rec.error <= 1e-6


def test_contraction_halves_per_N():
    norms, factor = pt.contraction_decay(2)
    assert 1.8 <= factor <= 2.2
    assert all(b < a for a, b in zip(norms, norms[1:]))


def test_contraction_error_small_N():
    f = pt.random_band_function(32, 2, 1, pt.SAMPLING_ALPHA * 4, np.random.default_rng(0))
    with pytest.raises(pt.ContractionError):
        pt.generic_sampling_reconstruct(f, 2, 0)


def test_points_must_sit_in_their_cubes():
    f = pt.random_band_function(64, 1, 1, 8.0, np.random.default_rng(0))
    bad = pt.sample_points(2, 1, 1, lambda c, h: np.floor(c * 4) / 4)
    with pytest.raises(ValueError):
        pt.generic_sampling_reconstruct(f, 2, 1, bad)


def test_generic_rejects_small_M():
    f = pt.random_band_function(64, 1, 1, 8.0, np.random.default_rng(0))
    with pytest.raises(ValueError):
        pt.generic_sampling_reconstruct(f, 2, 3, M=1.0)


# ---------------------------------------------------------------- function norms

def brute_function_norm(f, fam, sp):
    """Unweighted norm by explicit loops over dyadic P of the torus."""
    N = f.N
    G = np.array([[2.0 ** (j * sp.s) * np.linalg.norm(pt.band_filter(f, fam, j).samples[i])
                   for i in range(N)] for j in range(fam.j_max + 1)])
    best = 0.0
    for jp in range(fam.j_max + 1):
        width = N >> jp
        for kp in range(1 << jp):
            cells = slice(kp * width, (kp + 1) * width)
            levels = range(jp, fam.j_max + 1)
            if sp.family == "F":
                inner = np.sum(G[jp:, cells] ** sp.q, axis=0) ** (1 / sp.q)
                val = (np.sum(inner ** sp.p) / N) ** (1 / sp.p)
            else:
                val = sum((np.sum(G[j, cells] ** sp.p) / N) ** (sp.q / sp.p) for j in levels) ** (1 / sp.q)
            best = max(best, val * 2.0 ** (jp * sp.tau))
    return best


@pytest.mark.parametrize("sp", [SpaceParams(0.3, 0.2, 1.5, 2.0, "B"), SpaceParams(-0.2, 0.4, 1.0, 3.0, "F"),
                                SpaceParams(0.0, 0.0, 2.0, 1.0, "F"), SpaceParams(0.5, 0.7, 0.8, 0.9, "B")])
def test_function_norm_brute_force(fam_small, sp):
    f = pt.random_band_function(64, 1, 1, fam_small.band, np.random.default_rng(6))
    assert pt.function_norm(f, fam_small, sp) == pytest.approx(brute_function_norm(f, fam_small, sp), rel=1e-10)


def test_function_norm_identity_is_l2(fam1):
    sp = SpaceParams(0.0, 0.0, 2.0, 2.0, "F")
    f = pt.random_band_function(1024, 1, 2, fam1.band, np.random.default_rng(0))
    assert pt.function_norm(f, fam1, sp) == pytest.approx(f.l2_norm(), rel=1e-10)
    W = pt.GridPointwise(MatrixWeightSpec.identity(1, 2))
    assert pt.function_norm(f, fam1, sp, W) == pytest.approx(f.l2_norm(), rel=1e-10)


def test_function_norm_zero(fam_small):
    sp = SpaceParams(0.0, 0.0, 1.0, 1.0, "B")
    assert pt.function_norm(pt.GridFunction(1, 64, np.zeros(64)), fam_small, sp) == 0.0


def test_function_equivalence_stable():
    sp = SpaceParams(0.0, 0.0, 2.0, 2.0, "F")
    W = MatrixWeightSpec.power(0.5, 1)
    bands = []
    for N in (64, 128):
        fam = pt.build_lp_family(N, 1)
        rng = np.random.default_rng(0)
        funcs = [pt.random_band_function(N, 1, 1, fam.band, rng) for _ in range(3)]
        bands.append(pt.function_equivalence(funcs, fam, sp, W))
    for a, b in zip(bands[0], bands[1]):
        assert abs(b / a - 1) <= 0.05


# ---------------------------------------------------------------- text io

def test_grid_text_roundtrip():
    f = pt.random_band_function(16, 2, 2, 1e9, np.random.default_rng(0))
    g = pt.grid_from_text(pt.grid_to_text(f))
    assert (g.n, g.N, g.m) == (2, 16, 2)
    np.testing.assert_array_equal(g.samples, f.samples)


def test_grid_text_errors():
    with pytest.raises(ValueError):
        pt.grid_from_text("1,2\n")
    with pytest.raises(ValueError):
        pt.grid_from_text("#mwlab-grid n=1 N=4 m=1\n1,0\n")
