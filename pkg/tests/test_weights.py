import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import builtin_catalogue, constant_weight
from mwlab import linalg
from mwlab.dyadic import CubeIndex, CubeWindow
from mwlab.weights import (MatrixWeightSpec, Quadrature, ReducingFamily, SingularPointError, cube_average_norm,
                           eval_weight, rotation_unitary, verify_reducing)

Q01 = CubeIndex.of(0, 0)
QUAD = Quadrature()


def test_eval_weight_examples():
    assert np.allclose(eval_weight(MatrixWeightSpec.identity(2, 3), [0.3, -1.0]), np.eye(3))
    assert eval_weight(MatrixWeightSpec.power(2.0), [3.0])[0, 0] == pytest.approx(9.0)
    W = MatrixWeightSpec.anisotropic((1.0, 2.0), m=2)
    assert np.allclose(eval_weight(W, [2.0, 3.0]), 18.0 * np.eye(2))


def test_eval_weight_singular_point():
    with pytest.raises(SingularPointError):
        eval_weight(MatrixWeightSpec.power(0.5), [0.0])
    with pytest.raises(SingularPointError):
        eval_weight(MatrixWeightSpec.anisotropic((0.5, 1.0)), [1.0, 0.0])


def test_invalid_exponents_rejected():
    with pytest.raises(ValueError):
        MatrixWeightSpec.power(-1.0, n=1)
    with pytest.raises(ValueError):
        MatrixWeightSpec.anisotropic((0.5, -1.0))


def test_conjugated_weight_is_rotated_diagonal():
    W = MatrixWeightSpec.conjugated((0.0, 1.0), math.pi / 4)
    U = rotation_unitary(2, math.pi / 4)
    expect = U @ np.diag([1.0, 0.5]) @ U.conj().T
    assert np.allclose(eval_weight(W, [0.5]), expect)


def test_cube_average_norm_examples():
    assert cube_average_norm(MatrixWeightSpec.identity(1, 2), 0.7, CubeIndex.of(3, 1), np.eye(2), QUAD) \
        == pytest.approx(1.0)
    assert cube_average_norm(MatrixWeightSpec.power(1.0), 1.0, Q01, 1.0, QUAD) == pytest.approx(0.5, rel=1e-12)
    v = cube_average_norm(MatrixWeightSpec.power(0.5), 2.0, Q01, 1.0, QUAD)
    assert v == pytest.approx(math.sqrt(2.0 / 3.0), rel=1e-8)


@pytest.mark.parametrize("d, p", [(0.5, 1.0), (-0.5, 1.0), (1.0, 0.5), (0.3, 3.0)])
def test_scalar_reducing_matches_closed_form(d, p):
    # avg over [0,1) of |x|^d is 1/(1+d), so A_Q = (1/(1+d))^{1/p}
    for method in ("john", "gram2"):
        fam = ReducingFamily(MatrixWeightSpec.power(d), p, method, QUAD)
        # Gauss on geometric layers next to the singularity: ~1e-8 relative accuracy
        assert fam[Q01][0, 0].real == pytest.approx((1.0 / (1.0 + d)) ** (1.0 / p), rel=1e-6)


def test_reducing_examples():
    for p in (0.5, 1.0, 2.0):
        fam = ReducingFamily(MatrixWeightSpec.identity(1, 2), p, "john", QUAD)
        assert np.allclose(fam[CubeIndex.of(-1, 3)], np.eye(2), atol=1e-8)
    W = constant_weight(np.diag([1.0, 16.0]))
    for method in ("gram2", "john"):
        A = ReducingFamily(W, 2.0, method, QUAD)[CubeIndex.of(2, -3)]
        assert np.allclose(A, np.diag([1.0, 4.0]), atol=1e-6)


def test_certificates():
    lo, hi = verify_reducing(ReducingFamily(MatrixWeightSpec.identity(1, 2), 1.0, "john", QUAD), Q01)
    assert lo == pytest.approx(1.0, abs=1e-8) and hi == pytest.approx(1.0, abs=1e-8)
    lo, hi = verify_reducing(ReducingFamily(MatrixWeightSpec.power(0.7), 0.5, "john", QUAD), CubeIndex.of(1, 0))
    assert hi / lo == pytest.approx(1.0, abs=1e-9)
    fam = ReducingFamily(MatrixWeightSpec.conjugated((0.0, 1.0), math.pi / 4), 1.0, "john", QUAD)
    lo, hi = verify_reducing(fam, Q01)
    assert hi / lo <= math.sqrt(2) * 1.1
    assert fam.certificate(Q01) == (lo, hi)


@pytest.mark.parametrize("m", [2, 3])
def test_gram2_exact_at_p2(m):
    for _, W in builtin_catalogue(m):
        fam = ReducingFamily(W, 2.0, "gram2", QUAD)
        for Q in list(CubeWindow(W.n, -1, 1, 1).cubes())[:12]:
            lo, hi = verify_reducing(fam, Q)
            assert abs(lo - 1) <= 1e-8 and abs(hi - 1) <= 1e-8


def test_john_bound_small_window():
    for m in (2, 3):
        for _, W in builtin_catalogue(m):
            for p in (0.5, 1.0, 3.0):
                fam = ReducingFamily(W, p, "john", QUAD)
                for Q in list(CubeWindow(W.n, -1, 1, 1).cubes())[:6]:
                    lo, hi = verify_reducing(fam, Q)
                    assert hi / lo <= math.sqrt(m) * 1.1


@settings(max_examples=20, deadline=None)
@given(st.floats(0.2, 5.0), st.sampled_from([0.5, 1.0, 2.0]), st.integers(-2, 2), st.integers(-3, 3))
def test_scaling_covariance(c, p, j, k):
    base = MatrixWeightSpec.conjugated((0.0, 1.0), 0.6)
    U = rotation_unitary(2, 0.6)
    scaled = MatrixWeightSpec.custom(
        lambda X: c ** p * (U @ (np.einsum("ki,ij->kij", np.stack([np.ones(len(X)), np.abs(X[:, 0])], 1),
                                            np.eye(2))) @ U.conj().T), 1, 2, singular_axes=(0,))
    Q = CubeIndex.of(j, k)
    for method, tol in (("gram2", 1e-10), ("john", 1e-8)):
        A = ReducingFamily(base, p, method, QUAD)[Q]
        B = ReducingFamily(scaled, p, method, QUAD)[Q]
        assert np.linalg.norm(B - c * A, 2) <= tol * c * np.linalg.norm(A, 2) * 10


def test_unitary_covariance_keeps_certificate():
    V = rotation_unitary(2, 0.9)
    W = MatrixWeightSpec.conjugated((0.0, 1.0), 0.3)
    VW = MatrixWeightSpec.custom(lambda X: V @ W.power_at(X, 1.0) @ V.conj().T, 1, 2, singular_axes=(0,))
    for method in ("gram2", "john"):
        f1, f2 = ReducingFamily(W, 1.0, method, QUAD), ReducingFamily(VW, 1.0, method, QUAD)
        for Q in (Q01, CubeIndex.of(1, -1)):
            lo1, hi1 = verify_reducing(f1, Q)
            lo2, hi2 = verify_reducing(f2, Q)
            # V A V* is an admissible reducing operator for V W V*
            z = np.array([[1.0], [0.4j]])
            a = np.linalg.norm(V @ f1[Q] @ V.conj().T @ z)
            b = np.linalg.norm(f2[Q] @ z)
            assert hi2 / lo2 <= math.sqrt(2) * 1.1
            if method == "gram2":
                assert np.allclose(f2[Q], V @ f1[Q] @ V.conj().T, atol=1e-10)
            # both matrices are reducing operators of the same body up to the certificates
            assert lo1 / hi2 * (1 - 1e-9) <= b / a <= hi1 / lo2 * (1 + 1e-9)


def test_reducing_family_matrices_are_pd():
    fam = ReducingFamily(MatrixWeightSpec.conjugated((0.0, 0.5, 1.0), 0.4), 1.5, "john", QUAD)
    for Q in CubeWindow(1, -1, 1, 1).cubes():
        assert linalg.is_hermitian_pd(fam[Q])
