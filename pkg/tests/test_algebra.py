import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats as sps

from ymlattice.algebra import (casimir_constant, dagger, deserialize_matrices, det_error, exp_antihermitian,
                               exp_map, haar_sample, haar_trace_sample, hs_inner, inject_fault, project_su,
                               random_algebra, reunitarize, serialize_matrices, su_basis, u1_su_embed,
                               u1_su_split, unitarity_error)

Ns = st.integers(2, 6)
seeds = st.integers(0, 2 ** 32 - 1)


def test_hs_inner_examples():
    assert hs_inner(np.eye(2), np.eye(2)) == 2.0
    B = su_basis(2)
    assert abs(hs_inner(B[0], B[1])) < 1e-15
    with pytest.raises(ValueError):
        hs_inner(np.eye(2), np.eye(3))


@given(Ns, seeds)
def test_hs_inner_su_is_minus_trace(N, seed):
    rng = np.random.default_rng(seed)
    X, Y = random_algebra(N, rng, 2)
    assert hs_inner(X, Y) == pytest.approx(-np.trace(X @ Y).real, abs=1e-12)
    assert hs_inner(X, Y) == pytest.approx(hs_inner(Y, X), abs=1e-12)


@pytest.mark.parametrize("N", range(2, 7))
def test_basis_orthonormal_and_casimir(N):
    B = su_basis(N)
    assert len(B) == N * N - 1
    G = hs_inner(B[:, None], B[None, :])
    assert np.abs(G - np.eye(len(B))).max() < 1e-12
    assert np.abs(B + dagger(B)).max() < 1e-12
    assert np.abs(np.trace(B, axis1=1, axis2=2)).max() < 1e-12
    S = np.einsum("aij,ajk->ik", B, B)
    assert np.abs(S - casimir_constant(N) * np.eye(N)).max() < 1e-10


def test_casimir_values():
    assert casimir_constant(2) == -1.5
    assert casimir_constant(3) == pytest.approx(-8 / 3)
    with pytest.raises(ValueError):
        su_basis(1)


def test_basis_explicit_form_n2():
    B = su_basis(2)
    assert np.allclose(B[0], 1j * np.diag([1, -1]) / np.sqrt(2))
    assert np.allclose(B[1], np.array([[0, 1], [-1, 0]]) / np.sqrt(2))
    assert np.allclose(B[2], np.array([[0, 1j], [1j, 0]]) / np.sqrt(2))


@given(Ns)
def test_basis_commutator_closure(N):
    B = su_basis(N)
    C = B[:, None] @ B[None, :] - B[None, :] @ B[:, None]
    assert np.abs(C + dagger(C)).max() < 1e-12
    assert np.abs(np.trace(C, axis1=-2, axis2=-1)).max() < 1e-12


@given(Ns, seeds)
def test_projection_properties(N, seed):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))
    P = project_su(M)
    assert np.abs(hs_inner((M - P)[None], su_basis(N))).max() < 1e-10
    assert np.allclose(project_su(P), P)
    X = random_algebra(N, rng)
    assert np.allclose(project_su(X), X)
    assert np.abs(project_su(np.eye(N))).max() < 1e-15


@given(Ns, seeds)
def test_exp_map(N, seed):
    rng = np.random.default_rng(seed)
    X = random_algebra(N, rng)
    E = exp_map(X)
    assert np.allclose(exp_map(np.zeros((N, N))), np.eye(N))
    assert np.abs(E @ exp_map(-X) - np.eye(N)).max() < 1e-10
    assert unitarity_error(E) < 1e-10
    assert abs(np.linalg.det(E) - 1) < 1e-10
    assert np.allclose(exp_antihermitian(X), E, atol=1e-10)


@given(Ns, seeds)
def test_metric_right_invariance(N, seed):
    rng = np.random.default_rng(seed)
    X, Y = random_algebra(N, rng, 2)
    Q = haar_sample(N, "u", rng)
    assert hs_inner(X @ Q, Y @ Q) == pytest.approx(hs_inner(X, Y), abs=1e-10)


def test_haar_sample_group_membership(rng):
    U = haar_sample(4, "u", rng, 100)
    Q = haar_sample(4, "su", rng, 100)
    assert unitarity_error(U) < 1e-12 and unitarity_error(Q) < 1e-12 and det_error(Q) < 1e-12


def test_haar_left_invariance(rng):
    Q = haar_sample(3, "u", rng, 20000)
    U0 = haar_sample(3, "u", np.random.default_rng(7))
    a = np.real(np.trace(Q, axis1=1, axis2=2))
    b = np.real(np.trace(U0 @ Q, axis1=1, axis2=2))
    assert sps.ks_2samp(a, b).pvalue > 1e-3


@pytest.mark.parametrize("N,flavor", [(2, "u"), (3, "su"), (5, "su"), (4, "u")])
def test_trace_sampler_matches_qr(N, flavor):
    rng = np.random.default_rng(N)
    t1 = haar_trace_sample(N, flavor, rng, 20000)
    t2 = np.trace(haar_sample(N, flavor, rng, 20000), axis1=1, axis2=2)
    assert sps.ks_2samp(t1.real, t2.real).pvalue > 1e-3
    assert sps.ks_2samp(t1.imag, t2.imag).pvalue > 1e-3
    m2 = np.abs(t1) ** 2
    assert abs(m2.mean() - 1) < 3 * m2.std() / np.sqrt(len(m2)) + 1e-12


def test_trace_sampler_su_n_power_moment():
    # E[(Tr Q)^N] = 1 on SU(N) (one invariant in V^{(x)N}); 0 on U(N)
    rng = np.random.default_rng(3)
    for N in (2, 3):
        t = haar_trace_sample(N, "su", rng, 200000) ** N
        assert abs(t.mean() - 1) < 4 * t.std() / np.sqrt(len(t))
        t = haar_trace_sample(N, "u", rng, 200000) ** N
        assert abs(t.mean()) < 4 * t.std() / np.sqrt(len(t))


def test_embedding(rng):
    Q = haar_sample(3, "su", rng, 10)
    th = rng.uniform(0, 2 * np.pi, 10)
    assert np.allclose(u1_su_embed(0.0, Q), Q)
    U = u1_su_embed(th, Q)
    assert np.allclose(np.linalg.det(U), np.exp(1j * th))
    th2, Q2 = u1_su_split(U)
    assert np.allclose(u1_su_embed(th2, Q2), U)
    assert det_error(Q2) < 1e-12 and np.all((th2 >= 0) & (th2 < 2 * np.pi))


def test_embedding_of_uniform_haar_matches_un():
    rng = np.random.default_rng(11)
    n = 40000
    U = u1_su_embed(rng.uniform(0, 2 * np.pi, n), haar_sample(3, "su", rng, n))
    V = haar_sample(3, "u", rng, n)
    for f in (lambda M: np.abs(np.trace(M, axis1=1, axis2=2)) ** 2, lambda M: np.real(np.trace(M, axis1=1, axis2=2))):
        a, b = f(U), f(V)
        assert abs(a.mean() - b.mean()) < 3 * np.hypot(a.std(), b.std()) / np.sqrt(n)


@given(seeds)
def test_reunitarize(seed):
    rng = np.random.default_rng(seed)
    Q = haar_sample(3, "su", rng, 5)
    P = Q + 1e-7 * (rng.standard_normal(Q.shape) + 1j * rng.standard_normal(Q.shape))
    R = reunitarize(P, special=True)
    assert unitarity_error(R) < 1e-12 and det_error(R) < 1e-12
    assert np.linalg.norm(R - P, axis=(1, 2)).max() <= 1e-5


def test_fault_injection_disables_reunitarization(rng):
    P = haar_sample(2, "u", rng, 3) * (1 + 1e-6)
    with inject_fault("skip-reunitarization"):
        assert unitarity_error(reunitarize(P)) > 1e-7
    assert unitarity_error(reunitarize(P)) < 1e-12


def test_serialization_roundtrip(rng):
    Q = haar_sample(3, "u", rng, 7)
    buf = serialize_matrices(Q)
    assert buf[:6] == b"YMMAT1"
    assert np.array_equal(deserialize_matrices(buf), Q)
    with pytest.raises(ValueError):
        deserialize_matrices(b"garbage" * 8)
