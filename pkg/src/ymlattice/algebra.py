"""U(N)/SU(N) matrix kernel: inner products, su(N) basis, projections,
exponentials, Haar sampling and re-unitarization.

All functions accept a single ``(N, N)`` matrix or a stack ``(..., N, N)``.
"""

from __future__ import annotations

import contextlib
import struct
from functools import lru_cache

import numpy as np
import scipy.linalg

# names of deliberately injected faults (used by ``ymlattice validate``)
FAULTS: set[str] = set()


@contextlib.contextmanager
def inject_fault(name: str):
    FAULTS.add(name)
    try:
        yield
    finally:
        FAULTS.discard(name)


def dagger(X: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(X, -1, -2))


def hs_inner(X: np.ndarray, Y: np.ndarray) -> np.ndarray | float:
    """Hilbert-Schmidt inner product Re Tr(X Y^*)."""
    X = np.asarray(X)
    Y = np.asarray(Y)
    if X.shape[-2:] != Y.shape[-2:]:
        raise ValueError(f"size mismatch {X.shape[-2:]} vs {Y.shape[-2:]}")
    out = np.real(np.sum(X * np.conj(Y), axis=(-2, -1)))
    return float(out) if out.ndim == 0 else out


def _check_n(N: int):
    if int(N) < 2:
        raise ValueError("N must be >= 2")


@lru_cache(maxsize=None)
def _su_basis_cached(N: int) -> np.ndarray:
    out = []
    for k in range(1, N):
        D = np.zeros((N, N), dtype=complex)
        D[np.arange(k), np.arange(k)] = 1.0
        D[k, k] = -k
        out.append(1j * D / np.sqrt(k + k * k))
    for k in range(N):
        for n in range(k + 1, N):
            E = np.zeros((N, N), dtype=complex)
            E[k, n], E[n, k] = 1.0, -1.0
            out.append(E / np.sqrt(2))
            F = np.zeros((N, N), dtype=complex)
            F[k, n] = F[n, k] = 1j
            out.append(F / np.sqrt(2))
    arr = np.array(out)
    arr.setflags(write=False)
    return arr


def su_basis(N: int) -> np.ndarray:
    """Orthonormal basis of su(N) as an array (N^2 - 1, N, N): D_k, then E_kn, F_kn."""
    _check_n(N)
    return _su_basis_cached(int(N))


def casimir_constant(N: int) -> float:
    _check_n(N)
    return -(N * N - 1) / N


def project_su(M: np.ndarray) -> np.ndarray:
    """Orthogonal projection of C^{NxN} onto su(N)."""
    M = np.asarray(M, dtype=complex)
    N = M.shape[-1]
    A = 0.5 * (M - dagger(M))
    tr = np.trace(A, axis1=-2, axis2=-1)
    return A - (tr / N)[..., None, None] * np.eye(N)


def project_u(M: np.ndarray) -> np.ndarray:
    """Orthogonal projection onto u(N) (anti-Hermitian part)."""
    M = np.asarray(M, dtype=complex)
    return 0.5 * (M - dagger(M))


def su_coordinates(X: np.ndarray) -> np.ndarray:
    """Coefficients of X in ``su_basis`` (trailing axis of length N^2 - 1)."""
    B = su_basis(X.shape[-1])
    return np.real(np.einsum("...ij,aij->...a", X, np.conj(B)))


def exp_map(X: np.ndarray) -> np.ndarray:
    """Matrix exponential (scaling and squaring with Pade)."""
    return scipy.linalg.expm(np.asarray(X, dtype=complex))


def exp_antihermitian(X: np.ndarray) -> np.ndarray:
    """exp(X) for anti-Hermitian X via a Hermitian eigendecomposition (exactly unitary)."""
    lam, V = np.linalg.eigh(-1j * np.asarray(X, dtype=complex))
    return (V * np.exp(1j * lam)[..., None, :]) @ dagger(V)


def random_algebra(N: int, rng: np.random.Generator, size=(), flavor: str = "su") -> np.ndarray:
    """Standard Gaussian element sum_a g_a v_a of su(N) (or u(N) with an extra i I/sqrt(N))."""
    size = tuple(np.atleast_1d(size)) if size != () else ()
    B = su_basis(N)
    g = rng.standard_normal(size + (len(B),))
    X = np.tensordot(g, B, axes=(-1, 0))
    if flavor == "u":
        g0 = rng.standard_normal(size)
        X = X + (1j / np.sqrt(N)) * np.asarray(g0)[..., None, None] * np.eye(N)
    elif flavor != "su":
        raise ValueError(f"unknown flavor {flavor!r}")
    return X


def haar_sample(N: int, flavor: str, rng: np.random.Generator, size=()) -> np.ndarray:
    """Haar-distributed U(N) or SU(N) matrices via QR of a complex Ginibre matrix."""
    size = tuple(np.atleast_1d(size)) if size != () else ()
    Z = rng.standard_normal(size + (N, N, 2)).view(np.complex128)[..., 0] / np.sqrt(2)
    Qm, R = np.linalg.qr(Z)
    d = np.diagonal(R, axis1=-2, axis2=-1)
    Qm = Qm * (d / np.abs(d))[..., None, :]
    if flavor == "u":
        return Qm
    if flavor != "su":
        raise ValueError(f"unknown flavor {flavor!r}")
    phase = np.angle(np.linalg.det(Qm))
    return Qm * np.exp(-1j * phase / N)[..., None, None]


def haar_trace_sample(N: int, flavor: str, rng: np.random.Generator, size: int) -> np.ndarray:
    """Exact draws of Tr Q for Haar Q in U(N) or SU(N), in O(N) per draw.

    Uses the CMV five-diagonal model of the circular unitary ensemble: the
    Verblunsky coefficients alpha_k are independent with |alpha_k|^2 ~
    Beta(1, N-k-1) and uniform phase, and the last one is uniform on the
    circle. The CMV matrix L M has the eigenvalue law of Haar U(N), so its
    trace and determinant are jointly distributed as those of a Haar matrix.
    """
    n = int(size)
    k = np.arange(N - 1)
    r2 = rng.beta(1.0, (N - k - 1).astype(float), size=(n, N - 1)) if N > 1 else np.zeros((n, 0))
    ph = rng.uniform(0.0, 2 * np.pi, size=(n, N))
    alpha = np.empty((n, N), dtype=complex)
    alpha[:, :-1] = np.sqrt(r2) * np.exp(1j * ph[:, :-1])
    alpha[:, -1] = np.exp(1j * ph[:, -1])

    # L holds the even blocks, M the odd ones plus a leading 1x1 identity.
    # Their off-diagonal entries never overlap, so Tr(LM) = sum_i L_ii M_ii.
    dL = np.zeros((n, N), dtype=complex)
    dM = np.zeros((n, N), dtype=complex)
    dM[:, 0] = 1.0
    for j in range(N):
        tgt = dL if j % 2 == 0 else dM
        tgt[:, j] = np.conj(alpha[:, j])
        if j < N - 1:
            tgt[:, j + 1] = -alpha[:, j]
    tr = np.sum(dL * dM, axis=1)
    if flavor == "u":
        return tr
    if flavor != "su":
        raise ValueError(f"unknown flavor {flavor!r}")
    det = (-1.0) ** (N - 1) * np.conj(alpha[:, -1])
    return tr * np.exp(-1j * np.angle(det) / N)


def u1_su_embed(theta, Q: np.ndarray) -> np.ndarray:
    """e^{i theta / N} Q."""
    Q = np.asarray(Q)
    N = Q.shape[-1]
    return np.exp(1j * np.asarray(theta) / N)[..., None, None] * Q


def u1_su_split(U: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of ``u1_su_embed``: theta = arg det U in [0, 2 pi), Q = e^{-i theta/N} U."""
    U = np.asarray(U)
    N = U.shape[-1]
    theta = np.mod(np.angle(np.linalg.det(U)), 2 * np.pi)
    return theta, u1_su_embed(-theta, U)


def unitarity_error(Q: np.ndarray) -> float:
    """max over the stack of ||Q Q^* - I||_F."""
    Q = np.asarray(Q)
    err = np.linalg.norm(Q @ dagger(Q) - np.eye(Q.shape[-1]), axis=(-2, -1))
    return float(np.max(err))


def det_error(Q: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.det(Q) - 1.0)))


def reunitarize(Q: np.ndarray, special: bool = False) -> np.ndarray:
    """Nearest unitary matrix (polar factor); with ``special`` also fixes det = 1."""
    if "skip-reunitarization" in FAULTS:
        return np.array(Q, copy=True)
    W, _, Vh = np.linalg.svd(Q)
    U = W @ Vh
    if special:
        N = U.shape[-1]
        U = U * np.exp(-1j * np.angle(np.linalg.det(U)) / N)[..., None, None]
    return U


# ---- binary serialization ------------------------------------------------

_MAGIC = b"YMMAT1\0\0"


def serialize_matrices(arr: np.ndarray) -> bytes:
    """Little-endian float64 (re, im) pairs preceded by a (count, rows, cols) header."""
    arr = np.asarray(arr, dtype=complex)
    stack = arr.reshape((-1,) + arr.shape[-2:]) if arr.ndim >= 2 else arr.reshape(1, 1, -1)
    head = _MAGIC + struct.pack("<QQQ", *stack.shape)
    return head + np.ascontiguousarray(stack, dtype="<c16").tobytes()


def deserialize_matrices(buf: bytes) -> np.ndarray:
    if buf[:8] != _MAGIC:
        raise ValueError("not a serialized matrix stack")
    count, rows, cols = struct.unpack("<QQQ", buf[8:32])
    data = np.frombuffer(buf, dtype="<c16", offset=32, count=count * rows * cols)
    return data.reshape(count, rows, cols).astype(complex)
