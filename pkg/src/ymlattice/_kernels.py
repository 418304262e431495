"""Numba kernels for sequential Metropolis sweeps.

Random inputs (proposal matrices, Gaussian increments, uniforms) are drawn by
the caller in numpy so the generator state stays checkpointable; the kernels
are deterministic functions of their arguments.

Local action trick: for an edge e with incident plaquettes p, the part of the
action depending on Q_e is Re Tr(Q_e * Sigma) where
    Sigma = sum_{p: e forward} w_p C_p + sum_{p: e backward} conj(w_p) C_p^*
and C_p is the product of the remaining traversal matrices after e.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _mat(U, e, s):
    # traversal matrix for slot s (slots 2, 3 are traversed backward)
    if s < 2:
        return U[e]
    return np.conj(U[e]).T.copy()


@njit(cache=True, nogil=True)
def _after(U, pe, p, slot):
    """Product of the traversal matrices following ``slot`` (cyclic)."""
    s1 = (slot + 1) % 4
    s2 = (slot + 2) % 4
    s3 = (slot + 3) % 4
    A = _mat(U, pe[p, s1], s1)
    B = _mat(U, pe[p, s2], s2)
    C = _mat(U, pe[p, s3], s3)
    return A @ B @ C


@njit(cache=True, nogil=True)
def _retr(A, B):
    # Re Tr(A B)
    n = A.shape[0]
    acc = 0.0
    for i in range(n):
        for j in range(n):
            acc += (A[i, j] * B[j, i]).real
    return acc


@njit(cache=True, nogil=True)
def _tr(A, B):
    n = A.shape[0]
    acc = 0.0 + 0.0j
    for i in range(n):
        for j in range(n):
            acc += A[i, j] * B[j, i]
    return acc


@njit(cache=True, nogil=True)
def sweep_direct(U, pe, edge_plaq, edge_slot, wplaq, props, unif):
    """One sequential Metropolis sweep of U(N) (or SU(N)) links for the Wilson action.

    wplaq[p] = N beta_p. props[e] is the left-multiplied proposal matrix.
    Returns the number of accepted updates.
    """
    E = U.shape[0]
    n = U.shape[1]
    acc = 0
    for e in range(E):
        sig = np.zeros((n, n), dtype=np.complex128)
        for k in range(edge_plaq.shape[1]):
            p = edge_plaq[e, k]
            if p < 0:
                break
            s = edge_slot[e, k]
            C = _after(U, pe, p, s)
            if s < 2:
                sig += wplaq[p] * C
            else:
                sig += wplaq[p] * np.conj(C).T
        Qn = props[e] @ U[e]
        dS = _retr(Qn, sig) - _retr(U[e], sig)
        if dS >= 0.0 or unif[e] < np.exp(dS):
            U[e] = Qn
            acc += 1
    return acc


@njit(cache=True, nogil=True)
def _theta_p(theta, pe, p):
    return theta[pe[p, 0]] + theta[pe[p, 1]] - theta[pe[p, 2]] - theta[pe[p, 3]]


@njit(cache=True, nogil=True)
def sweep_joint(theta, Q, pe, edge_plaq, edge_slot, betas, N, z, eps_theta, props, unif):
    """Sequential sweep of the joint (theta, Q) chain: a wrapped-Gaussian theta move
    then a left-multiplied SU(N) move on every edge. Returns (acc_theta, acc_Q)."""
    E = Q.shape[0]
    n = Q.shape[1]
    kmax = edge_plaq.shape[1]
    two_pi = 2.0 * np.pi
    acc_t = 0
    acc_q = 0
    Cs = np.zeros((kmax, n, n), dtype=np.complex128)
    for e in range(E):
        # traces of incident plaquettes with the current Q_e
        for k in range(kmax):
            p = edge_plaq[e, k]
            if p < 0:
                break
            Cs[k] = _after(Q, pe, p, edge_slot[e, k])
        # theta move
        tn = (theta[e] + eps_theta * z[e]) % two_pi
        dS = 0.0
        for k in range(kmax):
            p = edge_plaq[e, k]
            if p < 0:
                break
            s = edge_slot[e, k]
            sg = 1.0 if s < 2 else -1.0
            if s < 2:
                T = _tr(Q[e], Cs[k])
            else:
                T = _tr(np.conj(Q[e]).T.copy(), Cs[k])
            tp = _theta_p(theta, pe, p)
            tpn = tp + sg * (tn - theta[e])
            dS += N * betas[p] * ((np.exp(1j * tpn / N) - np.exp(1j * tp / N)) * T).real
        if dS >= 0.0 or unif[2 * e] < np.exp(dS):
            theta[e] = tn
            acc_t += 1
        # Q move
        sig = np.zeros((n, n), dtype=np.complex128)
        for k in range(kmax):
            p = edge_plaq[e, k]
            if p < 0:
                break
            s = edge_slot[e, k]
            w = N * betas[p] * np.exp(1j * _theta_p(theta, pe, p) / N)
            if s < 2:
                sig += w * Cs[k]
            else:
                sig += np.conj(w) * np.conj(Cs[k]).T
        Qn = props[e] @ Q[e]
        dS = _retr(Qn, sig) - _retr(Q[e], sig)
        if dS >= 0.0 or unif[2 * e + 1] < np.exp(dS):
            Q[e] = Qn
            acc_q += 1
    return acc_t, acc_q


@njit(cache=True, nogil=True)
def sweep_theta(theta, traces, pe, edge_plaq, edge_slot, betas, N, z, eps_theta, unif):
    """Conditional theta sweep with all plaquette traces held fixed."""
    E = theta.shape[0]
    kmax = edge_plaq.shape[1]
    two_pi = 2.0 * np.pi
    acc = 0
    for e in range(E):
        tn = (theta[e] + eps_theta * z[e]) % two_pi
        dS = 0.0
        for k in range(kmax):
            p = edge_plaq[e, k]
            if p < 0:
                break
            sg = 1.0 if edge_slot[e, k] < 2 else -1.0
            tp = _theta_p(theta, pe, p)
            tpn = tp + sg * (tn - theta[e])
            dS += N * betas[p] * ((np.exp(1j * tpn / N) - np.exp(1j * tp / N)) * traces[p]).real
        if dS >= 0.0 or unif[e] < np.exp(dS):
            theta[e] = tn
            acc += 1
    return acc


@njit(cache=True, nogil=True)
def sweep_theta_many(theta, traces, pe, edge_plaq, edge_slot, betas, N, z, eps_theta, unif, out, obs_edges):
    """Run len(z) conditional sweeps; record theta at ``obs_edges`` after each sweep."""
    acc = 0
    for t in range(z.shape[0]):
        acc += sweep_theta(theta, traces, pe, edge_plaq, edge_slot, betas, N, z[t], eps_theta, unif[t])
        for j in range(obs_edges.shape[0]):
            out[t, j] = theta[obs_edges[j]]
    return acc
