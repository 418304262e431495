"""Gauss-Legendre tensor quadrature over edge angles for a fixed SU(N) field.

The integrand over theta in [0, 2pi)^E is a product of plaquette factors, each
depending on four edge angles. We store each factor as a small tensor with one
axis per free edge and contract the network with ``np.einsum``, so the cost
is set by the lattice treewidth rather than n^E.
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .lattice import LatticeGeometry, PLAQ_SIGNS

TWO_PI = 2.0 * np.pi
_LETTERS = string.ascii_letters


class QuadratureLimitError(RuntimeError):
    """The requested integral exceeds the configured dimension or memory cap."""


@dataclass
class Factor:
    edges: tuple[int, ...]
    tensor: np.ndarray


def gauss_legendre(n: int, a: float = 0.0, b: float = TWO_PI) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (b + a), 0.5 * (b - a) * w


_PATH_CACHE: dict = {}


def contract(factors: Sequence[Factor], weights: dict[int, np.ndarray],
             max_intermediate: float = 6e7, max_flops: float = 2e10) -> complex:
    """Sum over the node grid of prod(factors) * prod(weights).

    Every edge that appears in a factor must have a weight vector. Edges with a
    weight but no factor contribute sum(weight).
    """
    edges = sorted(weights)
    if len(edges) > len(_LETTERS):
        raise QuadratureLimitError(f"{len(edges)} integration dimensions exceed the cap")
    letter = {e: _LETTERS[i] for i, e in enumerate(edges)}
    terms, ops = [], []
    for f in factors:
        if f.tensor.ndim != len(f.edges):
            raise ValueError("factor rank does not match its edge list")
        terms.append("".join(letter[e] for e in f.edges))
        ops.append(f.tensor)
    for e in edges:
        terms.append(letter[e])
        ops.append(weights[e])
    subs = ",".join(terms) + "->"
    key = (subs, tuple(o.shape for o in ops))
    path = _PATH_CACHE.get(key)
    if path is None:
        path, info = np.einsum_path(subs, *ops, optimize="greedy")
        largest = float(str(info).split("Largest intermediate:")[1].split()[0])
        flops = float(str(info).split("Optimized FLOP count:")[1].split()[0])
        if largest > max_intermediate:
            raise QuadratureLimitError(
                f"quadrature intermediate of {largest:.3g} elements exceeds cap {max_intermediate:.3g}")
        # a greedy path can keep intermediates small yet finish with one huge joint sum
        if flops > max_flops:
            raise QuadratureLimitError(f"quadrature needs {flops:.3g} operations, cap is {max_flops:.3g}")
        _PATH_CACHE[key] = path
    return np.einsum(subs, *ops, optimize=path)


class ThetaQuadrature:
    """Angle integrals on a lattice with the SU(N) field held fixed.

    ``fixed_theta`` maps edge index to a boundary angle; all other edges are
    integrated over [0, 2pi) with ``nodes`` Gauss-Legendre points.
    ``plaq_traces`` are Tr Q_p for the canonical plaquettes and ``betas`` the
    per-plaquette couplings.
    """

    def __init__(self, geom: LatticeGeometry, plaq_traces: np.ndarray, betas: np.ndarray, N: int,
                 nodes: int = 32, fixed_theta: dict[int, float] | None = None,
                 max_intermediate: float = 6e7):
        self.geom = geom
        self.N = int(N)
        self.traces = np.asarray(plaq_traces, dtype=complex)
        self.betas = np.asarray(betas, dtype=float)
        self.nodes, self.gl_weights = gauss_legendre(nodes)
        self.n = int(nodes)
        self.fixed = {int(k): float(v) for k, v in (fixed_theta or {}).items()}
        self.free_edges = [e for e in range(geom.n_edges) if e not in self.fixed]
        self.max_intermediate = max_intermediate
        self._theta_cache: dict[int, Factor] = {}

    # ---- building blocks -------------------------------------------------
    def plaquette_angle(self, p: int) -> Factor:
        """theta_p on the grid of the plaquette's free edges."""
        if p in self._theta_cache:
            return self._theta_cache[p]
        edges = self.geom.plaq_edges[p]
        free = tuple(int(e) for e in edges if int(e) not in self.fixed)
        const = sum(s * self.fixed[int(e)] for e, s in zip(edges, PLAQ_SIGNS) if int(e) in self.fixed)
        grid = np.full((self.n,) * len(free), const, dtype=float)
        for axis, e in enumerate(free):
            s = PLAQ_SIGNS[list(edges).index(e)]
            shape = [1] * len(free)
            shape[axis] = self.n
            grid = grid + s * self.nodes.reshape(shape)
        out = Factor(free, grid)
        self._theta_cache[p] = out
        return out

    def wilson_factor(self, p: int) -> tuple[Factor, float]:
        """exp(N beta_p Re(e^{i theta_p/N} Tr Q_p)) scaled by exp(-shift); returns (factor, shift)."""
        th = self.plaquette_angle(p)
        c = self.N * self.betas[p]
        T = self.traces[p]
        shift = c * abs(T)
        val = np.exp(c * np.real(np.exp(1j * th.tensor / self.N) * T) - shift)
        return Factor(th.edges, val), shift

    def phase_factor(self, p: int) -> Factor:
        th = self.plaquette_angle(p)
        return Factor(th.edges, np.exp(1j * th.tensor / self.N))

    def phi_factor(self, p: int) -> Factor:
        th = self.plaquette_angle(p)
        return Factor(th.edges, phi_from_trace(th.tensor, self.traces[p], self.N, self.betas[p]))

    def one_plus_phi_factor(self, p: int) -> Factor:
        f = self.phi_factor(p)
        return Factor(f.edges, 1.0 + f.tensor)

    def observable_factor(self, fn: Callable, support: Iterable[int], Q: np.ndarray | None = None) -> Factor:
        """Evaluate ``fn(theta_full, Q)`` on the grid of its (free) support edges."""
        support = [int(e) for e in support]
        free = tuple(e for e in support if e not in self.fixed)
        k = len(free)
        theta = np.zeros((self.n,) * k + (self.geom.n_edges,))
        for e, v in self.fixed.items():
            theta[..., e] = v
        for axis, e in enumerate(free):
            shape = [1] * k
            shape[axis] = self.n
            theta[..., e] = self.nodes.reshape(shape)
        val = np.asarray(fn(theta, Q))
        return Factor(free, np.broadcast_to(val, (self.n,) * k).copy())

    # ---- measures --------------------------------------------------------
    def lebesgue_weights(self, edges: Iterable[int]) -> dict[int, np.ndarray]:
        return {int(e): self.gl_weights for e in edges if int(e) not in self.fixed}

    def nu_weights(self, edges: Iterable[int], rates: np.ndarray) -> dict[int, np.ndarray]:
        """Discrete nu_e weights, normalized to total mass one per edge."""
        out = {}
        for e in edges:
            e = int(e)
            if e in self.fixed:
                continue
            w = self.gl_weights * np.exp(rates[e] * (self.nodes - np.pi))
            out[e] = w / w.sum()
        return out

    def integrate(self, factors: Sequence[Factor], weights: dict[int, np.ndarray]) -> complex:
        need = {e for f in factors for e in f.edges}
        missing = need - set(weights)
        if missing:
            raise ValueError(f"edges {sorted(missing)} appear in factors without weights")
        return contract(factors, weights, self.max_intermediate)


def phi_from_trace(theta_p, trace, N: int, beta: float):
    """exp(N beta Re((e^{i theta/N} - 1 - i theta/N) Tr Q)) - 1, computed with expm1."""
    z = np.asarray(theta_p) / N
    # e^{iz} - 1 - iz with a series guard against cancellation for tiny z
    kern = np.where(np.abs(z) < 1e-4,
                    -(z ** 2) / 2 - 1j * z ** 3 / 6 + z ** 4 / 24,
                    np.expm1(1j * z) - 1j * z)
    return np.expm1(N * beta * np.real(kern * trace))
