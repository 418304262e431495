"""Actions, activities, base measures and derivatives of the U(1) x SU(N) model.

Field conventions
-----------------
* A gauge field is an array ``(E, N, N)`` indexed by positive edge.
* An angle field is an array ``(E,)`` with values in [0, 2pi).
* Plaquette quantities are indexed by positive plaquette in the canonical
  traversal ``e1 e2 e3^-1 e4^-1``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .algebra import dagger, project_su, project_u, exp_map
from .lattice import LatticeGeometry, PlaquetteRef, PLAQ_SIGNS
from .quadrature import ThetaQuadrature, phi_from_trace

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class CouplingConfig:
    """Uniform coupling ``beta`` or a per-plaquette array ``beta_map`` (indexed by plaquette)."""

    N: int
    beta: float | None = None
    beta_map: tuple[float, ...] | None = None
    c_d_star: float = 1.0

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if (self.beta is None) == (self.beta_map is None):
            raise ValueError("give exactly one of beta or beta_map")
        if self.beta is not None and self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.beta_map is not None:
            bm = tuple(float(b) for b in self.beta_map)
            if min(bm, default=0.0) < 0:
                raise ValueError("all beta_p must be >= 0")
            object.__setattr__(self, "beta_map", bm)
        if self.c_d_star <= 0:
            raise ValueError("c_d_star must be positive")

    @classmethod
    def uniform(cls, N: int, beta: float, c_d_star: float = 1.0) -> "CouplingConfig":
        return cls(N=N, beta=float(beta), c_d_star=c_d_star)

    @classmethod
    def per_plaquette(cls, N: int, betas, c_d_star: float = 1.0) -> "CouplingConfig":
        return cls(N=N, beta_map=tuple(np.asarray(betas, dtype=float)), c_d_star=c_d_star)

    @property
    def mode(self) -> str:
        return "uniform" if self.beta is not None else "per-plaquette"

    def betas(self, geom: LatticeGeometry) -> np.ndarray:
        if self.beta is not None:
            return np.full(geom.n_plaquettes, float(self.beta))
        bm = np.asarray(self.beta_map, dtype=float)
        if len(bm) != geom.n_plaquettes:
            raise ValueError(f"beta_map has {len(bm)} entries, lattice has {geom.n_plaquettes} plaquettes")
        return bm

    @property
    def sup_beta(self) -> float:
        return float(self.beta) if self.beta is not None else float(max(self.beta_map, default=0.0))

    def with_plaquette(self, geom: LatticeGeometry, p: int, value: float) -> "CouplingConfig":
        b = self.betas(geom).copy()
        b[p] = value
        return CouplingConfig.per_plaquette(self.N, b, self.c_d_star)


@dataclass
class DecomposedConfig:
    theta: np.ndarray
    Q: np.ndarray

    def embedded(self) -> np.ndarray:
        N = self.Q.shape[-1]
        return np.exp(1j * self.theta / N)[:, None, None] * self.Q


def beta_star(d: int) -> float:
    return 10.0 ** (-6 * d)


def k_tilde(N: int, beta: float, c_d_star: float = 1.0) -> float:
    if c_d_star <= 0:
        raise ValueError("c_d_star must be positive")
    return (N + 2) / 2 - 1 - c_d_star * N * beta


@dataclass(frozen=True)
class RegimeConstants:
    d: int
    N: int
    beta: float
    c_d_star: float = 1.0
    beta_star: float = field(init=False)
    phi_sup_bound: float = field(init=False)
    cluster_base: float = field(init=False)
    decay_exponent: float = field(init=False)
    k_tilde: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "beta_star", beta_star(self.d))
        object.__setattr__(self, "phi_sup_bound", 10.0 ** (4 - 6 * self.d))
        object.__setattr__(self, "cluster_base", 40.0 ** self.d)
        object.__setattr__(self, "decay_exponent", 2 * self.d * np.log(10.0))
        object.__setattr__(self, "k_tilde", k_tilde(self.N, self.beta, self.c_d_star))

    @property
    def beta_tilde(self) -> float:
        return min(1.0 / (3 * self.c_d_star), self.beta_star)

    @property
    def in_regime(self) -> bool:
        return self.N > 8 * np.pi and self.beta <= self.beta_star


# ---------------------------------------------------------------------------
# plaquettes and actions

def plaquette_products(geom: LatticeGeometry, U: np.ndarray) -> np.ndarray:
    """(P, N, N) holonomies of all canonical positive plaquettes."""
    pe = geom.plaq_edges
    return U[pe[:, 0]] @ U[pe[:, 1]] @ dagger(U[pe[:, 2]]) @ dagger(U[pe[:, 3]])


def plaquette_traces(geom: LatticeGeometry, U: np.ndarray) -> np.ndarray:
    return np.trace(plaquette_products(geom, U), axis1=-2, axis2=-1)


def plaquette_product(geom: LatticeGeometry, U: np.ndarray, p: PlaquetteRef) -> np.ndarray:
    """Ordered product along the traversal of an oriented, possibly rotated plaquette."""
    out = np.eye(U.shape[-1], dtype=complex)
    for e in p.edges():
        M = U[geom.edge_index(e)]
        out = out @ (M if e.orientation == 1 else dagger(M))
    return out


def theta_plaquettes(geom: LatticeGeometry, theta: np.ndarray) -> np.ndarray:
    """theta_p = sum_e sgn(e, p) theta_e for all canonical plaquettes."""
    return np.asarray(theta)[..., geom.plaq_edges] @ PLAQ_SIGNS.astype(float)


def theta_p(geom: LatticeGeometry, theta: np.ndarray, p: PlaquetteRef) -> float:
    return float(sum(e.orientation * theta[geom.edge_index(e)] for e in p.edges()))


def wilson_action(geom: LatticeGeometry, U: np.ndarray, coupling: CouplingConfig) -> float:
    """sum_p N beta_p Re Tr Q_p."""
    b = coupling.betas(geom)
    return float(np.sum(coupling.N * b * np.real(plaquette_traces(geom, U))))


def decomposed_action(geom: LatticeGeometry, theta: np.ndarray, Q: np.ndarray,
                      coupling: CouplingConfig) -> float:
    """sum_p N beta_p Re(e^{i theta_p/N} Tr Q_p)."""
    N = coupling.N
    b = coupling.betas(geom)
    tp = theta_plaquettes(geom, theta)
    return float(np.sum(N * b * np.real(np.exp(1j * tp / N) * plaquette_traces(geom, Q))))


def phi(theta_p, Q_p, N: int, beta: float):
    """Cluster activity; ``Q_p`` may be a matrix (stack) or a precomputed trace."""
    Q_p = np.asarray(Q_p)
    tr = np.trace(Q_p, axis1=-2, axis2=-1) if Q_p.ndim >= 2 else Q_p
    return phi_from_trace(theta_p, tr, N, beta)


def phi_kernel(theta_p, N: int):
    """|e^{i theta/N} - 1 - i theta/N|."""
    z = np.asarray(theta_p) / N
    return np.abs(np.expm1(1j * z) - 1j * z)


# ---------------------------------------------------------------------------
# base measures nu_e

def nu_rates(geom: LatticeGeometry, Q: np.ndarray, coupling: CouplingConfig,
             traces: np.ndarray | None = None) -> np.ndarray:
    """a_e = -sum_p beta_p sgn(e, p) Im Tr Q_p."""
    if traces is None:
        traces = plaquette_traces(geom, Q)
    contrib = -coupling.betas(geom)[:, None] * PLAQ_SIGNS[None, :] * np.imag(traces)[:, None]
    a = np.zeros(geom.n_edges)
    np.add.at(a, geom.plaq_edges.ravel(), contrib.ravel())
    return a


def nu_normalizer(a):
    """Z = (e^{2 pi a} - 1)/a, with a four-term Taylor series for |a| < 1e-6."""
    a = np.asarray(a, dtype=float)
    T = TWO_PI
    series = T + T ** 2 * a / 2 + T ** 3 * a ** 2 / 6 + T ** 4 * a ** 3 / 24
    with np.errstate(divide="ignore", invalid="ignore"):
        exact = np.expm1(T * a) / a
    return np.where(np.abs(a) < 1e-6, series, exact)


def nu_density(theta, a):
    """Normalized density of nu_e on [0, 2pi)."""
    return np.exp(np.asarray(a) * np.asarray(theta)) / nu_normalizer(a)


def nu_mean(a):
    """Analytic mean of the truncated exponential on [0, 2pi)."""
    a = np.asarray(a, dtype=float)
    T = TWO_PI
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        exact = T / (-np.expm1(-T * a)) - 1.0 / a
    series = T / 2 + a * T ** 2 / 12 - a ** 3 * T ** 4 / 720
    return np.where(np.abs(a) < 1e-4, series, exact)


def nu_sample(a, rng: np.random.Generator, size=None) -> np.ndarray:
    """Inverse-CDF draws theta = log(1 + u (e^{2 pi a} - 1)) / a."""
    a = np.asarray(a, dtype=float)
    u = rng.random(size if size is not None else a.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        exact = np.log1p(u * np.expm1(TWO_PI * a)) / a
    out = np.where(np.abs(a) < 1e-12, TWO_PI * u, exact)
    return np.clip(out, 0.0, np.nextafter(TWO_PI, 0.0))


# ---------------------------------------------------------------------------
# gradients

def rotated_holonomies(geom: LatticeGeometry, U: np.ndarray) -> np.ndarray:
    """(P, 4, N, N): R[p, s] is the holonomy of p read from traversal slot s."""
    pe = geom.plaq_edges
    M = [U[pe[:, 0]], U[pe[:, 1]], dagger(U[pe[:, 2]]), dagger(U[pe[:, 3]])]
    R = [M[s] @ M[(s + 1) % 4] @ M[(s + 2) % 4] @ M[(s + 3) % 4] for s in range(4)]
    return np.stack(R, axis=1)


def gradient_from_phases(geom: LatticeGeometry, U: np.ndarray, weights: np.ndarray,
                         flavor: str = "su") -> np.ndarray:
    """Right-trivialized gradient A_e (E, N, N) of sum_p Re(w_p Tr Q_p).

    For complex plaquette weights ``w_p`` the derivative of Re(w Tr Q_p) along
    Q_e -> exp(tX) Q_e is <X, proj(conj(w) (Q_e C)^*)> when e is traversed
    forward and -<X, proj(conj(w) Q_e C^*)> when traversed backward, with C
    the product of the remaining traversal matrices after e.
    """
    proj = project_su if flavor == "su" else project_u
    R = rotated_holonomies(geom, U)
    pe = geom.plaq_edges
    cw = np.conj(np.asarray(weights, dtype=complex))
    A = np.zeros_like(U, dtype=complex)
    for s in range(4):
        e = pe[:, s]
        if PLAQ_SIGNS[s] == 1:
            term = cw[:, None, None] * dagger(R[:, s])
        else:
            # R = Q_e^* C  =>  Q_e C^* = Q_e R^* Q_e^*
            Qe = U[e]
            term = -cw[:, None, None] * (Qe @ dagger(R[:, s]) @ dagger(Qe))
        np.add.at(A, e, proj(term))
    return A


def grad_wilson(geom: LatticeGeometry, U: np.ndarray, coupling: CouplingConfig,
                e: int | None = None, flavor: str = "su") -> np.ndarray:
    """Gradient of the Wilson action as tangent vectors A_e Q_e (all edges, or edge ``e``)."""
    w = coupling.N * coupling.betas(geom)
    A = gradient_from_phases(geom, U, w, flavor)
    G = A @ U
    return G if e is None else G[geom.edge_index(e)]


def quadrature_for(geom: LatticeGeometry, Q: np.ndarray, coupling: CouplingConfig,
                   nodes: int = 32, fixed_theta=None) -> ThetaQuadrature:
    return ThetaQuadrature(geom, plaquette_traces(geom, Q), coupling.betas(geom), coupling.N,
                           nodes=nodes, fixed_theta=fixed_theta)


def marginal_action(geom: LatticeGeometry, Q: np.ndarray, coupling: CouplingConfig,
                    nodes: int = 32) -> float:
    """S~(Q) = log int exp(S_U(theta, Q)) dtheta by tensor quadrature."""
    quad = quadrature_for(geom, Q, coupling, nodes)
    facs, shift = [], 0.0
    for p in range(geom.n_plaquettes):
        f, s = quad.wilson_factor(p)
        facs.append(f)
        shift += s
    val = np.real(quad.integrate(facs, quad.lebesgue_weights(range(geom.n_edges))))
    return float(np.log(val) + shift)


def plaquette_phase_means(geom: LatticeGeometry, Q: np.ndarray, coupling: CouplingConfig,
                          nodes: int = 32, quad: ThetaQuadrature | None = None) -> np.ndarray:
    """m_p = E[e^{i theta_p/N} | Q] for every plaquette, by quadrature."""
    quad = quad or quadrature_for(geom, Q, coupling, nodes)
    facs = [quad.wilson_factor(p)[0] for p in range(geom.n_plaquettes)]
    w = quad.lebesgue_weights(range(geom.n_edges))
    Z = quad.integrate(facs, w)
    out = np.empty(geom.n_plaquettes, dtype=complex)
    for p in range(geom.n_plaquettes):
        f = facs[p]
        ph = quad.phase_factor(p)
        out[p] = quad.integrate(facs[:p] + [type(f)(f.edges, f.tensor * ph.tensor)] + facs[p + 1:], w) / Z
    return out


@dataclass
class GradientEstimate:
    tangent: np.ndarray   # (E, N, N) values A_e Q_e
    stderr: np.ndarray    # (E,) standard error of |A_e| (0 for quadrature)
    method: str

    @property
    def algebra(self) -> np.ndarray:
        return self.tangent

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.tangent, axis=(-2, -1))


def grad_marginal_from_means(geom: LatticeGeometry, Q: np.ndarray, coupling: CouplingConfig,
                             means: np.ndarray) -> np.ndarray:
    """Gradient of S~ (tangent vectors) given m_p = E[e^{i theta_p/N} | Q]."""
    w = coupling.N * coupling.betas(geom) * means
    return gradient_from_phases(geom, Q, w, "su") @ Q


def grad_marginal(geom: LatticeGeometry, Q: np.ndarray, coupling: CouplingConfig,
                  method: str = "quadrature", nodes: int = 32, theta_samples: np.ndarray | None = None,
                  n_batches: int = 16) -> GradientEstimate:
    """Gradient of the marginal action S~ at Q.

    ``method='quadrature'`` evaluates m_p exactly on small lattices.
    ``method='mc'`` averages over conditional angle samples ``theta_samples``
    (shape (S, E)) and reports batch-means standard errors of each |A_e|.
    """
    if coupling.sup_beta == 0.0:
        return GradientEstimate(np.zeros_like(Q, dtype=complex), np.zeros(geom.n_edges), method)
    if method == "quadrature":
        m = plaquette_phase_means(geom, Q, coupling, nodes)
        return GradientEstimate(grad_marginal_from_means(geom, Q, coupling, m), np.zeros(geom.n_edges), method)
    if method != "mc":
        raise ValueError(f"unknown gradient method {method!r}")
    if theta_samples is None or len(theta_samples) < n_batches:
        raise ValueError("mc gradient needs at least n_batches theta samples")
    ph = np.exp(1j * theta_plaquettes(geom, np.asarray(theta_samples)) / coupling.N)
    G = grad_marginal_from_means(geom, Q, coupling, ph.mean(axis=0))
    batches = np.array_split(ph, n_batches)
    comps = np.array([np.linalg.norm(grad_marginal_from_means(geom, Q, coupling, b.mean(axis=0)), axis=(-2, -1))
                      for b in batches])
    se = comps.std(axis=0, ddof=1) / np.sqrt(n_batches)
    return GradientEstimate(G, se, method)


def hessian_probe(geom: LatticeGeometry, Q: np.ndarray, coupling: CouplingConfig,
                  X: np.ndarray, h: float = 1e-3, nodes: int = 32) -> float:
    """Second difference of S~ along t -> exp(tX) Q, divided by h^2.

    ``X`` holds the su(N) components (E, N, N) of the tangent vector v = X Q.
    """
    if h < 1e-5:
        warnings.warn("hessian_probe step below 1e-5: expect cancellation error", RuntimeWarning)
    if coupling.sup_beta == 0.0:
        return 0.0
    Up = exp_map(h * X) @ Q
    Um = exp_map(-h * X) @ Q
    s0 = marginal_action(geom, Q, coupling, nodes)
    sp = marginal_action(geom, Up, coupling, nodes)
    sm = marginal_action(geom, Um, coupling, nodes)
    return (sp - 2 * s0 + sm) / h ** 2


def decomposition_check(geom: LatticeGeometry, theta: np.ndarray, Q: np.ndarray,
                        coupling: CouplingConfig) -> tuple[float, float]:
    """Return (log lhs, log rhs) of exp(S_U) = prod(1+phi) prod_e e^{a_e theta_e} exp(S_SU)."""
    N = coupling.N
    tr = plaquette_traces(geom, Q)
    tp = theta_plaquettes(geom, theta)
    b = coupling.betas(geom)
    lhs = decomposed_action(geom, theta, Q, coupling)
    rhs = (np.sum(np.log1p(phi_from_trace(tp, tr, N, b)))
           + np.sum(nu_rates(geom, Q, coupling, tr) * theta)
           + np.sum(N * b * np.real(tr)))
    return lhs, float(rhs)
