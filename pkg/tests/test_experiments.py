import numpy as np
import pytest

from ymlattice.algebra import dagger, haar_sample
from ymlattice.experiments import (DecayFit, LargeNRow, LargeNTable, LoopIndex, central_plaquette,
                                   covariance_estimate, factorization_discrepancy, fit_decay, mass_gap_scan,
                                   plaquette_loop, plaquette_pairs_by_distance, pooled_variance, simulate,
                                   telescoping_bound, variance_bound, wilson_loop)
from ymlattice.lattice import LatticeGeometry, Loop
from ymlattice.model import CouplingConfig, plaquette_traces
from ymlattice.stats import EstimateWithError

G2 = LatticeGeometry(2, 2)


def test_wilson_loop_identity_and_plaquette(rng):
    U = np.broadcast_to(np.eye(3, dtype=complex), (G2.n_edges, 3, 3)).copy()
    loop = Loop.rectangle((-1, -1), (0, 1), (2, 2))
    assert wilson_loop(G2, U, loop) == pytest.approx(1.0)
    U = haar_sample(3, "u", rng, G2.n_edges)
    tr = plaquette_traces(G2, U) / 3
    for p in (0, 5, G2.n_plaquettes - 1):
        assert wilson_loop(G2, U, plaquette_loop(G2, p)) == pytest.approx(tr[p])


def test_wilson_loop_decomposed_matches_embedded(rng):
    N = 3
    th = rng.uniform(0, 2 * np.pi, G2.n_edges)
    Q = haar_sample(N, "su", rng, G2.n_edges)
    U = np.exp(1j * th / N)[:, None, None] * Q
    loop = Loop.rectangle((-2, -1), (0, 1), (3, 2))
    assert wilson_loop(G2, Q, loop, th) == pytest.approx(wilson_loop(G2, U, loop), abs=1e-12)


def test_wilson_loop_gauge_invariant_and_bounded(rng):
    N = 2
    U = haar_sample(N, "u", rng, G2.n_edges)
    G = haar_sample(N, "u", rng, G2.n_vertices)
    tail = [G2.vertex_index(v) for v in G2.edge_endpoints[:, 0]]
    head = [G2.vertex_index(v) for v in G2.edge_endpoints[:, 1]]
    V = G[tail] @ U @ dagger(G[head])
    li = LoopIndex.build(G2, Loop.rectangle((-2, -2), (0, 1), (3, 1)))
    assert wilson_loop(G2, U, li) == pytest.approx(wilson_loop(G2, V, li), abs=1e-12)
    stack = haar_sample(N, "u", rng, 50 * G2.n_edges).reshape(50, G2.n_edges, N, N)
    assert np.all(np.abs(wilson_loop(G2, stack, li)) <= 1 + 1e-12)


def test_central_plaquette_is_central():
    g = LatticeGeometry(3, 2)
    p = central_plaquette(g)
    assert tuple(g.plaq_axes[p]) == (0, 1)
    assert np.all(np.abs(g.vertex_coords[g.plaq_base[p]]) <= 1)


def test_fit_recovers_synthetic_rate():
    rng = np.random.default_rng(0)
    r = np.arange(6)
    errs = 0.02 * np.exp(-0.7 * r)
    covs = np.exp(-0.7 * r) * (1 + 0.02 * rng.standard_normal(6))
    fit = fit_decay(r, covs, errs)
    assert fit.status == "fit" and fit.rate == pytest.approx(0.7, rel=0.1)
    assert fit.slope_ci[0] <= fit.slope <= fit.slope_ci[1]


def test_fit_noise_floor_rules():
    fit = fit_decay([0, 1, 2], [1e-3, -1e-3, 5e-4], [1e-2, 1e-2, 1e-2])
    assert fit.status == "below noise floor" and fit.excluded == 3 and np.isnan(fit.rate)
    fit = fit_decay([0, 1, 2], [1.0, 0.5, 1e-4], [1e-2, 1e-2, 1e-2])
    assert fit.status == "insufficient points" and fit.used == [0.0, 1.0]
    assert "estimates" not in fit.as_dict()


def test_pairs_by_distance_increasing():
    g = LatticeGeometry(2, 4)
    pairs = plaquette_pairs_by_distance(g, [0, 1, 2, 3])
    assert [r for r, _, _ in pairs] == [0, 1, 2, 3]
    with pytest.raises(ValueError):
        plaquette_pairs_by_distance(g, [10])


def test_covariance_estimate_guards(rng):
    with pytest.raises(ValueError):
        covariance_estimate(np.ones(10), np.ones(10))
    x = rng.standard_normal(4096)
    assert covariance_estimate(x, np.zeros(4096)).mean == 0.0


def test_simulate_records_shapes():
    run = simulate(G2, CouplingConfig.uniform(2, 0.5), 64, seed=1, burn=50, loops=[plaquette_loop(G2, 3)],
                   measure_every=2)
    assert run.plaq.shape == (32, G2.n_plaquettes) and run.loops.shape == (32, 1)
    assert np.allclose(run.loops[:, 0], run.plaq[:, 3])
    assert 0 < run.acceptance < 1


def test_two_dimensional_plaquettes_uncorrelated():
    # on a free-boundary planar lattice the plaquette variables are independent
    run = simulate(LatticeGeometry(2, 1), CouplingConfig.uniform(2, 1.0), 20000, seed=3, burn=300)
    same = covariance_estimate(run.plaq[:, 0], run.plaq[:, 0])
    assert same.mean > 10 * same.stderr
    for q in (1, 2, 3):
        c = covariance_estimate(run.plaq[:, 0], run.plaq[:, q])
        assert abs(c.mean) < 4 * c.stderr


def test_mass_gap_scan_beta_zero_has_no_fit():
    fit = mass_gap_scan(LatticeGeometry(2, 3), CouplingConfig.uniform(2, 0.0), [0, 1, 2], n_sweeps=2048,
                        seed=0, burn=10)
    assert fit.status != "fit" and len(fit.estimates) == 3


def test_pooled_variance_and_bound(rng):
    x = rng.uniform(-1, 1, (40000, 4))
    v = pooled_variance(x)
    assert abs(v.mean - 1 / 3) < 4 * v.stderr
    assert variance_bound(4, 2, 10.0) == float("inf")
    assert variance_bound(4, 64, 0.01) == pytest.approx(16 / (64 * (32 - 0.64)))


def test_large_n_table_monotonicity():
    def row(N, v, s):
        return LargeNRow(N, EstimateWithError(v, s, 32, 1000), 0.0)
    assert LargeNTable([row(2, 1.0, 0.01), row(4, 0.5, 0.01)], -1, 0).strictly_decreasing()
    assert not LargeNTable([row(2, 1.0, 0.2), row(4, 0.9, 0.2)], -1, 0).strictly_decreasing()


def test_factorization_helpers(rng):
    a = rng.standard_normal(64000)
    b = rng.standard_normal(64000)
    ind = factorization_discrepancy([a, b])
    assert ind.mean < 4 * ind.stderr + 0.02
    same = factorization_discrepancy([a, a])
    assert same.mean == pytest.approx(np.var(a), rel=0.01)
    assert telescoping_bound([a, a]) == pytest.approx(np.var(a))
    assert telescoping_bound([a, b, a]) >= telescoping_bound([b, a])
