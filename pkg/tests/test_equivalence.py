import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hcam.dgp import Multilinear, RadialBumps, SemModel, analytic_log_density, sample_gp_function, sample_sem
from hcam.equivalence import (
    DiscreteDist,
    anova_decompose,
    anova_log_decompose,
    enumerate_hdags,
    enumerate_hmec,
    generalized_precision,
    hdag_discrete_dist,
    hdag_fingerprint,
    hmec_report,
    inside_immoralization,
    mixed_partial_norm,
    multi_independent,
    omega_T,
    random_theta_tables,
    top_component,
)
from hcam.exceptions import DimensionGuard, InvalidConfig, NumericalInstability
from hcam.graphs import Dag, HDag, Hyperedge, hierarchical_closure, hmec_key, reduced_dag
from oracles import all_dags, classical_mec_key


def xor_triple(c=1.0):
    s = np.array([-1.0, 1.0])
    return DiscreteDist.from_log(c * s[:, None, None] * s[None, :, None] * s[None, None, :])


def random_dist(rng, shape=(2, 2, 2)):
    return DiscreteDist.from_log(rng.standard_normal(shape))


def classical_ci(dist, i, j, Z, tol=1e-9):
    """p(x_i, x_j, z) p(z) == p(x_i, z) p(x_j, z) entrywise."""
    def marg(keep):
        drop = tuple(a for a in range(dist.d) if a not in keep)
        return dist.table.sum(axis=drop, keepdims=True) if drop else dist.table

    Z = tuple(Z)
    lhs = marg((i, j) + Z) * marg(Z)
    rhs = marg((i,) + Z) * marg((j,) + Z)
    return bool(np.max(np.abs(lhs - rhs)) <= tol)


class TestDiscreteDist:
    def test_validation(self):
        with pytest.raises(ValueError):
            DiscreteDist(np.array([0.5, 0.5, 0.0]))
        with pytest.raises(ValueError):
            DiscreteDist(np.array([0.6, 0.6]))
        with pytest.raises(ValueError):
            DiscreteDist(np.ones((1, 2)) / 2)

    def test_from_log_normalises(self, rng):
        d = random_dist(rng, (2, 3))
        assert d.table.sum() == pytest.approx(1.0, abs=1e-12)
        assert d.alphabets == (2, 3) and d.d == 2


class TestAnova:
    def test_product_has_no_interactions(self, rng):
        p = np.einsum("i,j,k->ijk", *[rng.dirichlet(np.ones(k)) for k in (2, 3, 2)])
        dec = anova_log_decompose(DiscreteDist(p / p.sum()))
        for S in [(0, 1), (0, 2), (1, 2), (0, 1, 2)]:
            assert np.max(np.abs(dec[S])) < 1e-12

    def test_xor_triple(self):
        dist = xor_triple()
        dec = anova_log_decompose(dist)
        assert dec.norm((0, 1, 2)) == pytest.approx(1.0)
        for S in [(0, 1), (0, 2), (1, 2)]:
            assert np.max(np.abs(dec[S])) < 1e-12
        # pairwise marginals are uniform
        assert np.allclose(dist.table.sum(axis=2), 0.25)

    @given(st.integers(0, 2**32 - 1), st.lists(st.integers(2, 3), min_size=1, max_size=4))
    def test_reconstruction_and_zero_marginals(self, seed, shape):
        f = np.random.default_rng(seed).standard_normal(shape)
        dec = anova_decompose(f)
        assert np.max(np.abs(dec.reconstruct() - f)) <= 1e-10
        for S, comp in dec.components.items():
            for a in S:
                assert np.max(np.abs(comp.mean(axis=a))) <= 1e-12

    def test_top_component_sums_supersets(self, rng):
        f = rng.standard_normal((2, 3, 2))
        dec = anova_decompose(f)
        want = dec[(0, 2)] + dec[(0, 1, 2)]
        np.testing.assert_allclose(top_component(f, (0, 2)), want, atol=1e-12)


class TestMultiIndependence:
    def test_examples(self):
        indep = DiscreteDist(np.full((2, 2, 2), 1 / 8))
        assert multi_independent(indep, (0, 1, 2))
        assert not multi_independent(xor_triple(), (0, 1, 2))
        assert multi_independent(xor_triple(), (0, 1))

    def test_collider_activation(self, rng):
        h = HDag(3, [Hyperedge((0,), 2), Hyperedge((1,), 2)])
        dist = hdag_discrete_dist(h, random_theta_tables(h, (2, 2, 2), rng), (2, 2, 2))
        assert multi_independent(dist, (0, 1))
        assert not multi_independent(dist, (0, 1), (2,))

    def test_three_way_collider(self, rng):
        h = hierarchical_closure([Hyperedge((0, 1), 2)], 3)
        dist = hdag_discrete_dist(h, random_theta_tables(h, (2, 2, 2), rng), (2, 2, 2))
        assert not multi_independent(dist, (0, 1, 2))

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            multi_independent(xor_triple(), (0,))
        with pytest.raises(ValueError):
            multi_independent(xor_triple(), (0, 1), (1,))

    def test_pairwise_agrees_with_classical_ci(self):
        rng = np.random.default_rng(0)
        dists = [random_dist(rng) for _ in range(20)]
        # structured tables where some independences hold exactly
        for g in all_dags(3):
            h = g.to_hdag()
            dists.append(hdag_discrete_dist(h, random_theta_tables(h, (2, 2, 2), rng), (2, 2, 2)))
        checked = agree = 0
        for dist in dists:
            for i, j in itertools.combinations(range(3), 2):
                k = 3 - i - j
                for Z in [(), (k,)]:
                    checked += 1
                    agree += multi_independent(dist, (i, j), Z) == classical_ci(dist, i, j, Z)
        assert agree == checked
        assert checked == 6 * len(dists)


class TestOmega:
    def test_product_zero(self, rng):
        p = np.einsum("i,j->ij", rng.dirichlet([1, 1]), rng.dirichlet([1, 1, 1]))
        assert omega_T(DiscreteDist(p / p.sum()), (0, 1)) < 1e-12

    def test_xor_positive(self):
        assert omega_T(xor_triple(), (0, 1, 2)) > 0.5

    def test_positive_iff_inside_immoralization(self):
        rng = np.random.default_rng(1)
        for h in enumerate_hdags(3, 2, "all"):
            for _ in range(20):
                dist = hdag_discrete_dist(h, random_theta_tables(h, (2, 2, 2), rng), (2, 2, 2))
                for k in (2, 3):
                    for T in itertools.combinations(range(3), k):
                        assert (omega_T(dist, T) > 1e-9) == inside_immoralization(h, T)

    def test_singleton_only_no_three_way(self):
        rng = np.random.default_rng(2)
        for h in enumerate_hdags(3, 1, "singleton"):
            dist = hdag_discrete_dist(h, random_theta_tables(h, (2, 2, 2), rng), (2, 2, 2))
            assert np.max(np.abs(anova_log_decompose(dist)[(0, 1, 2)])) < 1e-9


class TestHdagDist:
    def test_empty_uniform(self):
        dist = hdag_discrete_dist(HDag(3), {}, (2, 3, 2))
        np.testing.assert_allclose(dist.table, 1 / 12)

    def test_missing_table(self):
        h = HDag(2, [Hyperedge((0,), 1)])
        with pytest.raises(ValueError):
            hdag_discrete_dist(h, {}, (2, 2))

    def test_wrong_shape(self):
        h = HDag(2, [Hyperedge((0,), 1)])
        with pytest.raises(ValueError):
            hdag_discrete_dist(h, {((0,), 1): np.zeros((3, 2))}, (2, 2))

    def test_conditionals_match_tables(self, rng):
        h = HDag(2, [Hyperedge((0,), 1)])
        tab = rng.standard_normal((2, 3))
        dist = hdag_discrete_dist(h, {((0,), 1): tab}, (2, 3))
        cond = dist.table / dist.table.sum(axis=1, keepdims=True)
        want = np.exp(tab) / np.exp(tab).sum(axis=1, keepdims=True)
        np.testing.assert_allclose(cond, want, atol=1e-12)
        np.testing.assert_allclose(dist.table.sum(axis=1), 0.5, atol=1e-12)

    def test_theta_floor(self, rng):
        h = hierarchical_closure([Hyperedge((0, 1), 2)], 3)
        for key, tab in random_theta_tables(h, (2, 3, 2), rng).items():
            assert np.sqrt(np.mean(top_component(tab, range(tab.ndim)) ** 2)) >= 0.05


class TestHmec:
    def test_classical_mec_on_three_nodes(self):
        part = enumerate_hmec(3, 1, "singleton")
        assert sum(part.sizes()) == 25 and part.n_classes == 11
        dags = {g.to_hdag(): g for g in all_dags(3)}
        for h1, h2 in itertools.combinations(dags, 2):
            same = part.class_of(h1) == part.class_of(h2)
            assert same == (classical_mec_key(dags[h1]) == classical_mec_key(dags[h2]))

    def test_full_four_nodes_single_class(self):
        part = enumerate_hmec(4, 3, "full")
        assert part.sizes() == [24]

    def test_chain_vs_collider(self):
        chain = HDag(3, [Hyperedge((0,), 1), Hyperedge((1,), 2)])
        coll = HDag(3, [Hyperedge((0,), 2), Hyperedge((1,), 2)])
        part = enumerate_hmec(3, 1, "singleton")
        assert part.class_of(chain) != part.class_of(coll)
        assert hdag_fingerprint(chain, 5, 0) != hdag_fingerprint(coll, 5, 0)

    def test_fingerprints_match_structure_on_three_nodes(self):
        hs = enumerate_hdags(3, 2, "all")
        fps = [hdag_fingerprint(h, 20, np.random.default_rng(k)) for k, h in enumerate(hs)]
        for a, b in itertools.combinations(range(len(hs)), 2):
            assert (hmec_key(hs[a]) == hmec_key(hs[b])) == (fps[a] == fps[b])

    def test_guards(self):
        with pytest.raises(DimensionGuard):
            enumerate_hdags(5)
        with pytest.raises(InvalidConfig):
            enumerate_hdags(3, 2, "other")

    def test_report_stable(self):
        a = hmec_report(enumerate_hmec(3, 2))
        b = hmec_report(enumerate_hmec(3, 2))
        assert a == b
        assert a.splitlines()[0] == f"classes={enumerate_hmec(3, 2).n_classes} members=34"

    def test_partition_consistent_with_reduced_mec(self):
        for cls in enumerate_hmec(3, 2).classes:
            keys = {classical_mec_key(reduced_dag(h)) for h in cls}
            assert len(keys) == 1


def gaussian_logp(theta):
    theta = np.asarray(theta)

    def f(X):
        return -0.5 * np.einsum("ni,ij,nj->n", X, theta, X)

    return f


class TestGeneralizedPrecision:
    def test_bivariate_gaussian(self, rng):
        theta = np.array([[2.0, -0.7], [-0.7, 1.5]])
        P = rng.standard_normal((200, 2))
        assert generalized_precision(gaussian_logp(theta), 0, 1, P) == pytest.approx(0.7, rel=0.01)

    def test_independent(self, rng):
        theta = np.diag([1.0, 2.0, 0.5])
        P = rng.standard_normal((100, 3))
        for i, j in itertools.combinations(range(3), 2):
            assert generalized_precision(gaussian_logp(theta), i, j, P) <= 1e-4

    def test_v_structure_coparents(self, rng):
        bump = RadialBumps((0,), np.array([0.0]), np.array([1.0]), np.array([2.0]))
        bump1 = RadialBumps((1,), np.array([0.5]), np.array([0.8]), np.array([-1.5]))
        h = HDag(3, [Hyperedge((0,), 2), Hyperedge((1,), 2)])
        m = SemModel(h, {Hyperedge((0,), 2): bump, Hyperedge((1,), 2): bump1}, np.ones(3))
        P = rng.standard_normal((200, 3))
        assert generalized_precision(lambda Q: analytic_log_density(m, Q), 0, 1, P) > 1e-2

    def test_unstable_stencil(self):
        with pytest.raises(NumericalInstability):
            generalized_precision(lambda Q: np.abs(Q[:, 0] - Q[:, 1]) ** 0.5 * 1e3, 0, 1, np.zeros((1, 2)))

    def test_same_index(self):
        with pytest.raises(ValueError):
            generalized_precision(gaussian_logp(np.eye(2)), 0, 0, np.zeros((1, 2)))


class TestMixedPartial:
    def test_empty_graph(self, rng):
        m = SemModel(HDag(2), {}, np.ones(2))
        assert mixed_partial_norm(m, (0, 1), rng.standard_normal((50, 2))) <= 1e-5

    def test_multilinear_body(self, rng):
        h = hierarchical_closure([Hyperedge((0, 1), 2)], 3)
        beta = 0.6
        m = SemModel(h, {Hyperedge((0, 1), 2): Multilinear((0, 1), beta)}, np.ones(3))
        P = rng.standard_normal((100, 3))
        # d3 logp / dx0 dx1 dx2 = beta exactly for this model
        assert mixed_partial_norm(m, (0, 1, 2), P) == pytest.approx(beta, rel=1e-3)
        assert mixed_partial_norm(m, (0, 1), P) >= 1e-3

    def test_outside_immoralization_vanishes(self, rng):
        m = sample_sem(5, 1.5, 2, 3, smooth=True)
        P = rng.standard_normal((30, 5))
        for k in (2, 3):
            for R in itertools.combinations(range(5), k):
                if not inside_immoralization(m.hdag, R):
                    assert mixed_partial_norm(m, R, P) <= 1e-5

    def test_rejects_gp_terms(self):
        m = SemModel(Dag(2, [(0, 1)]).to_hdag(), {Hyperedge((0,), 1): sample_gp_function(0)}, np.ones(2))
        with pytest.raises(NumericalInstability):
            mixed_partial_norm(m, (0, 1), np.zeros((1, 2)))

    def test_order_bounds(self):
        m = SemModel(HDag(5), {}, np.ones(5))
        with pytest.raises(ValueError):
            mixed_partial_norm(m, (0,), np.zeros((1, 5)))
        with pytest.raises(ValueError):
            mixed_partial_norm(m, range(5), np.zeros((1, 5)))
