import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import dags
from hcam.dgp import (
    GP_GRID,
    Dataset,
    GpInterp,
    Multilinear,
    RadialBumps,
    SemModel,
    _rescale_multilinear,
    analytic_log_density,
    generate,
    node_log_density,
    sample_er_dag,
    sample_gp_function,
    sample_hdag,
    sample_multilinear_terms,
    sample_noise_variances,
    sample_sem,
)
from hcam.exceptions import DimensionMismatch, InvalidDensity
from hcam.graphs import Dag, HDag, Hyperedge, hierarchical_closure, reduced_dag


def product_model(beta=0.8, noise=(1.0, 1.0, 1.0)):
    h = hierarchical_closure([Hyperedge((0, 1), 2)], 3)
    return SemModel(h, {Hyperedge((0, 1), 2): Multilinear((0, 1), beta)}, np.array(noise))


class TestErdosRenyi:
    def test_zero_density(self, rng):
        assert not sample_er_dag(2, 0.0, rng).edges

    def test_infeasible(self, rng):
        with pytest.raises(InvalidDensity):
            sample_er_dag(4, 2.0, rng)
        with pytest.raises(InvalidDensity):
            sample_er_dag(1, 0.0, rng)

    def test_seeded(self):
        assert sample_er_dag(10, 2, 7) == sample_er_dag(10, 2, 7)

    def test_edge_count_concentrates(self):
        counts = [len(sample_er_dag(30, 4, s).edges) for s in range(100)]
        # sum of 435 Bernoulli(8/29) draws: sd per graph ~9.3, so sd of the mean ~0.93
        assert abs(np.mean(counts) - 120) < 4


class TestHdagSampling:
    def test_three_parents_pairs(self, rng):
        g = Dag(4, [(0, 3), (1, 3), (2, 3)])
        h = sample_hdag(g, 2, rng)
        assert h.maximal_tails(3) == [(0, 1), (0, 2), (1, 2)]

    def test_four_parents_cyclic(self):
        g = Dag(5, [(k, 4) for k in range(4)])
        for seed in range(10):
            tails = sample_hdag(g, 2, seed).maximal_tails(4)
            assert len(tails) == 4
            # each parent sits in exactly two consecutive pairs
            counts = np.bincount(np.concatenate(tails), minlength=4)
            assert counts.tolist() == [2, 2, 2, 2]

    def test_single_parent(self, rng):
        g = Dag(2, [(0, 1)])
        for order in (1, 2, 3):
            assert sample_hdag(g, order, rng).maximal_tails(1) == [(0,)]

    @given(dags(max_d=6), st.sampled_from([1, 2, 3]), st.integers(0, 2**16))
    def test_reduced_dag_preserved(self, g, order, seed):
        h = sample_hdag(g, order, seed)
        assert reduced_dag(h) == g
        assert h.max_order <= order
        if order == 1:
            assert h.is_singleton_only()


class TestShapeFunctions:
    def test_gp_hits_grid_values(self, rng):
        f = sample_gp_function(rng)
        assert np.array_equal(f(GP_GRID[:, None]), f.values)

    def test_gp_linear_extrapolation(self, rng):
        f = sample_gp_function(rng)
        slope = (f.values[-1] - f.values[-2]) / (GP_GRID[-1] - GP_GRID[-2])
        assert f(np.array([[7.0]]))[0] == pytest.approx(f.values[-1] + 2.0 * slope)

    def test_gp_seeds(self):
        assert np.array_equal(sample_gp_function(3).values, sample_gp_function(3).values)
        assert not np.array_equal(sample_gp_function(3).values, sample_gp_function(4).values)

    def test_gp_marginal_variance(self):
        rng = np.random.default_rng(0)
        vals = np.array([sample_gp_function(rng)(np.zeros((1, 1)))[0] for _ in range(2000)])
        assert vals.var() == pytest.approx(1.0, abs=0.1)

    def test_invalid_shapes(self):
        with pytest.raises(ValueError):
            GpInterp((0,), np.array([0.0, 0.0, 1.0]), np.zeros(3))
        with pytest.raises(ValueError):
            Multilinear((0,), 1.0)
        with pytest.raises(ValueError):
            Multilinear((0, 1), 0.0)
        with pytest.raises(ValueError):
            Multilinear((0, 1), float("nan"))

    def test_bumps_are_smooth(self):
        f = RadialBumps((0,), np.array([0.0]), np.array([1.0]), np.array([2.0]))
        assert f(np.zeros((1, 1)))[0] == pytest.approx(2.0)


class TestMultilinearCoefficients:
    def test_rescale_constants(self):
        assert _rescale_multilinear(1.0, 2, 1) == pytest.approx(1 / math.sqrt(3))
        assert _rescale_multilinear(1.5, 3, 3) == pytest.approx(0.2236, abs=1e-4)

    def test_raw_support(self):
        rng = np.random.default_rng(1)
        raw = [abs(sample_multilinear_terms(5, [(0, 1)], rng)[(0, 1)]) * math.sqrt(3) for _ in range(10_000)]
        assert 0.5 <= min(raw) and max(raw) <= 2.0

    def test_signs_mixed(self):
        rng = np.random.default_rng(2)
        signs = [np.sign(sample_multilinear_terms(5, [(0, 1)], rng)[(0, 1)]) for _ in range(200)]
        assert 50 < sum(s > 0 for s in signs) < 150

    def test_rejects_bad_tails(self, rng):
        with pytest.raises(ValueError):
            sample_multilinear_terms(0, [(0, 1)], rng)
        with pytest.raises(ValueError):
            sample_multilinear_terms(3, [(0,)], rng)
        with pytest.raises(ValueError):
            sample_multilinear_terms(3, [], rng)

    def test_noise_variance_range(self, rng):
        v = sample_noise_variances(1000, rng)
        assert v.min() >= 0.5 and v.max() <= 2.0


class TestSemModel:
    def test_missing_term_rejected(self):
        h = HDag(2, [Hyperedge((0,), 1)])
        with pytest.raises(ValueError):
            SemModel(h, {}, np.ones(2))

    def test_subset_mismatch_rejected(self):
        h = HDag(3, [Hyperedge((0,), 2)])
        with pytest.raises(ValueError):
            SemModel(h, {Hyperedge((0,), 2): sample_gp_function(0, (1,))}, np.ones(3))

    def test_sample_sem_covers_maximal_edges(self):
        m = sample_sem(8, 2, 3, 4)
        assert set(m.terms) >= set(m.hdag.maximal_edges())


class TestGenerate:
    def test_independent_columns(self):
        m = SemModel(HDag(3), {}, np.ones(3))
        X = generate(m, 20_000, 0).values
        C = np.corrcoef(X.T)
        assert np.max(np.abs(C - np.eye(3))) < 0.03
        assert X.var(axis=0) == pytest.approx(np.ones(3), abs=0.05)

    def test_product_variance(self):
        beta = 0.8
        X = generate(product_model(beta), 100_000, 1).values
        # E[x_a^2 x_b^2] = 1 for independent standard normal roots
        assert X[:, 2].var() == pytest.approx(beta**2 + 1.0, rel=0.03)

    def test_deterministic(self):
        m = sample_sem(6, 1.5, 2, 5)
        a = generate(m, 300, 9).values
        b = generate(m, 300, 9).values
        assert np.array_equal(a, b)

    def test_pipeline_deterministic(self):
        a = generate(sample_sem(6, 1.5, 2, 11), 200, 11).values
        b = generate(sample_sem(6, 1.5, 2, 11), 200, 11).values
        assert a.tobytes() == b.tobytes()


class TestDataset:
    def test_csv_round_trip(self, tmp_path):
        data = generate(sample_sem(4, 1.0, 2, 3), 50, 3, meta={"seed": 3})
        data.to_csv(tmp_path / "d.csv", tmp_path / "d.json")
        back = Dataset.from_csv(tmp_path / "d.csv", tmp_path / "d.json")
        assert np.array_equal(back.values, data.values)
        assert back.meta["seed"] == 3 and back.meta == data.meta
        assert open(tmp_path / "d.csv").readline().strip() == "x0,x1,x2,x3"

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            Dataset(np.array([[0.0, np.nan]]))


class TestLogDensity:
    def test_empty_graph_at_origin(self):
        m = SemModel(HDag(4), {}, np.ones(4))
        assert analytic_log_density(m, np.zeros(4)) == pytest.approx(-2 * math.log(2 * math.pi))

    def test_dimension_check(self):
        with pytest.raises(DimensionMismatch):
            analytic_log_density(SemModel(HDag(2), {}, np.ones(2)), np.zeros(3))

    def test_integrates_to_one(self):
        g = Dag(2, [(0, 1)])
        m = SemModel(g.to_hdag(), {Hyperedge((0,), 1): sample_gp_function(5)}, np.array([0.7, 1.3]))
        t = np.linspace(-9, 9, 601)
        xx, yy = np.meshgrid(t, t, indexing="ij")
        dens = np.exp(analytic_log_density(m, np.column_stack([xx.ravel(), yy.ravel()])))
        assert dens.sum() * (t[1] - t[0]) ** 2 == pytest.approx(1.0, abs=1e-3)

    def test_matches_histogram(self):
        g = Dag(2, [(0, 1)])
        m = SemModel(g.to_hdag(), {Hyperedge((0,), 1): sample_gp_function(6)}, np.array([1.0, 0.6]))
        X = generate(m, 200_000, 7).values
        edges = np.linspace(-3, 3, 9)
        emp, _, _ = np.histogram2d(X[:, 0], X[:, 1], bins=[edges, edges])
        fine = np.linspace(-3, 3, 241)
        mid = 0.5 * (fine[1:] + fine[:-1])
        xx, yy = np.meshgrid(mid, mid, indexing="ij")
        dens = np.exp(analytic_log_density(m, np.column_stack([xx.ravel(), yy.ravel()]))).reshape(xx.shape)
        model = dens.reshape(8, 30, 8, 30).sum(axis=(1, 3))
        p, q = emp / emp.sum(), model / model.sum()
        mask = p > 0
        assert np.sum(p[mask] * np.log(p[mask] / q[mask])) < 0.05

    def test_gradient_matches_hand_derivation(self):
        beta, s = 0.7, np.array([1.2, 0.8, 0.5])
        m = product_model(beta, s)
        rng = np.random.default_rng(3)
        P = rng.normal(size=(100, 3))
        x0, x1, x2 = P.T
        r = x2 - beta * x0 * x1
        grad = np.column_stack([
            -x0 / s[0] + r * beta * x1 / s[2],
            -x1 / s[1] + r * beta * x0 / s[2],
            -r / s[2],
        ])
        h = 1e-5
        for a in range(3):
            e = np.zeros(3)
            e[a] = h
            fd = (analytic_log_density(m, P + e) - analytic_log_density(m, P - e)) / (2 * h)
            np.testing.assert_allclose(fd, grad[:, a], rtol=1e-5, atol=1e-7)

    def test_node_terms_sum(self):
        m = sample_sem(5, 1.5, 2, 8)
        X = generate(m, 40, 8).values
        total = sum(node_log_density(m, X, j) for j in range(5))
        np.testing.assert_allclose(total, analytic_log_density(m, X))
