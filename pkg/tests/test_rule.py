"""Tests for the rule data model, moments, and fixed-rule construction."""

import itertools
import json

import numpy as np
import pytest

from samplequad.basis import BasisSpec, basis_matrix, domain_from_samples
from samplequad.errors import (
    DegenerateNullVector,
    InsufficientSamples,
    SingularSystem,
)
from samplequad.rule import (
    MomentVector,
    QuadratureRule,
    SampleSet,
    add_sample,
    construct_fixed_rule,
    remove_one,
    removal_interval,
    sample_moments,
    select_alpha,
    solve_interpolatory_weights,
)


def monomial_spec(size, lo=-1.0, hi=1.0):
    return BasisSpec(d=1, size=size, family="monomial", domain=((lo, hi),))


def legendre_spec(d, size, dom):
    return BasisSpec(d=d, size=size, domain=dom)


class TestSampleMoments:
    def test_constant_moment_is_exactly_one(self):
        rng = np.random.default_rng(0)
        ss = SampleSet(rng.random((1234, 3)))
        spec = BasisSpec(d=3, size=10, domain=((0.0, 1.0),) * 3)
        mu = sample_moments(ss, spec)
        assert mu.values[0] == 1.0
        assert mu.K == 1233

    def test_mean(self):
        ss = SampleSet(np.array([[0.0], [1.0]]))
        mu = sample_moments(ss, monomial_spec(2))
        assert mu.values[1] == 0.5

    def test_second_raw_moment(self):
        ss = SampleSet(np.array([[0.0], [0.25], [0.5], [0.75], [1.0]]))
        mu = sample_moments(ss, monomial_spec(3))
        assert mu.values[2] == pytest.approx(0.375, abs=1e-15)

    def test_matches_plain_average_on_large_set(self):
        rng = np.random.default_rng(1)
        ss = SampleSet(rng.random((20000, 2)))
        spec = BasisSpec(d=2, size=15, domain=((0.0, 1.0),) * 2)
        mu = sample_moments(ss, spec)
        direct = basis_matrix(spec, ss.points).mean(axis=1)
        np.testing.assert_allclose(mu.values, direct, atol=1e-13)


class TestSolveInterpolatoryWeights:
    def test_gaussian_moment_weights(self):
        # nodes 0, 1/2, 1 with moments (1, 0, 1) give weights (3, -4, 2)
        w = solve_interpolatory_weights(
            [[0.0], [0.5], [1.0]], np.array([1.0, 0.0, 1.0]), monomial_spec(3)
        )
        np.testing.assert_allclose(w, [3.0, -4.0, 2.0], atol=1e-12)

    def test_single_node_normalization(self):
        w = solve_interpolatory_weights([[0.7]], np.array([1.0]), monomial_spec(1))
        np.testing.assert_allclose(w, [1.0])

    def test_against_independent_solver(self):
        ss = SampleSet(np.array([[0.0], [0.25], [0.5], [0.75], [1.0]]))
        spec = monomial_spec(3)
        mu = sample_moments(ss, spec)
        nodes = [[0.0], [0.25], [0.5]]
        w = solve_interpolatory_weights(nodes, mu, spec)
        V = basis_matrix(spec, np.asarray(nodes))
        oracle = np.linalg.lstsq(V, mu.values, rcond=None)[0]
        np.testing.assert_allclose(w, oracle, atol=1e-12)

    def test_duplicate_nodes_singular(self):
        with pytest.raises(SingularSystem):
            solve_interpolatory_weights(
                [[0.5], [0.5], [1.0]], np.array([1.0, 0.0, 1.0]), monomial_spec(3)
            )


class TestAddSample:
    def test_first_addition_halves(self):
        rule = QuadratureRule(
            nodes=[[0.3]], weights=[1.0], spec=monomial_spec(1), K=0
        )
        bigger = add_sample(rule, [0.9])
        np.testing.assert_allclose(bigger.weights, [0.5, 0.5])
        assert bigger.K == 1

    def test_weight_sum_preserved(self):
        rng = np.random.default_rng(2)
        w = rng.random(10)
        w /= w.sum()
        rule = QuadratureRule(
            nodes=rng.random((10, 1)), weights=w, spec=monomial_spec(1), K=9
        )
        assert add_sample(rule, [0.5]).weights.sum() == pytest.approx(1.0, abs=1e-15)

    def test_moment_update_matches_fresh_average(self):
        rng = np.random.default_rng(3)
        pts = rng.random((6, 1))
        spec = monomial_spec(3, 0.0, 1.0)
        ss5 = SampleSet(pts[:5])
        mu5 = sample_moments(ss5, spec)
        # a rule that reproduces mu5 exactly: the Monte Carlo rule itself
        rule = QuadratureRule(
            nodes=pts[:5], weights=np.full(5, 0.2), spec=spec, K=4
        )
        extended = add_sample(rule, pts[5])
        mu6 = sample_moments(SampleSet(pts), spec)
        assert extended.moment_residual(mu6) <= 1e-14
        assert rule.moment_residual(mu5) <= 1e-14


class TestSelectAlpha:
    def test_two_entry_ratios(self):
        v = np.full(3, 1.0 / 3.0)
        c = np.array([1.0 / np.sqrt(2.0), -1.0 / np.sqrt(2.0), 0.0])
        a1, k1, a2, k2 = select_alpha(v, c)
        assert a1 == pytest.approx(np.sqrt(2.0) / 3.0, abs=1e-15)
        assert (k1, k2) == (0, 1)
        assert a2 == pytest.approx(-np.sqrt(2.0) / 3.0, abs=1e-15)

    def test_zero_weight_gives_zero_alpha(self):
        v = np.array([0.0, 0.5, 0.5])
        c = np.array([0.5, 0.3, -0.8])
        a1, k1, _, _ = select_alpha(v, c)
        assert a1 == 0.0 and k1 == 0

    def test_removal_keeps_weights_nonnegative(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            v = rng.random(8)
            c = rng.standard_normal(8)
            c -= c.mean()  # zero-sum, both signs present
            a1, k1, a2, k2 = select_alpha(v, c)
            for alpha, k in ((a1, k1), (a2, k2)):
                w = v - alpha * c
                assert w.min() >= -1e-12 * max(1.0, np.abs(w).max())
                assert abs(w[k]) <= 1e-12

    def test_degenerate_vector_rejected(self):
        with pytest.raises(DegenerateNullVector):
            select_alpha(np.array([0.5, 0.5]), np.array([1.0, 2.0]))


class TestRemovalInterval:
    def test_positive_weights_feasible(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            w = rng.random(6)
            c = rng.standard_normal(6)
            c -= c.mean()
            a_min, _, a_max, _, feasible = removal_interval(w, c)
            assert feasible
            assert a_min <= 0.0 <= a_max

    def test_hand_computed_equal_endpoints(self):
        w = np.array([1.0, -1.0])
        c = np.array([1.0 / np.sqrt(2.0), -1.0 / np.sqrt(2.0)])
        a_min, k_min, a_max, k_max, feasible = removal_interval(w, c)
        assert a_min == pytest.approx(np.sqrt(2.0), abs=1e-15)
        assert a_max == pytest.approx(np.sqrt(2.0), abs=1e-15)
        assert feasible

    def test_infeasible_case_matches_exhaustive_oracle(self):
        # weights with a negative entry where no single deletion can help
        spec = monomial_spec(2)
        nodes = np.array([[0.0], [1.0], [2.0]])
        w = np.array([-0.5, 0.5, 1.0])
        V = basis_matrix(spec, nodes)
        mu = V @ w
        c = np.array([1.0, -2.0, 1.0]) / np.sqrt(6.0)
        a_min, _, a_max, _, feasible = removal_interval(w, c)
        assert not feasible and a_max < a_min
        # oracle: deleting any single node leaves a negative weight
        for drop in range(3):
            keep = [i for i in range(3) if i != drop]
            sub = solve_interpolatory_weights(
                nodes[keep], mu[:2][: len(keep)], monomial_spec(2)
            )
            assert sub.min() < 0


class TestRemoveOne:
    def test_duplicate_nodes_merge(self):
        spec = monomial_spec(1)
        rule = QuadratureRule(
            nodes=[[0.4], [0.4], [0.8]],
            weights=[0.3, 0.3, 0.4],
            spec=spec,
            K=2,
        )
        c = np.array([1.0, -1.0, 0.0]) / np.sqrt(2.0)
        out = remove_one(rule, c, "alpha1")
        assert out.n_nodes == 2
        np.testing.assert_allclose(sorted(out.weights), [0.4, 0.6], atol=1e-15)

    def test_generic_case_removes_exactly_one(self):
        rng = np.random.default_rng(6)
        pts = rng.random((7, 1))
        spec = legendre_spec(1, 5, domain_from_samples(pts))
        rule = construct_fixed_rule(SampleSet(pts[:6]), spec, validate=False)
        ext = add_sample(rule, pts[6])
        V = basis_matrix(spec, ext.nodes)
        from samplequad.linalg import null_vector

        out = remove_one(ext, null_vector(V), "smallest_abs")
        assert out.n_nodes == ext.n_nodes - 1

    def test_symmetric_simultaneous_zeros(self):
        # mirror-symmetric configuration: both end nodes vanish together
        spec = monomial_spec(2)
        rule = QuadratureRule(
            nodes=[[-1.0], [0.0], [1.0]],
            weights=[0.25, 0.5, 0.25],
            spec=spec,
            K=2,
        )
        V = basis_matrix(spec, rule.nodes)
        mu = V @ rule.weights
        c = np.array([0.5, -1.0, 0.5]) / np.sqrt(1.5)
        assert np.abs(V @ c).max() <= 1e-15
        out = remove_one(rule, c, "alpha1")
        assert out.n_nodes == 1
        np.testing.assert_allclose(out.weights, [1.0])
        assert out.moment_residual(mu) <= 1e-14


class TestConstructFixedRule:
    def test_no_samples_beyond_basis_keeps_monte_carlo(self):
        rng = np.random.default_rng(7)
        pts = rng.random((6, 1))
        spec = legendre_spec(1, 6, domain_from_samples(pts))
        rule = construct_fixed_rule(SampleSet(pts), spec)
        np.testing.assert_array_equal(rule.nodes, pts)
        np.testing.assert_allclose(rule.weights, np.full(6, 1 / 6), atol=1e-15)

    def test_insufficient_samples(self):
        pts = np.random.default_rng(8).random((4, 1))
        spec = legendre_spec(1, 5, ((0.0, 1.0),))
        with pytest.raises(InsufficientSamples):
            construct_fixed_rule(SampleSet(pts), spec)

    def test_small_case_in_brute_force_feasible_set(self):
        pts = np.array([[0.0], [0.25], [0.5], [0.75], [1.0]])
        ss = SampleSet(pts)
        spec = monomial_spec(3, 0.0, 1.0)
        mu = sample_moments(ss, spec)
        np.testing.assert_allclose(mu.values[:3], [1.0, 0.5, 0.375], atol=1e-15)
        rule = construct_fixed_rule(ss, spec)
        # the symmetric grid admits exact sub-rules below D+1 nodes, so the
        # oracle enumerates every subset size up to D+1
        feasible = set()
        for size in (2, 3):
            for combo in itertools.combinations(range(5), size):
                V = basis_matrix(spec, pts[list(combo)])
                w, *_ = np.linalg.lstsq(V, mu.values, rcond=None)
                if np.abs(V @ w - mu.values).max() > 1e-10:
                    continue
                if w.min() >= -1e-12:
                    feasible.add(combo)
        assert tuple(sorted(int(i) for i in rule.source_indices)) in feasible
        assert rule.moment_residual(mu) <= 1e-12

    def test_generic_small_cases_use_full_node_count(self):
        rng = np.random.default_rng(21)
        spec_dom = None
        for _ in range(10):
            pts = rng.random((5, 1))
            ss = SampleSet(pts)
            spec = monomial_spec(3, 0.0, 1.0)
            mu = sample_moments(ss, spec)
            rule = construct_fixed_rule(ss, spec)
            assert rule.n_nodes == 3
            feasible = set()
            for combo in itertools.combinations(range(5), 3):
                V = basis_matrix(spec, pts[list(combo)])
                try:
                    w = np.linalg.solve(V, mu.values)
                except np.linalg.LinAlgError:
                    continue
                if w.min() >= -1e-12:
                    feasible.add(combo)
            assert tuple(sorted(int(i) for i in rule.source_indices)) in feasible

    def test_high_dimensional_property(self):
        rng = np.random.default_rng(9)
        pts = rng.random((10_000, 5))
        ss = SampleSet(pts)
        spec = legendre_spec(5, 126, domain_from_samples(pts))
        rule = construct_fixed_rule(ss, spec)
        assert rule.n_nodes <= 126
        assert rule.weights.min() >= -1e-12
        assert abs(rule.weights.sum() - 1.0) <= 1e-10
        assert rule.moment_residual(sample_moments(ss, spec)) <= 1e-8

    def test_exactness_on_random_polynomials(self):
        rng = np.random.default_rng(10)
        pts = rng.random((2000, 2))
        ss = SampleSet(pts)
        spec = legendre_spec(2, 21, domain_from_samples(pts))
        rule = construct_fixed_rule(ss, spec)
        V_samples = basis_matrix(spec, pts)
        V_rule = basis_matrix(spec, rule.nodes)
        for _ in range(100):
            coef = rng.standard_normal(21)
            q_samples = coef @ V_samples
            q_rule = coef @ V_rule
            lhs = rule.apply(q_rule)
            rhs = q_samples.mean()
            assert abs(lhs - rhs) <= 1e-8 * (1.0 + np.abs(q_samples).max())

    def test_stability_identity(self):
        rng = np.random.default_rng(11)
        pts = rng.random((500, 2))
        ss = SampleSet(pts)
        rule = construct_fixed_rule(ss, legendre_spec(2, 10, domain_from_samples(pts)))
        assert rule.stability_gap() <= 1e-12

    def test_nodes_are_samples_bit_for_bit(self):
        rng = np.random.default_rng(12)
        pts = rng.random((300, 3))
        ss = SampleSet(pts)
        rule = construct_fixed_rule(ss, legendre_spec(3, 20, domain_from_samples(pts)))
        for node, idx in zip(rule.nodes, rule.source_indices):
            assert np.array_equal(node, pts[idx])

    def test_deterministic(self):
        rng = np.random.default_rng(13)
        pts = rng.random((400, 2))
        spec = legendre_spec(2, 15, domain_from_samples(pts))
        r1 = construct_fixed_rule(SampleSet(pts), spec)
        r2 = construct_fixed_rule(SampleSet(pts.copy()), spec)
        np.testing.assert_array_equal(r1.nodes, r2.nodes)
        np.testing.assert_array_equal(r1.weights, r2.weights)

    def test_alpha_policies_all_give_valid_rules(self):
        rng = np.random.default_rng(14)
        pts = rng.random((300, 1))
        ss = SampleSet(pts)
        spec = legendre_spec(1, 6, domain_from_samples(pts))
        mu = sample_moments(ss, spec)
        for policy in ("alpha1", "alpha2", "smallest_abs"):
            rule = construct_fixed_rule(ss, spec, alpha_policy=policy)
            assert rule.weights.min() >= -1e-12
            assert rule.moment_residual(mu) <= 1e-8


class TestRuleSerialization:
    def test_json_round_trip_bit_exact(self):
        rng = np.random.default_rng(15)
        pts = rng.random((200, 2))
        ss = SampleSet(pts)
        rule = construct_fixed_rule(ss, legendre_spec(2, 12, domain_from_samples(pts)))
        blob = json.dumps(rule.to_json_dict())
        again = QuadratureRule.from_json_dict(json.loads(blob))
        np.testing.assert_array_equal(again.nodes, rule.nodes)
        np.testing.assert_array_equal(again.weights, rule.weights)
        np.testing.assert_array_equal(again.source_indices, rule.source_indices)
        np.testing.assert_array_equal(again.fixed_mask, rule.fixed_mask)
        assert again.spec == rule.spec
        assert again.K == rule.K

    def test_save_load_file(self, tmp_path):
        rng = np.random.default_rng(16)
        pts = rng.random((50, 1))
        ss = SampleSet(pts)
        rule = construct_fixed_rule(ss, legendre_spec(1, 4, domain_from_samples(pts)))
        path = tmp_path / "rule.json"
        rule.save(path)
        again = QuadratureRule.load(path)
        np.testing.assert_array_equal(again.nodes, rule.nodes)
        np.testing.assert_array_equal(again.weights, rule.weights)

    def test_moment_vector_wrapper(self):
        mv = MomentVector(values=[1.0, 0.5], K=9)
        assert isinstance(mv.values, np.ndarray)
