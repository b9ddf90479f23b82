"""Threshold formula, clamping table, and attribute importances."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import choicespread as cs
from choicespread.coding import IndividualParams, coding_for_study
from choicespread.studies import Attribute, ProductProfile
from choicespread.thresholds import NEVER, ThresholdError, compute_threshold_matrix


def reference_threshold(params, product, study):
    """Independent re-implementation: build per-attribute partworth tables
    from the coefficient vector, sum the utilities by direct lookup, then
    apply the published clamp table."""
    worths = {}
    offset = 0
    for attr in study.non_social_attributes:
        coefs = list(params.beta[offset:offset + attr.n_levels - 1])
        worths[attr.name] = coefs + [-sum(coefs)]
        offset += attr.n_levels - 1
    ua = 0.0
    for attr, idx in zip(study.non_social_attributes, product.levels):
        ua += worths[attr.name][idx]
    if params.gamma > 0:
        raw = (params.u0 - ua) / params.gamma
        if raw < 0:
            return 0.0
        if raw > 1:
            return NEVER
        return raw
    return 0.0 if params.u0 - ua <= 0 else NEVER


def two_attr_study():
    return cs.Study("t", (
        Attribute("a", "categorical", ("x", "y")),
        Attribute("b", "categorical", ("p", "q", "r")),
        Attribute("s", "numeric", (0.01, 0.98), is_social_signal=True),
    ), 2, 1)


class TestAttributeUtility:
    def test_zero_beta_gives_zero(self):
        study = cs.ps_study()
        coding = coding_for_study(study)
        params = IndividualParams("r", beta=np.zeros(coding.n_effects),
                                  gamma=1.0, u0=0.0)
        for product in cs.enumerate_products(study)[:50]:
            assert cs.attribute_utility(params, product, coding) == 0.0

    def test_two_level_effects_signs(self):
        study = cs.Study("t", (
            Attribute("a", "categorical", ("x", "y")),
            Attribute("s", "numeric", (0.01, 0.98), is_social_signal=True),
        ), 2, 1)
        coding = coding_for_study(study)
        params = IndividualParams("r", beta=np.array([0.8]), gamma=1.0, u0=0.0)
        assert cs.attribute_utility(params, ProductProfile((0,)), coding) == 0.8
        assert cs.attribute_utility(params, ProductProfile((1,)), coding) == -0.8

    def test_matches_hand_computed_dot_product(self):
        study = cs.ps_study()
        coding = coding_for_study(study)
        rng = np.random.default_rng(1)
        beta = rng.normal(size=coding.n_effects)
        params = IndividualParams("r", beta=beta, gamma=1.0, u0=0.0)
        # product: ban, $14, 2035, 50 miles, greenpeace
        product = ProductProfile((0, 2, 1, 3, 1))
        # hand-coded row: levels 0/2/1 pick single columns, last level -> -1s
        expected = (beta[0]  # policy_type=ban -> column 0 of slice (0,2)
                    + beta[2 + 2]          # cost=$14 -> third column of its slice
                    + beta[5 + 1]          # start_year=2035
                    - beta[8] - beta[9] - beta[10]   # distance=50 miles (omitted)
                    + beta[11 + 1])        # endorsement=greenpeace
        got = cs.attribute_utility(params, product, coding)
        assert abs(got - expected) < 1e-12

    def test_dimension_mismatch(self):
        coding = coding_for_study(cs.ps_study())
        params = IndividualParams("r", beta=np.zeros(3), gamma=1.0, u0=0.0)
        with pytest.raises(Exception):
            cs.attribute_utility(params, ProductProfile((0, 0, 0, 0, 0)), coding)


class TestAdoptionThreshold:
    def _single_attr_setup(self):
        study = cs.Study("t", (
            Attribute("a", "categorical", ("x", "y")),
            Attribute("s", "numeric", (0.01, 0.98), is_social_signal=True),
        ), 2, 1)
        return study, coding_for_study(study)

    def test_direct_formula(self):
        study, coding = self._single_attr_setup()
        # beta 0 so Ua = 0; u0 1.0, Ua shifted via u0 terms directly
        params = IndividualParams("r", beta=np.array([0.5]), gamma=2.0, u0=1.0)
        # product level 0 -> Ua = +0.5; tau = (1.0 - 0.5) / 2 = 0.25
        assert cs.adoption_threshold(params, ProductProfile((0,)), coding) == 0.25

    def test_clamps_to_zero_when_product_beats_status_quo(self):
        study, coding = self._single_attr_setup()
        params = IndividualParams("r", beta=np.array([2.0]), gamma=1.5, u0=1.0)
        assert cs.adoption_threshold(params, ProductProfile((0,)), coding) == 0.0

    def test_never_when_raw_exceeds_one(self):
        study, coding = self._single_attr_setup()
        params = IndividualParams("r", beta=np.array([0.0]), gamma=0.5, u0=1.0)
        assert cs.adoption_threshold(params, ProductProfile((0,)), coding) == NEVER

    def test_nonpositive_gamma_branches(self):
        study, coding = self._single_attr_setup()
        liking = IndividualParams("r", beta=np.array([1.0]), gamma=-1.0, u0=0.5)
        assert cs.adoption_threshold(liking, ProductProfile((0,)), coding) == 0.0
        averse = IndividualParams("r", beta=np.array([-1.0]), gamma=-1.0, u0=0.5)
        assert cs.adoption_threshold(averse, ProductProfile((0,)), coding) == NEVER

    def test_matrix_agrees_with_scalar_function(self):
        study = two_attr_study()
        coding = coding_for_study(study)
        rng = np.random.default_rng(3)
        params = [IndividualParams(f"r{i}", beta=rng.normal(size=3),
                                   gamma=float(rng.normal()), u0=float(rng.normal()))
                  for i in range(20)]
        products = cs.enumerate_products(study)
        matrix = compute_threshold_matrix(params, products, coding, "human")
        for i, p in enumerate(params):
            for j, product in enumerate(products):
                assert matrix.tau[i, j] == cs.adoption_threshold(p, product, coding)

    def test_formula_spot_check_against_reference(self):
        # acceptance-grade oracle, smaller here: random positive-gamma cases
        study = cs.ps_study()
        coding = coding_for_study(study)
        products = cs.enumerate_products(study)
        rng = np.random.default_rng(4)
        for _ in range(500):
            params = IndividualParams(
                "r", beta=rng.normal(scale=1.5, size=coding.n_effects),
                gamma=float(rng.uniform(0.05, 6.0)), u0=float(rng.normal(scale=2)))
            product = products[rng.integers(len(products))]
            ours = cs.adoption_threshold(params, product, coding)
            ref = reference_threshold(params, product, study)
            if np.isinf(ref):
                assert np.isinf(ours)
            else:
                assert abs(ours - ref) <= 1e-12

    def test_monotone_nonincreasing_in_gamma(self):
        study, coding = self._single_attr_setup()
        product = ProductProfile((1,))  # Ua = -beta
        taus = []
        for gamma in (0.5, 1.0, 2.0, 5.0, 50.0):
            params = IndividualParams("r", beta=np.array([0.4]), gamma=gamma, u0=1.0)
            taus.append(cs.adoption_threshold(params, product, coding))
        finite = [t for t in taus if np.isfinite(t)]
        assert all(b <= a + 1e-15 for a, b in zip(finite, finite[1:]))
        # NEVER entries only appear at the small-gamma end
        assert not any(np.isinf(t) for t in taus[1:]) or np.isinf(taus[0])

    def test_raising_positively_used_partworth_lowers_threshold(self):
        study = two_attr_study()
        coding = coding_for_study(study)
        product = ProductProfile((0, 1))
        rng = np.random.default_rng(5)
        for _ in range(100):
            beta = rng.normal(size=3)
            base = IndividualParams("r", beta=beta, gamma=2.0, u0=1.0)
            bumped_beta = beta.copy()
            bumped_beta[0] += 0.5  # column used with +1 by level index 0
            bumped = IndividualParams("r", beta=bumped_beta, gamma=2.0, u0=1.0)
            t0 = cs.adoption_threshold(base, product, coding)
            t1 = cs.adoption_threshold(bumped, product, coding)
            assert t1 <= t0  # inf comparisons cover the NEVER cases


class TestScalingInvariance:
    @given(scale=st.floats(1e-3, 1e3),
           gamma=st.floats(-4, 4),
           u0=st.floats(-3, 3),
           seed=st.integers(0, 10_000))
    @settings(max_examples=100, deadline=None)
    def test_thresholds_and_importance_scale_free(self, scale, gamma, u0, seed):
        study = two_attr_study()
        coding = coding_for_study(study)
        rng = np.random.default_rng(seed)
        beta = rng.normal(size=3)
        if abs(gamma) < 1e-6 and np.allclose(beta, 0) and abs(u0) < 1e-6:
            return
        base = IndividualParams("r", beta=beta, gamma=gamma, u0=u0)
        scaled = IndividualParams("r", beta=beta * scale, gamma=gamma * scale,
                                  u0=u0 * scale)
        for product in cs.enumerate_products(study):
            t0 = cs.adoption_threshold(base, product, coding)
            t1 = cs.adoption_threshold(scaled, product, coding)
            if np.isinf(t0):
                assert np.isinf(t1)
            else:
                assert abs(t0 - t1) < 1e-9
        if abs(gamma) > 1e-12 or not np.allclose(beta, 0):
            i0 = cs.attribute_importance(base, coding)
            i1 = cs.attribute_importance(scaled, coding)
            assert np.allclose(i0, i1, atol=1e-9)


class TestAttributeImportance:
    def test_two_ranges_normalize(self):
        study = two_attr_study()
        coding = coding_for_study(study)
        # attribute a range: |2*0.5|=1 between +0.5/-0.5; b range from coefs
        params = IndividualParams("r", beta=np.array([0.5, 1.0, 0.5]),
                                  gamma=0.0, u0=0.0)
        imp = cs.attribute_importance(params, coding)
        # b partworths: (1.0, 0.5, -1.5) -> range 2.5; a range 1.0; social 0
        assert np.allclose(imp, np.array([1.0, 2.5, 0.0]) / 3.5)

    def test_ranges_2_3_5_normalize(self):
        study = two_attr_study()
        coding = coding_for_study(study)
        # a: +-1 -> range 2; b: (1.5, 0, -1.5) -> range 3; social: |g|*0.97 = 5
        params = IndividualParams("r", beta=np.array([1.0, 1.5, 0.0]),
                                  gamma=5.0 / 0.97, u0=0.0)
        imp = cs.attribute_importance(params, coding)
        assert np.allclose(imp, [0.2, 0.3, 0.5])

    def test_negative_gamma_uses_magnitude(self):
        study = two_attr_study()
        coding = coding_for_study(study)
        pos = IndividualParams("r", beta=np.array([1.0, 0.5, 0.5]), gamma=2.0, u0=0.0)
        neg = IndividualParams("r", beta=np.array([1.0, 0.5, 0.5]), gamma=-2.0, u0=0.0)
        assert np.allclose(cs.attribute_importance(pos, coding),
                           cs.attribute_importance(neg, coding))

    def test_all_zero_ranges_rejected(self):
        study = two_attr_study()
        coding = coding_for_study(study)
        flat = IndividualParams("r", beta=np.zeros(3), gamma=0.0, u0=1.0)
        with pytest.raises(ThresholdError):
            cs.attribute_importance(flat, coding)

    def test_random_importances_nonnegative_and_sum_to_one(self):
        coding = coding_for_study(cs.ps_study())
        rng = np.random.default_rng(6)
        for _ in range(300):
            params = IndividualParams(
                "r", beta=rng.normal(size=coding.n_effects),
                gamma=float(rng.normal()), u0=float(rng.normal()))
            imp = cs.attribute_importance(params, coding)
            assert np.all(imp >= 0)
            assert abs(imp.sum() - 1.0) < 1e-9


class TestThresholdMatrixCsv:
    def test_round_trip_preserves_never(self, tmp_path):
        study = two_attr_study()
        coding = coding_for_study(study)
        rng = np.random.default_rng(7)
        params = [IndividualParams(f"a{i}", beta=rng.normal(size=3),
                                   gamma=float(rng.normal()), u0=float(rng.normal()))
                  for i in range(5)]
        matrix = compute_threshold_matrix(
            params, cs.enumerate_products(study), coding, "human")
        assert np.isinf(matrix.tau).any()  # fixture should include NEVER cells
        path = str(tmp_path / "tm.csv")
        matrix.save_csv(path)
        again = cs.ThresholdMatrix.load_csv(path)
        assert again.pool == "human"
        assert again.agent_ids == matrix.agent_ids
        assert again.product_ids == matrix.product_ids
        assert np.array_equal(again.tau, matrix.tau)

    def test_out_of_range_rejected(self):
        with pytest.raises(ThresholdError):
            cs.ThresholdMatrix("human", ["a"], ["p"], np.array([[1.5]]))
