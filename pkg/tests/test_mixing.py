import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdrsim.mixing import (
    BAYES_FACTORS,
    EQ1_FACTORS,
    MixingError,
    MixingParams,
    TracerObservation,
    TracerSignalError,
    TriangleScenario,
    cdr_from_losses,
    core_composition,
    dissolution_fraction,
    exponential_loss,
    mixed_concentration,
    mixing_fraction,
    tracer_difference,
    triangle_pathology_demo,
)


def params(**kw):
    base = dict(
        sampled_feedstock_fraction=1.0,
        depth=0.15,
        application_rate=2.25,
        feedstock_density=1e7,
        feedstock_conc={"Ca": 0.06},
        soil_density=1000.0,
        soil_conc={"Ca": 0.005},
        element_loss={"Ca": 0.0},
        bulk_loss=0.0,
    )
    base.update(kw)
    return MixingParams(**base)


class TestCoreComposition:
    def test_signal_size_example(self):
        c = core_composition(params())
        # 2.25 kg of feedstock in 150 kg of soil
        assert c.mixing_fraction == pytest.approx(2.25 / 152.25, rel=1e-5)
        assert float(c.conc["Ca"]) == pytest.approx((2.25 * 0.06 + 150 * 0.005) / 152.25, rel=1e-5)
        assert (float(c.conc["Ca"]) - 0.005) * 1e6 == pytest.approx(813.1, abs=1.0)

    def test_insensitive_to_very_dense_feedstock(self):
        a = core_composition(params(feedstock_density=1e6)).conc["Ca"]
        b = core_composition(params(feedstock_density=1e9)).conc["Ca"]
        assert abs(a - b) * 1e6 < 0.05

    def test_no_feedstock_gives_soil(self):
        c = core_composition(params(application_rate=0.0))
        assert float(c.conc["Ca"]) == 0.005
        assert float(c.total_mass_per_area) == 1000.0 * 0.15

    def test_sensitivity_parameter_set(self):
        p = params(
            sampled_feedstock_fraction=0.9, depth=0.10, application_rate=3.0, feedstock_density=3000.0,
            feedstock_conc={"Ca": 0.05}, soil_conc={"Ca": 0.003}, element_loss={"Ca": 0.5}, bulk_loss=0.5,
        )
        c = core_composition(p)
        assert float(c.feedstock_mass_per_area) == pytest.approx(1.35)
        assert float(c.feedstock_height) == pytest.approx(4.5e-4)
        # 1.35 kg feedstock + 1000 * (0.1 - 4.5e-4) kg soil
        assert c.mixing_fraction == pytest.approx(1.35 / 100.9, rel=1e-12)

    def test_layer_filling_core_rejected(self):
        with pytest.raises(MixingError, match="h >= depth"):
            core_composition(params(application_rate=200.0, feedstock_density=1000.0, depth=0.1))

    @pytest.mark.parametrize(
        "kw",
        [
            {"bulk_loss": 1.5},
            {"element_loss": {"Ca": -0.1}},
            {"sampled_feedstock_fraction": 2.0},
            {"application_rate": -1.0},
            {"soil_density": 0.0},
            {"depth": 0.0},
            {"soil_conc": {"Mg": 0.1}},
        ],
    )
    def test_invalid_inputs(self, kw):
        with pytest.raises(MixingError):
            core_composition(params(**kw))

    def test_vectorized_matches_scalar(self):
        q = np.array([0.0, 1.0, 3.0])
        vec = core_composition(params(application_rate=q)).conc["Ca"]
        for i, qi in enumerate(q):
            assert vec[i] == float(core_composition(params(application_rate=float(qi))).conc["Ca"])


@settings(max_examples=200, deadline=None)
@given(
    gamma=st.floats(0, 1),
    q=st.floats(0, 10),
    depth=st.floats(0.02, 0.5),
    rho_f=st.floats(500, 5000),
    rho_s=st.floats(200, 2000),
    L=st.floats(0, 1),
)
def test_mass_closure(gamma, q, depth, rho_f, rho_s, L):
    p = params(sampled_feedstock_fraction=gamma, application_rate=q, depth=depth,
               feedstock_density=rho_f, soil_density=rho_s, bulk_loss=L)
    mf = q * gamma * (1 - L)
    h = mf / rho_f
    if h >= depth:
        with pytest.raises(MixingError):
            core_composition(p)
        return
    c = core_composition(p)
    assert float(c.total_mass_per_area) == pytest.approx(mf + rho_s * (depth - h), rel=1e-12, abs=0)


@settings(max_examples=200, deadline=None)
@given(q=st.floats(0, 10), depth=st.floats(0.05, 0.5), cf=st.floats(0, 1), cs=st.floats(0, 1))
def test_core_model_agrees_with_two_member_mixing(q, depth, cf, cs):
    c = core_composition(params(application_rate=q, depth=depth, feedstock_conc={"Ca": cf}, soil_conc={"Ca": cs},
                                feedstock_density=2500.0))
    alpha = c.mixing_fraction
    assert float(c.conc["Ca"]) == pytest.approx(float(mixed_concentration(alpha, cf, cs)), rel=1e-12, abs=1e-15)


class TestTracerAlgebra:
    def test_mixed_concentration(self):
        assert mixed_concentration(0.02, 1000e-6, 200e-6) == pytest.approx(216e-6, rel=1e-12)
        assert mixed_concentration(0.0, 1.0, 0.3) == 0.3
        assert mixed_concentration(1.0, 1.0, 0.3) == 1.0

    def test_mixing_fraction(self):
        assert mixing_fraction(TracerObservation(1000e-6, 200e-6, 216e-6)) == pytest.approx(0.02, rel=1e-12)
        assert mixing_fraction(TracerObservation(1.0, 0.2, 0.2)) == 0.0
        assert mixing_fraction(TracerObservation(1.0, 0.2, 1.0)) == 1.0

    def test_mixing_fraction_not_clamped(self):
        assert mixing_fraction(TracerObservation(1.0, 0.2, 0.1)) < 0

    def test_indistinct_end_members(self):
        with pytest.raises(TracerSignalError):
            mixing_fraction(TracerObservation(0.2, 0.2, 0.3))
        with pytest.raises(TracerSignalError):
            mixing_fraction(TracerObservation(0.2 * (1 + 1e-12), 0.2, 0.3))

    @pytest.mark.parametrize("alpha", [0.0, 0.001, 0.02, 0.5, 1.0])
    def test_mixing_round_trip(self, alpha):
        f, s = 1000e-6, 200e-6
        w = mixed_concentration(alpha, f, s)
        assert mixing_fraction(TracerObservation(f, s, w)) == pytest.approx(alpha, abs=1e-12)

    def test_dissolution_fraction_example(self):
        t = TracerObservation(1000e-6, 200e-6, 216e-6)
        m = TracerObservation(0.05, 0.002, 0.00248)
        d = dissolution_fraction(t, m)
        assert d.value == pytest.approx(0.5, abs=1e-12)
        assert d.in_range

    def test_dissolution_limits(self):
        t = TracerObservation(1000e-6, 200e-6, 216e-6)
        unweathered = mixed_concentration(0.02, 0.05, 0.002)
        assert dissolution_fraction(t, TracerObservation(0.05, 0.002, unweathered)).value == pytest.approx(0.0, abs=1e-12)
        assert dissolution_fraction(t, TracerObservation(0.05, 0.002, 0.002)).value == pytest.approx(1.0, abs=1e-12)

    def test_out_of_range_flagged_not_clamped(self):
        t = TracerObservation(1000e-6, 200e-6, 216e-6)
        d = dissolution_fraction(t, TracerObservation(0.05, 0.002, 0.0001))
        assert d.value > 1 and not d.in_range

    def test_tracer_at_baseline_is_zero_division(self):
        t = TracerObservation(1000e-6, 200e-6, 200e-6)
        with pytest.raises(ZeroDivisionError):
            dissolution_fraction(t, TracerObservation(0.05, 0.002, 0.003))

    @settings(max_examples=200, deadline=None)
    @given(lam=st.floats(0, 1), alpha=st.floats(0.001, 0.5))
    def test_dissolution_round_trip(self, lam, alpha):
        ft, st_, fm, sm = 1000e-6, 200e-6, 0.05, 0.002
        t = TracerObservation(ft, st_, mixed_concentration(alpha, ft, st_))
        m = TracerObservation(fm, sm, mixed_concentration(alpha * (1 - lam), fm, sm))
        assert dissolution_fraction(t, m).value == pytest.approx(lam, abs=1e-12)

    def test_tracer_difference(self):
        m = TracerObservation(0.05, 0.002, 0.00248)
        assert tracer_difference(0.02, m) == pytest.approx(480e-6, rel=1e-9)
        full = TracerObservation(0.05, 0.002, mixed_concentration(0.02, 0.05, 0.002))
        assert tracer_difference(0.02, full) == pytest.approx(0.0, abs=1e-15)
        assert tracer_difference(0.0, TracerObservation(0.05, 0.002, 0.002)) == 0.0


class TestConversion:
    def test_coefficients(self):
        assert dict(EQ1_FACTORS) == {"Mg": 3.62, "Ca": 2.2, "Na": 1.91, "K": 1.12}
        assert dict(BAYES_FACTORS) == {"Ca": 2.196, "Mg": 3.621}

    def test_magnesium_kilogram(self):
        assert cdr_from_losses({"Mg": 1.0}) == 3.62

    def test_zero_and_sum(self):
        assert cdr_from_losses({"Mg": 0.0, "Ca": 0.0}) == 0.0
        assert cdr_from_losses({"Mg": 1, "Ca": 1, "Na": 1, "K": 1}) == pytest.approx(8.85, abs=1e-12)

    def test_errors(self):
        with pytest.raises(KeyError):
            cdr_from_losses({"Fe": 1.0})
        with pytest.raises(ValueError):
            cdr_from_losses({"Ca": -1.0})

    @given(
        a=st.dictionaries(st.sampled_from(["Mg", "Ca", "Na", "K"]), st.floats(0, 1e6), min_size=1),
        b=st.dictionaries(st.sampled_from(["Mg", "Ca", "Na", "K"]), st.floats(0, 1e6), min_size=1),
    )
    def test_linear(self, a, b):
        both = {k: a.get(k, 0.0) + b.get(k, 0.0) for k in set(a) | set(b)}
        assert cdr_from_losses(both) == pytest.approx(cdr_from_losses(a) + cdr_from_losses(b), rel=1e-12, abs=1e-9)


class TestLossCurve:
    def test_one_year_values(self):
        assert exponential_loss(0.4, 1.0) == pytest.approx(1 - math.exp(-0.4))
        assert round(exponential_loss(0.4, 1.0), 2) == 0.33
        assert round(exponential_loss(0.8, 1.0), 2) == 0.55

    def test_zero_time(self):
        assert exponential_loss(0.8, 0.0) == 0.0

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            exponential_loss(-0.1, 1.0)


class TestTriangleDemo:
    def test_noise_free_collapses(self):
        r = triangle_pathology_demo(n_draws=100, rel_noise=0.0, rng=np.random.default_rng(0))
        np.testing.assert_allclose(r.dissolution, 0.5, atol=1e-12)
        assert r.fraction_outside == 0.0

    def test_full_loss(self):
        r = triangle_pathology_demo(TriangleScenario(loss=1.0), n_draws=10, rel_noise=0.0, rng=np.random.default_rng(0))
        np.testing.assert_allclose(r.dissolution, 1.0, atol=1e-12)

    def test_noisy_fraction_outside(self):
        r = triangle_pathology_demo(n_draws=10_000, rel_noise=0.1, rng=np.random.default_rng(1))
        assert 0.25 <= r.fraction_outside <= 0.65

    def test_rejects_bad_args(self):
        with pytest.raises(ValueError):
            triangle_pathology_demo(n_draws=0)
        with pytest.raises(ValueError):
            triangle_pathology_demo(rel_noise=-0.1)
