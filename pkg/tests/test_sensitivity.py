from dataclasses import replace

import numpy as np
import pytest

from cdrsim.mixing import MixingError, core_composition
from cdrsim.sensitivity import (
    PARAMETERS,
    ParamRanges,
    _set,
    example_params,
    local_sensitivity,
    mixing_sobol,
    sobol,
)

EXAMPLE = dict(gamma=0.9, d=0.10, Q=3.0, rho_f=3000.0, c_f=0.05, rho_s=1000.0, c_s=0.003, l=0.5, L=0.5)
NAME_TO_SYMBOL = {
    "sampled_feedstock_fraction": "gamma", "depth": "d", "application_rate": "Q", "feedstock_density": "rho_f",
    "feedstock_conc": "c_f", "soil_density": "rho_s", "soil_conc": "c_s", "element_loss": "l", "bulk_loss": "L",
}


def closed_form(gamma, d, Q, rho_f, c_f, rho_s, c_s, l, L):
    mf = Q * gamma * (1 - L)
    ms = rho_s * (d - mf / rho_f)
    return (Q * gamma * (1 - l) * c_f + ms * c_s) / (mf + ms)


def complex_step(symbol, values=EXAMPLE):
    h = 1e-30
    v = dict(values)
    v[symbol] = v[symbol] + 1j * h
    return closed_form(**v).imag / h


@pytest.fixture(scope="module")
def local():
    return {r.parameter: r for r in local_sensitivity(example_params(), "Ca")}


class TestLocal:
    def test_matches_complex_step_oracle(self, local):
        for name in PARAMETERS:
            sym = NAME_TO_SYMBOL[name]
            expect = complex_step(sym) * 0.01 * EXAMPLE[sym] * 1e6
            assert local[name].delta_ppm == pytest.approx(expect, rel=1e-6, abs=1e-9), name

    def test_soil_concentration_dominates(self, local):
        mags = {n: abs(r.delta_ppm) for n, r in local.items()}
        assert max(mags, key=mags.get) == "soil_conc"
        alpha = 1.35 / 100.9
        assert local["soil_conc"].delta_ppm == pytest.approx((1 - alpha) * 30.0, rel=1e-9)
        assert local["soil_conc"].delta_ppm == pytest.approx(29.6, abs=0.05)

    def test_signs(self, local):
        assert local["element_loss"].delta_ppm < 0
        assert local["application_rate"].delta_ppm > 0
        assert local["feedstock_conc"].delta_ppm > 0

    def test_density_effect_is_tiny(self, local):
        assert abs(local["feedstock_density"].delta_ppm) < 0.1

    def test_frozen_values(self, local):
        # closed-form values at the example inputs
        assert local["bulk_loss"].delta_ppm == pytest.approx(0.4575, abs=1e-4)
        assert local["application_rate"].delta_ppm == pytest.approx(6.2323, abs=1e-4)
        assert local["element_loss"].delta_ppm == pytest.approx(-6.6898, abs=1e-4)

    def test_secant_oracle(self, local):
        p = example_params()
        for name, r in local.items():
            if abs(r.delta_ppm) <= 1.0:
                continue
            h = 0.001 * r.value
            fine = local_sensitivity(p, "Ca", perturbation=0.001, parameters=[name])[0].derivative
            assert r.derivative == pytest.approx(fine, rel=0.01)
            up = float(core_composition(_set(p, name, "Ca", r.value + h)).conc["Ca"])
            dn = float(core_composition(_set(p, name, "Ca", r.value - h)).conc["Ca"])
            assert r.derivative == pytest.approx((up - dn) / (2 * h), rel=0.01)

    def test_richardson_agreement(self, local):
        for r in local.values():
            assert r.richardson_rel_diff < 1e-3
            assert not r.step_adjusted

    def test_no_application(self):
        p = replace(example_params(), application_rate=0.0)
        out = {r.parameter: r for r in local_sensitivity(p, "Ca")}
        for name in ("sampled_feedstock_fraction", "feedstock_density", "feedstock_conc", "element_loss", "bulk_loss"):
            assert out[name].delta_ppm == 0.0
        assert out["application_rate"].delta_ppm == 0.0  # zero value gives zero step

    def test_boundary_step_flagged(self):
        p = replace(example_params(), bulk_loss=1.0)
        r = local_sensitivity(p, "Ca", parameters=["bulk_loss"])[0]
        assert r.step_adjusted
        assert np.isfinite(r.derivative)

    def test_rejects_bad_perturbation(self):
        with pytest.raises(ValueError):
            local_sensitivity(example_params(), "Ca", perturbation=0.0)


def uniform_bounds(k):
    return [(0.0, 1.0)] * k


class TestSobolOracles:
    def test_projection(self):
        r = sobol(lambda x: x[:, 0], uniform_bounds(4), 2**14, np.random.default_rng(0), n_boot=20)
        assert r.S1[0] == pytest.approx(1.0, abs=0.02)
        np.testing.assert_allclose(r.S1[1:], 0.0, atol=0.02)
        np.testing.assert_allclose(r.S2[np.triu_indices(4, 1)], 0.0, atol=0.02)

    def test_additive(self):
        r = sobol(lambda x: x.sum(axis=1), uniform_bounds(4), 2**14, np.random.default_rng(1), n_boot=20)
        np.testing.assert_allclose(r.S1, 0.25, atol=0.02)
        np.testing.assert_allclose(r.S2[np.triu_indices(4, 1)], 0.0, atol=0.02)

    def test_interaction(self):
        # f = x1 * x2 on [0, 1]^2: V = 7/144, V1 = V2 = 1/48, V12 = 1/144
        r = sobol(lambda x: x[:, 0] * x[:, 1], uniform_bounds(2), 2**15, np.random.default_rng(2), n_boot=20)
        np.testing.assert_allclose(r.S1, 3 / 7, atol=0.02)
        assert r.S2[0, 1] == pytest.approx(1 / 7, abs=0.02)

    def test_requirements(self):
        with pytest.raises(ValueError):
            sobol(lambda x: x[:, 0], uniform_bounds(2), 512, np.random.default_rng(0))
        with pytest.raises(ValueError):
            sobol(lambda x: x[:, 0], [(0.0, 1.0), (1.0, 1.0)], 2**10, np.random.default_rng(0))
        with pytest.raises(ValueError):
            ParamRanges({"depth": (0.2, 0.1)}, {})

    def test_deterministic(self):
        a = sobol(lambda x: x.sum(axis=1), uniform_bounds(3), 2**10, np.random.default_rng(5), n_boot=10)
        b = sobol(lambda x: x.sum(axis=1), uniform_bounds(3), 2**10, np.random.default_rng(5), n_boot=10)
        np.testing.assert_array_equal(a.S1, b.S1)
        np.testing.assert_array_equal(a.S1_se, b.S1_se)


class TestMixingSobol:
    def test_ranking(self, mixing_sobol_result):
        r = mixing_sobol_result
        s1 = dict(zip(r.names, r.S1))
        top = sorted(s1, key=s1.get, reverse=True)[:2]
        assert set(top) == {"application_rate", "element_loss"}
        assert s1["feedstock_density"] < 0.01
        assert s1["bulk_loss"] < 0.01

    def test_variance_bound(self, mixing_sobol_result):
        r = mixing_sobol_result
        iu = np.triu_indices(len(r.names), 1)
        total = r.S1.sum() + r.S2[iu].sum()
        se = np.sqrt((r.S1_se**2).sum() + (r.S2_se[iu] ** 2).sum())
        assert total <= 1 + 3 * se

    def test_seed_stability(self, mixing_sobol_result):
        other = mixing_sobol(None, 2**16, np.random.default_rng(99), n_boot=50)
        se = np.maximum(mixing_sobol_result.S1_se, other.S1_se)
        assert np.all(np.abs(other.S1 - mixing_sobol_result.S1) < 3 * se)

    def test_layer_filling_is_an_error(self):
        ranges = ParamRanges({"application_rate": (0.0, 500.0)},
                             {"depth": 0.05, "feedstock_density": 1000.0, "feedstock_conc": 0.05,
                              "soil_density": 1000.0, "soil_conc": 0.003})
        with pytest.raises(MixingError):
            mixing_sobol(ranges, 2**10, np.random.default_rng(0), n_boot=2)
