from dataclasses import dataclass, field, replace

import numpy as np
import pytest

from cdrsim.estimate import (
    CationStockEstimator,
    EstimationError,
    bootstrap,
    cation_stock_estimate,
    cell_tables,
    cored_area,
    dissolution_fraction_estimate,
    estimator_for,
    realization_truth,
    scenario_tables,
    validate_coverage,
)
from cdrsim.mixing import EQ1_FACTORS, mixed_concentration
from cdrsim.plan import CONTROL, TREATMENT
from cdrsim.scenario import demo_config, noise_free, scenario_from_dict
from cdrsim.simulate import BASE_COLUMNS, Dataset, batch_simulate, simulate

LEVELS = (0.5, 0.8, 0.9, 0.95)


def quiet_scenario(**losses):
    tree = noise_free(demo_config())
    if losses:
        tree["losses"]["rate_per_yr"] = losses
    return scenario_from_dict(tree)


class TestPointEstimate:
    def test_noise_free_recovers_truth(self):
        s = quiet_scenario()
        ds = simulate(s, 21)
        est = estimator_for(s)
        assert est.soil_density == 1000.0 and est.depth == pytest.approx(0.1)
        assert est.treatment_area == 3200.0
        point = float(est(cell_tables(ds, (2, 3))))
        truth = realization_truth(ds, s)
        assert point == pytest.approx(truth, rel=0.005)
        measured = float(estimator_for(s, stock="measured")(scenario_tables(ds, s, stock="measured")))
        assert measured == pytest.approx(truth, rel=0.005)

    def test_hand_computed_deltas(self):
        t = np.zeros((2, 2, 2))
        t[:, 0] = [0.010, 0.004]
        t[:, 1] = [0.008, 0.003]
        c = np.full((3, 2, 2), 0.002)
        c[:, 1, 0] = 0.0021
        est = CationStockEstimator(("Ca", "Mg"), 1000.0, 0.1, 3200.0)
        np.testing.assert_allclose(est.deltas({TREATMENT: t, CONTROL: c}), [0.0021, 0.001])
        per_area = np.array([0.0021, 0.001]) * 100.0
        expect = (per_area[0] * 2.2 + per_area[1] * 3.62) * 3.2
        assert float(est({TREATMENT: t, CONTROL: c})) == pytest.approx(expect, rel=1e-12)

    def test_negative_drop_kept(self):
        t = np.array([[[0.001], [0.002]], [[0.001], [0.002]]])
        c = np.zeros((2, 2, 1))
        assert float(CationStockEstimator(("Ca",))({TREATMENT: t, CONTROL: c})) < 0

    def test_cation_stock_estimate_wrapper(self, demo_dataset):
        e = cation_stock_estimate(demo_dataset)
        assert e.point == pytest.approx(float(CationStockEstimator(("Ca", "Mg"))(cell_tables(demo_dataset, (2, 3)))))
        assert set(e.deltas) == {"Ca", "Mg"} and all(v > 0 for v in e.deltas.values())

    def test_demo_point_near_nominal(self, demo, demo_dataset):
        point = float(estimator_for(demo)(cell_tables(demo_dataset, (2, 3))))
        assert point == pytest.approx(1.68, rel=0.2)

    def test_missing_round_and_group(self, demo_dataset):
        with pytest.raises(EstimationError, match=r"round\(s\) \[3\]"):
            cell_tables(demo_dataset.select(demo_dataset.samples["round"] < 3), (2, 3))
        with pytest.raises(EstimationError, match="no control"):
            cell_tables(demo_dataset.select(demo_dataset.samples["group"] == TREATMENT), (2, 3))

    def test_stock_tables_scale_by_mass(self, demo, demo_dataset):
        conc = cell_tables(demo_dataset, (2, 3))
        stock = scenario_tables(demo_dataset, demo, stock="measured")
        ratio = stock[TREATMENT] / conc[TREATMENT]
        assert np.all(ratio > 50) and np.all(ratio < 200)
        np.testing.assert_allclose(ratio[..., 0], ratio[..., 1], rtol=1e-12)
        assert cored_area(demo) == pytest.approx(5 * 3.14e-4)
        with pytest.raises(EstimationError):
            estimator_for(demo, stock="guess")


@pytest.fixture(scope="module")
def demo_boot(demo, demo_dataset):
    return bootstrap(demo_dataset, estimator_for(demo), 2000, LEVELS, np.random.default_rng(3))


class TestBootstrap:
    def test_nested_intervals(self, demo_boot):
        iv = demo_boot.intervals
        for a, b in zip(LEVELS, LEVELS[1:]):
            assert iv[b][0] <= iv[a][0] <= iv[a][1] <= iv[b][1]
        assert iv[0.95][1] - iv[0.95][0] >= iv[0.8][1] - iv[0.8][0]
        assert demo_boot.B == 2000
        assert not any(demo_boot.point_outside.values())

    def test_deterministic(self, demo, demo_dataset, demo_boot):
        again = bootstrap(demo_dataset, estimator_for(demo), 2000, LEVELS, np.random.default_rng(3))
        assert again.intervals == demo_boot.intervals
        assert bootstrap(demo_dataset, estimator_for(demo), 200, seed=5).intervals == \
            bootstrap(demo_dataset, estimator_for(demo), 200, seed=5).intervals

    def test_zero_variance_degenerate(self):
        t = np.zeros((6, 2, 2))
        t[:, 0] = [0.003, 0.002]
        t[:, 1] = [0.0025, 0.0015]
        c = np.full((6, 2, 2), 0.001)
        e = bootstrap({TREATMENT: t, CONTROL: c}, CationStockEstimator(("Ca", "Mg")), 500, LEVELS, seed=1)
        for lo, hi in e.intervals.values():
            assert lo == hi == e.point

    def test_clt_oracle(self):
        n, sigma = 400, 2.0
        x = np.random.default_rng(7).normal(10.0, sigma, n)
        e = bootstrap({"x": x}, lambda s: s["x"].mean(axis=-1), 4000, [0.9], seed=8)
        width = e.intervals[0.9][1] - e.intervals[0.9][0]
        assert width == pytest.approx(2 * 1.645 * sigma / np.sqrt(n), rel=0.15)

    def test_cells_keep_their_rounds(self):
        # within-cell pairing makes every replicate of a constant per-cell difference exact
        rng = np.random.default_rng(0)
        base = rng.uniform(0.001, 0.01, (10, 1))
        t = np.stack([base + 0.001, base], axis=1)
        c = np.stack([base, base], axis=1)
        e = bootstrap({TREATMENT: t, CONTROL: c}, CationStockEstimator(("Ca",)), 300, [0.95], seed=2)
        assert e.intervals[0.95][0] == pytest.approx(e.intervals[0.95][1], rel=1e-9)

    def test_rejections(self, demo, demo_dataset):
        with pytest.raises(EstimationError, match="B must be"):
            bootstrap(demo_dataset, estimator_for(demo), 199)
        with pytest.raises(EstimationError, match="levels"):
            bootstrap(demo_dataset, estimator_for(demo), 200, [1.0])
        one = {TREATMENT: np.zeros((1, 2, 2)), CONTROL: np.zeros((5, 2, 2))}
        with pytest.raises(EstimationError, match="fewer than 2"):
            bootstrap(one, CationStockEstimator(("Ca", "Mg")), 200)


@dataclass(frozen=True)
class Oracle:
    """Returns a fixed value for every (re)sample."""

    value: float
    elements: tuple = ("Ca", "Mg")
    factors: dict = field(default_factory=lambda: dict(EQ1_FACTORS))

    def __call__(self, tables):
        return np.full(tables[TREATMENT].shape[:-3], self.value)


class TestCoverage:
    def test_exact_estimator_always_covers(self):
        s = quiet_scenario()
        truth = realization_truth(simulate(s, 0, 0), s)
        rep = validate_coverage(s, 12, 200, LEVELS, seed=0, estimator=Oracle(truth), min_realizations=10)
        assert all(v == 1.0 for v in rep.coverage.values())
        assert rep.bias == pytest.approx(0.0, abs=1e-12)

    def test_rows_and_bounds(self):
        s = quiet_scenario()
        rep = validate_coverage(s, 10, 200, LEVELS, seed=0, estimator=Oracle(0.0), min_realizations=10)
        assert all(v == 0.0 for v in rep.coverage.values())
        assert [r["nominal"] for r in rep.rows()] == list(LEVELS)
        assert all(r["n"] == 10 for r in rep.rows())

    def test_requires_enough_realizations(self, demo):
        with pytest.raises(EstimationError, match=">= 100"):
            validate_coverage(demo, 99, 200)

    def test_errors_name_realization(self):
        tree = demo_config()
        tree["losses"]["rate_per_yr"] = {"Ca": 0.4, "Mg": 0.8}
        s = scenario_from_dict(tree)
        bad = replace(estimator_for(s), elements=("Ca", "Fe"), factors={"Ca": 1.0})
        with pytest.raises(EstimationError, match="realization 0"):
            validate_coverage(s, 1, 200, seed=0, estimator=bad, min_realizations=1)

    @pytest.mark.slow
    def test_no_weathering_no_bias(self):
        s = scenario_from_dict({**demo_config(), "losses": {"rate_per_yr": {"Ca": 0.0, "Mg": 0.0}}})
        est = estimator_for(s)
        points = np.array([float(est(cell_tables(d, (2, 3)))) for d in batch_simulate(s, 200, 17, threads=4)])
        assert abs(points.mean()) < 3 * points.std(ddof=1) / np.sqrt(len(points))


@pytest.fixture(scope="module")
def unbiasedness_runs(demo):
    """Point estimates on both stock bases plus truths over 500 demo realizations."""
    nominal, measured = estimator_for(demo), estimator_for(demo, stock="measured")
    rows = []
    for ds in batch_simulate(demo, 500, 2027, threads=4):
        rows.append((
            float(nominal(cell_tables(ds, (2, 3)))),
            float(measured(scenario_tables(ds, demo, stock="measured"))),
            realization_truth(ds, demo),
        ))
    return np.array(rows)


@pytest.mark.slow
def test_unbiased_at_scale_measured_stock(unbiasedness_runs):
    pts, truth = unbiasedness_runs[:, 1], unbiasedness_runs[:, 2]
    assert abs(pts.mean() - truth.mean()) < 3 * pts.std(ddof=1) / np.sqrt(len(pts))


@pytest.mark.slow
@pytest.mark.xfail(
    strict=True,
    reason="nominal density x depth conversion over-estimates by about 1 %: composites average "
    "enrichment over variable core mass, so E[nominal / realized mass] > 1",
)
def test_unbiased_at_scale_nominal_stock(unbiasedness_runs):
    pts, truth = unbiasedness_runs[:, 0], unbiasedness_runs[:, 2]
    assert abs(pts.mean() - truth.mean()) < 3 * pts.std(ddof=1) / np.sqrt(len(pts))


@pytest.mark.slow
def test_nominal_stock_bias_small(unbiasedness_runs):
    pts, truth = unbiasedness_runs[:, 0], unbiasedness_runs[:, 2]
    assert abs(pts.mean() / truth.mean() - 1) < 0.03


class TestTracerPath:
    F = {"Ti": 1000e-6, "Ca": 0.05}
    S = {"Ti": 200e-6, "Ca": 0.002}

    def dataset(self, alpha, loss):
        n = len(alpha)
        cells = np.concatenate([np.arange(n), np.arange(n)])
        rounds = np.repeat([1, 3], n)
        ti = np.concatenate([np.full(n, self.S["Ti"]), mixed_concentration(alpha, self.F["Ti"], self.S["Ti"])])
        ca = np.concatenate([np.full(n, self.S["Ca"]),
                             mixed_concentration(alpha * (1 - loss), self.F["Ca"], self.S["Ca"])])
        samples = {
            "realization": np.zeros(2 * n, dtype=int), "cell": cells, "round": rounds,
            "group": np.array([TREATMENT] * (2 * n), dtype=object),
            "x_m": np.zeros(2 * n), "y_m": np.zeros(2 * n), "depth_m": np.full(2 * n, 0.1),
            "mass_kg": np.ones(2 * n), "conc_Ti_kgkg": ti, "conc_Ca_kgkg": ca,
        }
        ctrl = {k: v.copy() for k, v in samples.items()}
        ctrl["group"] = np.array([CONTROL] * (2 * n), dtype=object)
        ctrl["cell"] = cells + n
        both = {k: np.concatenate([samples[k], ctrl[k]]) for k in samples}
        assert list(both)[: len(BASE_COLUMNS)] == list(BASE_COLUMNS)
        return Dataset(("Ti", "Ca"), both)

    def test_recovers_prescribed_loss(self):
        rng = np.random.default_rng(4)
        alpha = rng.uniform(0.005, 0.05, 16)
        loss = rng.uniform(0.0, 1.0, 16)
        d = dissolution_fraction_estimate(self.dataset(alpha, loss), "Ti", "Ca", self.F)
        np.testing.assert_allclose(d, loss, rtol=0, atol=1e-10)

    def test_round_trip_through_csv(self, tmp_path):
        alpha, loss = np.full(4, 0.02), np.array([0.0, 0.25, 0.5, 1.0])
        self.dataset(alpha, loss).to_csv(tmp_path / "t.csv")
        d = dissolution_fraction_estimate(Dataset.from_csv(tmp_path / "t.csv"), "Ti", "Ca", self.F)
        np.testing.assert_allclose(d, loss, atol=1e-10)
