import numpy as np
import pytest

from stfactor import (
    ConfigError,
    LatticeField,
    NumericError,
    SimConfig,
    demean,
    error_metrics,
    estimate_common_component,
    gdfm_baseline,
    run_mc_study,
    sample_autocovariance,
    simulate_field,
    simulate_idio_correlated,
    simulate_model_a,
    simulate_model_b,
    substream,
)
from stfactor.simlab import _model_a_chi, write_mc_csv, write_mc_summary_json


class TestModelA:
    def test_zero_factors_gives_pure_noise(self):
        cfg = SimConfig(model="model_a", n=3, dims=(4, 4, 6), q=0, seed=1)
        x, chi = simulate_field(cfg)
        assert np.all(chi.values == 0.0)
        noise = substream(cfg.seed, 0, "idio").standard_normal((3, 4, 4, 6))
        np.testing.assert_array_equal(x.values, noise)

    def test_seed_determinism(self):
        cfg = SimConfig(model="model_a", n=4, dims=(5, 5, 8), q=2, seed=7, r_a=10)
        x1, c1 = simulate_model_a(cfg)
        x2, c2 = simulate_model_a(cfg)
        assert np.array_equal(x1.values, x2.values)
        assert np.array_equal(c1.values, c2.values)
        x3, _ = simulate_model_a(cfg, rep=1)
        assert not np.array_equal(x1.values, x3.values)

    def test_truncation_radius_adequacy(self):
        # same shock stream, radii 40 vs 60: the dropped tail carries
        # weight at most 0.8^40 per axis
        cfg = SimConfig(model="model_a", n=5, dims=(6, 6, 10), q=2, seed=3, r_a=60)
        a = substream(cfg.seed, 0, "loadings_a").standard_normal((cfg.n, cfg.q))
        b = substream(cfg.seed, 0, "decay_b").uniform(0.5, 0.8, size=(cfg.n, cfg.q))
        padded = tuple(d + 120 for d in cfg.dims)
        shocks = substream(cfg.seed, 0, "shocks").standard_normal((cfg.q,) + padded)
        chi40 = _model_a_chi(a, b, shocks, 40, cfg.dims)
        chi60 = _model_a_chi(a, b, shocks, 60, cfg.dims)
        assert np.abs(chi40 - chi60).max() <= 1e-3 * chi60.std()

    def test_wrong_model_dispatch(self):
        with pytest.raises(ConfigError):
            simulate_model_a(SimConfig(model="model_b", n=2, dims=(3, 3, 3), q=1))


class TestModelB:
    def test_conditional_variance_formula(self):
        # sum of squared moving-average weights: 1.5 * 1.5 * 1.25 = 2.8125
        cfg = SimConfig(model="model_b", n=4, dims=(30, 30, 200), q=2, seed=11)
        _, chi = simulate_model_b(cfg)
        a = substream(cfg.seed, 0, "loadings_a").standard_normal((cfg.n, cfg.q))
        predicted = 2.8125 * (a**2).sum(axis=1)
        sample = chi.values.var(axis=(1, 2, 3))
        assert np.all(np.abs(sample / predicted - 1.0) <= 0.10)

    def test_zero_factors(self):
        cfg = SimConfig(model="model_b", n=2, dims=(4, 4, 4), q=0, seed=2)
        _, chi = simulate_model_b(cfg)
        assert np.all(chi.values == 0.0)

    def test_seed_determinism(self):
        cfg = SimConfig(model="model_b", n=3, dims=(5, 5, 6), q=2, seed=4)
        x1, _ = simulate_model_b(cfg)
        x2, _ = simulate_model_b(cfg)
        assert np.array_equal(x1.values, x2.values)

    def test_temporal_support_is_one_sided(self):
        # weights act on shocks at t and t-1 only: chi at t=1 must not
        # depend on shocks strictly after the first time slice
        cfg = SimConfig(model="model_b", n=2, dims=(4, 4, 6), q=1, seed=5)
        _, chi = simulate_model_b(cfg)
        shocks = substream(cfg.seed, 0, "shocks").standard_normal((1, 6, 6, 8))
        a = substream(cfg.seed, 0, "loadings_a").standard_normal((2, 1))
        manual = np.zeros((4, 4))
        for k1 in (-1, 0, 1):
            for k2 in (-1, 0, 1):
                for k3 in (0, 1):
                    w = 0.5 ** (abs(k1) + abs(k2) + abs(k3))
                    manual += w * shocks[0, 1 - k1 : 5 - k1, 1 - k2 : 5 - k2, 1 - k3]
        np.testing.assert_allclose(chi.values[0, :, :, 0], a[0, 0] * manual, rtol=1e-12)


class TestCorrelatedIdio:
    def test_cross_sectional_correlation_structure(self):
        cfg = SimConfig(model="model_b", n=12, dims=(12, 12, 160), q=0,
                        idio="correlated", seed=21)
        xi = simulate_idio_correlated(cfg)
        flat = xi.reshape(12, -1)
        flat = flat - flat.mean(axis=1, keepdims=True)
        corr = np.corrcoef(flat)
        near = np.mean([corr[i, i + 1] for i in range(11)])
        far = np.mean([abs(corr[i, i + 5]) for i in range(7)])
        assert near > 0.1
        assert near > far
        assert far < 0.05

    def test_temporal_ma_support(self):
        # first-order temporal moving average: autocovariance at lag 2 is
        # zero up to sampling noise
        cfg = SimConfig(model="model_b", n=3, dims=(8, 8, 500), q=0,
                        idio="correlated", seed=22)
        xi = simulate_idio_correlated(cfg)
        field = demean(LatticeField(xi))
        ac = sample_autocovariance(field, (1, 1, 2))
        lag2 = ac.gamma((0, 0, 2))
        lag0 = ac.gamma((0, 0, 0))
        assert np.abs(lag2).max() <= 0.05 * np.abs(np.diag(lag0)).max()

    def test_seed_determinism(self):
        cfg = SimConfig(model="model_b", n=3, dims=(4, 4, 5), q=0, idio="correlated", seed=23)
        assert np.array_equal(simulate_idio_correlated(cfg), simulate_idio_correlated(cfg))

    def test_dispatch_through_simulate_field(self):
        cfg = SimConfig(model="model_b", n=3, dims=(4, 4, 5), q=1, idio="correlated", seed=24)
        x, chi = simulate_field(cfg)
        xi = x.values - chi.values
        np.testing.assert_allclose(xi, simulate_idio_correlated(cfg), rtol=1e-12)


class TestErrorMetrics:
    def test_perfect_estimate(self):
        chi = np.random.default_rng(0).standard_normal((2, 3, 3, 4))
        assert error_metrics(chi, chi) == (0.0, 0.0)

    def test_zero_estimate_standardizes_to_one(self):
        chi = np.random.default_rng(1).standard_normal((2, 3, 3, 4))
        e1, e2 = error_metrics(np.zeros_like(chi), chi)
        assert e2 == 1.0

    def test_constant_offset(self):
        chi = np.random.default_rng(2).standard_normal((2, 3, 3, 4))
        e1, _ = error_metrics(chi + 1.0, chi)
        assert abs(e1 - 1.0) <= 1e-12

    def test_e2_identity(self):
        rng = np.random.default_rng(3)
        chi = rng.standard_normal((3, 4, 4, 5))
        chi_hat = chi + 0.1 * rng.standard_normal(chi.shape)
        e1, e2 = error_metrics(chi_hat, chi)
        sq_err = np.sum((chi_hat - chi) ** 2)
        assert abs(e2 * np.sum(chi**2) - sq_err) <= 1e-10 * sq_err

    def test_interior_region(self):
        rng = np.random.default_rng(4)
        chi = rng.standard_normal((2, 4, 4, 4))
        chi_hat = chi.copy()
        chi_hat[:, 0] += 10.0  # corrupt a boundary slab only
        mask = np.zeros((4, 4, 4), bool)
        mask[1:3, 1:3, 1:3] = True
        e1_int, _ = error_metrics(chi_hat, chi, "interior", mask)
        assert e1_int == 0.0
        e1_all, _ = error_metrics(chi_hat, chi, "all")
        assert e1_all > 1.0

    def test_zero_truth_rejected(self):
        with pytest.raises(NumericError):
            error_metrics(np.ones((1, 2, 2, 2)), np.zeros((1, 2, 2, 2)))

    def test_shape_mismatch(self):
        with pytest.raises(ConfigError):
            error_metrics(np.zeros((1, 2, 2, 2)), np.zeros((1, 2, 2, 3)))


class TestGdfmBaseline:
    def test_bit_identical_on_degenerate_spatial_axes(self):
        cfg = SimConfig(model="model_b", n=6, dims=(1, 1, 30), q=1, seed=31)
        x, _ = simulate_field(cfg)
        xd = demean(x)
        direct = estimate_common_component(xd, 1, "ep", (0, 0, 4), (0, 0, 4))
        stacked = gdfm_baseline(xd, 1, "ep", 4, 4)
        assert np.array_equal(direct.chi, stacked.chi)

    def test_shapes_and_mask(self):
        cfg = SimConfig(model="model_b", n=4, dims=(3, 4, 20), q=1, seed=32)
        x, _ = simulate_field(cfg)
        out = gdfm_baseline(demean(x), 1, "ep", 3, 2)
        assert out.chi.shape == (4, 3, 4, 20)
        assert out.stacked_estimate.chi.shape == (48, 1, 1, 20)
        # time-interior only; spatial axes unconstrained
        assert out.mask.shape == (3, 4, 20)
        assert out.mask[:, :, 2:18].all() and not out.mask[:, :, :2].any()

    def test_ignoring_space_costs_accuracy(self):
        cfg = SimConfig(model="model_b", n=20, dims=(8, 8, 16), q=2, seed=33)
        x, chi = simulate_field(cfg)
        xd = demean(x)
        est = estimate_common_component(xd, 2)
        base = gdfm_baseline(xd, 2)
        e1, _ = error_metrics(est.chi, chi.values)
        g1, _ = error_metrics(base.chi, chi.values)
        assert e1 < g1


class TestRunMcStudy:
    def test_accuracy_study_metrics(self):
        cfg = SimConfig(model="model_b", n=8, dims=(6, 6, 8), q=1, seed=41, n_reps=3)
        out = run_mc_study(cfg, "accuracy", bw=(2, 2, 2))
        assert out.n_reps == 3
        assert set(out.metrics) == {"E1", "E2", "E1_interior", "E2_interior"}
        assert all(len(v) == 3 for v in out.metrics.values())
        assert out.mean("E2") > 0

    def test_thread_count_does_not_change_results(self):
        cfg = SimConfig(model="model_b", n=8, dims=(6, 6, 8), q=1, seed=42, n_reps=4)
        seq = run_mc_study(cfg, "accuracy", bw=(2, 2, 2), threads=1)
        par = run_mc_study(cfg, "accuracy", bw=(2, 2, 2), threads=4)
        for name in seq.metrics:
            assert np.array_equal(seq.metrics[name], par.metrics[name])

    def test_comparison_study(self):
        cfg = SimConfig(model="model_b", n=10, dims=(5, 5, 12), q=1, seed=43, n_reps=2)
        out = run_mc_study(cfg, "comparison", bw=(1, 1, 3))
        assert "E1_gdfm" in out.metrics

    def test_failing_replication_names_itself(self):
        cfg = SimConfig(model="model_b", n=10, dims=(5, 5, 8), q=1, seed=44, n_reps=2)
        with pytest.raises(NumericError, match="replication 0"):
            # a two-point c grid cannot contain two stability intervals
            run_mc_study(cfg, "selection", q_max=3, bw=(2, 2, 2),
                         c_grid=np.array([0.0, 1e-6]), subsample_sizes=[8, 9])

    def test_csv_and_summary_outputs(self, tmp_path):
        cfg = SimConfig(model="model_b", n=8, dims=(5, 5, 8), q=1, seed=45, n_reps=2)
        out = run_mc_study(cfg, "accuracy", bw=(2, 2, 2))
        write_mc_csv(out, tmp_path / "mc.csv")
        write_mc_summary_json(out, tmp_path / "mc.json")
        lines = (tmp_path / "mc.csv").read_text().splitlines()
        assert lines[0].startswith("rep,")
        assert len(lines) == 3
        import json

        payload = json.loads((tmp_path / "mc.json").read_text())
        assert payload["n_reps"] == 2
        assert abs(payload["means"]["E1"] - out.mean("E1")) <= 1e-12
