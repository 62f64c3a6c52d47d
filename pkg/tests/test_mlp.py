"""Tests for the neural predictors: forward, gradients, training loops."""

import math

import numpy as np
import pytest

from rfprop.mlp import (HIDDEN, VARIANT_DIMS, MlpModel, TrainConfig,
                        TrainingError, evaluate, feature_subset, load_model,
                        loss_and_grads, save_model, train_offline,
                        train_online_step)

from helpers import make_fv, make_sample
from oracles import finite_difference_grads


class TestFeatureSubset:
    def test_vis_encoding(self):
        f = make_fv(distance=10.0, strictly_visible=True)
        np.testing.assert_allclose(feature_subset("vis", f), [1.0, 1.0, 0.0])

    def test_all_has_eight_features(self):
        f = make_fv(distance=10.0)
        assert len(feature_subset("all", f)) == 8

    def test_vox_passthrough(self):
        f = make_fv(distance=10.0, strictly_visible=False,
                    strictly_not_visible=True, n_occupied=3, n_free=17,
                    n_maybe=1, n_unknown=2, not_free_meters=3.0)
        np.testing.assert_allclose(feature_subset("vox", f),
                                   [1.0, 3.0, 1.0, 17.0, 2.0])

    def test_dims_match_table(self):
        f = make_fv()
        for variant, dim in VARIANT_DIMS.items():
            assert len(feature_subset(variant, f)) == dim

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            feature_subset("gp", make_fv())


class TestForward:
    def test_zero_weights_give_bias(self):
        model = MlpModel(variant="ref", W1=np.zeros((2, HIDDEN)),
                         b1=np.zeros(HIDDEN), W2=np.zeros(HIDDEN), b2=7.5,
                         norm_mean=np.zeros(2), norm_std=np.ones(2))
        assert model.forward(np.array([3.0, -1.0])) == 7.5

    def test_centered_input(self):
        rng = np.random.default_rng(0)
        model = MlpModel.init("ref", rng)
        model.norm_mean = np.array([2.0, -3.0])
        model.b1 = rng.normal(size=HIDDEN)
        got = model.forward(np.array([2.0, -3.0]))
        expect = float(np.maximum(model.b1, 0.0) @ model.W2 + model.b2)
        assert got == pytest.approx(expect, rel=1e-12)

    def test_dimension_mismatch(self):
        model = MlpModel.init("vox", np.random.default_rng(0))
        with pytest.raises(ValueError):
            model.forward(np.array([1.0, 2.0]))


def flatten_params(model):
    return np.concatenate([model.W1.ravel(), model.b1, model.W2,
                           [model.b2]])


def unflatten_into(model, flat):
    d = model.input_dim
    n1 = d * HIDDEN
    model.W1 = flat[:n1].reshape(d, HIDDEN).copy()
    model.b1 = flat[n1:n1 + HIDDEN].copy()
    model.W2 = flat[n1 + HIDDEN:n1 + 2 * HIDDEN].copy()
    model.b2 = float(flat[-1])


class TestGradients:
    def test_analytic_matches_central_differences(self):
        rng = np.random.default_rng(42)
        for trial in range(20):
            variant = ("vis", "vox", "ref", "diff", "all")[trial % 5]
            dim = VARIANT_DIMS[variant]
            model = MlpModel.init(variant, rng)
            model.norm_mean = rng.normal(size=dim)
            model.norm_std = rng.uniform(0.5, 2.0, size=dim)
            model.b1 = rng.normal(size=HIDDEN) * 0.3
            model.b2 = float(rng.normal())
            x = rng.normal(size=(8, dim))
            y = rng.normal(size=8) * 10.0

            _, grads = loss_and_grads(model, x, y)
            analytic = np.concatenate([grads["W1"].ravel(), grads["b1"],
                                       grads["W2"], [grads["b2"]]])

            probe = model.copy()

            def loss_at(flat, probe=probe, x=x, y=y):
                unflatten_into(probe, flat)
                loss, _ = loss_and_grads(probe, x, y)
                return loss

            numeric = finite_difference_grads(loss_at, flatten_params(model))
            scale = np.maximum(np.abs(numeric), 1e-3)
            assert np.max(np.abs(analytic - numeric) / scale) < 1e-4


def teacher_student_samples(n, seed=0, sigma=0.0):
    """Targets produced by a fixed random net over the `ref` features.

    The teacher normalizes inputs with the sampling distribution's own
    statistics so its function is smooth at the student's input scale.
    """
    rng = np.random.default_rng(seed)
    teacher = MlpModel.init("ref", rng)
    teacher.b1 = rng.normal(size=HIDDEN) * 0.5
    teacher.b2 = 60.0
    teacher.W2 = teacher.W2 * 5.0
    # sampling distribution: log10(d) uniform over U(1.5, 150), rl uniform
    ds = 10.0 ** rng.uniform(np.log10(1.5), np.log10(150.0), 4096)
    rls = rng.uniform(-20.0, 6.0, 4096)
    probe = np.stack([np.log10(ds), rls], axis=1)
    teacher.norm_mean = probe.mean(axis=0)
    teacher.norm_std = probe.std(axis=0)
    samples = []
    for _ in range(n):
        d = 10.0 ** rng.uniform(np.log10(1.5), np.log10(150.0))
        rl = rng.uniform(-20.0, 6.0)
        f = make_fv(distance=d, reflection_loss=rl)
        y = teacher.forward(feature_subset("ref", f))
        if sigma:
            y += rng.normal(0.0, sigma)
        samples.append(make_sample(f, y))
    return samples


class TestOfflineTraining:
    def test_teacher_student_recovery(self):
        samples = teacher_student_samples(8000, seed=5)
        model, report = train_offline(
            samples, "ref", TrainConfig(seed=9, learning_rate=1e-2))
        assert report.final_holdout_mae < 0.5

    def test_too_few_samples(self):
        samples = teacher_student_samples(10)
        with pytest.raises(TrainingError):
            train_offline(samples, "vox")

    def test_deterministic_for_fixed_seed(self):
        samples = teacher_student_samples(600, seed=2)
        cfg = TrainConfig(seed=3, max_epochs=5)
        m1, _ = train_offline(samples, "ref", cfg)
        m2, _ = train_offline(samples, "ref", cfg)
        assert np.array_equal(m1.W1, m2.W1)
        assert np.array_equal(m1.W2, m2.W2)
        assert m1.b2 == m2.b2
        m3, _ = train_offline(samples, "ref", TrainConfig(seed=4, max_epochs=5))
        assert not np.array_equal(m1.W1, m3.W1)

    def test_loss_descends(self):
        samples = teacher_student_samples(2000, seed=6, sigma=1.0)
        _, report = train_offline(samples, "ref",
                                  TrainConfig(seed=1, max_epochs=30))
        assert report.epochs[-1][1] <= report.epochs[0][1]

    def test_normalization_invariance(self):
        samples = teacher_student_samples(1500, seed=7, sigma=0.5)
        rescaled = [make_sample(
            make_fv(distance=s.features.distance,
                    reflection_loss=3.0 * s.features.reflection_loss + 11.0),
            s.measured_pl) for s in samples]
        cfg = TrainConfig(seed=5, max_epochs=15)
        _, rep_a = train_offline(samples, "ref", cfg)
        _, rep_b = train_offline(rescaled, "ref", cfg)
        assert rep_a.final_holdout_mae == pytest.approx(
            rep_b.final_holdout_mae, abs=1e-6)

    def test_zero_variance_feature_warns(self):
        samples = [make_sample(make_fv(distance=10.0,
                                       reflection_loss=2.0), 60.0)
                   for _ in range(40)]
        for i, s in enumerate(samples):
            object.__setattr__(s.features, "distance", 10.0 + i)  # frozen
        with pytest.warns(UserWarning, match="zero variance"):
            train_offline(samples, "ref", TrainConfig(seed=0, max_epochs=1))

    def test_nn_vis_matches_visibility_model(self):
        # both capture exactly the same information on a two-regime world
        from rfprop.conventional import fit_visibility, make_predictor
        from rfprop.mlp import evaluate
        rng = np.random.default_rng(14)
        samples = []
        for _ in range(8000):
            d = 10.0 ** rng.uniform(np.log10(2.0), np.log10(150.0))
            vis = bool(rng.integers(0, 2))
            p = (36.5, 2.75) if vis else (13.72, 4.81)
            pl = p[0] + p[1] * 10 * np.log10(d) + rng.normal(0.0, 3.43)
            samples.append(make_sample(
                make_fv(distance=d, strictly_visible=vis,
                        strictly_not_visible=not vis,
                        n_occupied=0 if vis else 3,
                        not_free_meters=0.0 if vis else 1.5), pl))
        hold = samples[6000:]
        model, _ = train_offline(samples[:6000], "vis",
                                 TrainConfig(seed=4, learning_rate=1e-2))
        fitted = fit_visibility(samples[:6000])
        mae_nn = evaluate(model, hold).mae
        mae_vis = evaluate(make_predictor("visibility", fitted), hold).mae
        assert abs(mae_nn - mae_vis) < 0.5

    def test_convergence_stops_early(self):
        # constant target converges almost immediately
        samples = [make_sample(make_fv(distance=float(d),
                                       reflection_loss=float(d % 7)), 42.0)
                   for d in np.linspace(2, 100, 400)]
        _, report = train_offline(samples, "ref",
                                  TrainConfig(seed=0, max_epochs=100))
        assert report.converged
        assert len(report.epochs) < 100


class TestOnlineTraining:
    def test_empty_window_is_noop(self):
        samples = teacher_student_samples(600, seed=2)
        model, _ = train_offline(samples, "ref", TrainConfig(seed=1,
                                                             max_epochs=3))
        before = (model.W1.copy(), model.b1.copy(), model.W2.copy(), model.b2,
                  model.step_count)
        report = train_online_step(model, [], TrainConfig(seed=1))
        assert report.steps == 0
        assert np.array_equal(model.W1, before[0])
        assert np.array_equal(model.b1, before[1])
        assert np.array_equal(model.W2, before[2])
        assert model.b2 == before[3] and model.step_count == before[4]

    def test_window_step_count(self):
        # 2644-sample window, batch 2048 -> 2 batches/epoch, 10 epochs
        samples = teacher_student_samples(2644, seed=3)
        model, _ = train_offline(samples[:600], "ref",
                                 TrainConfig(seed=1, max_epochs=2))
        report = train_online_step(model, samples, TrainConfig(seed=1))
        assert report.steps == 10 * math.ceil(2644 / 2048) == 20

    def test_norm_stats_frozen(self):
        samples = teacher_student_samples(800, seed=4)
        model, _ = train_offline(samples, "ref", TrainConfig(seed=1,
                                                             max_epochs=2))
        mean = model.norm_mean.copy()
        std = model.norm_std.copy()
        train_online_step(model, teacher_student_samples(300, seed=9),
                          TrainConfig(seed=1))
        assert np.array_equal(model.norm_mean, mean)
        assert np.array_equal(model.norm_std, std)

    def test_moments_persist_across_calls(self):
        samples = teacher_student_samples(800, seed=4)
        model, _ = train_offline(samples, "ref", TrainConfig(seed=1,
                                                             max_epochs=2))
        t0 = model.step_count
        train_online_step(model, samples[:100], TrainConfig(seed=1))
        t1 = model.step_count
        assert t1 > t0
        train_online_step(model, samples[:100], TrainConfig(seed=1))
        assert model.step_count > t1

    def test_fresh_model_warns(self):
        rng = np.random.default_rng(0)
        model = MlpModel.init("ref", rng)
        with pytest.warns(UserWarning, match="offline"):
            train_online_step(model, teacher_student_samples(50),
                              TrainConfig(seed=0))


class TestEvaluate:
    def test_oracle_predictor(self):
        samples = [make_sample(make_fv(distance=d), 50.0 + d)
                   for d in (2.0, 5.0, 9.0)]
        result = evaluate(lambda f: 50.0 + f.distance, samples)
        assert result.mae == 0.0

    def test_constant_predictor_arithmetic(self):
        samples = [make_sample(make_fv(distance=2.0), 8.0),
                   make_sample(make_fv(distance=3.0), 14.0)]
        result = evaluate(lambda f: 10.0, samples)  # errors +2 and -4
        assert result.mae == pytest.approx(3.0)
        assert result.counts.sum() == 2

    def test_histogram_bins(self):
        samples = [make_sample(make_fv(distance=2.0), 0.0)]
        result = evaluate(lambda f: 0.5, samples)
        assert len(result.counts) == 80
        assert result.counts[40] == 1  # error +0.5 in [0, 1) bin

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            evaluate(lambda f: 0.0, [])

    def test_model_predictor(self):
        samples = teacher_student_samples(400, seed=8)
        model, _ = train_offline(samples, "ref", TrainConfig(seed=1,
                                                             max_epochs=5))
        result = evaluate(model, samples)
        assert math.isfinite(result.mae)


class TestModelFile:
    def test_round_trip_bit_exact(self, tmp_path):
        samples = teacher_student_samples(700, seed=11)
        model, _ = train_offline(samples, "ref", TrainConfig(seed=2,
                                                             max_epochs=3))
        path = str(tmp_path / "model.txt")
        save_model(model, path)
        back = load_model(path)
        assert back.variant == model.variant
        assert np.array_equal(back.W1, model.W1)
        assert np.array_equal(back.b1, model.b1)
        assert np.array_equal(back.W2, model.W2)
        assert back.b2 == model.b2
        assert np.array_equal(back.norm_mean, model.norm_mean)
        assert back.step_count == model.step_count
        for key, value in model.adam.items():
            if isinstance(value, np.ndarray):
                assert np.array_equal(back.adam[key], value)
            else:
                assert back.adam[key] == value

    def test_online_continuation_after_reload(self, tmp_path):
        samples = teacher_student_samples(700, seed=12)
        cfg = TrainConfig(seed=2, max_epochs=3)
        model, _ = train_offline(samples, "ref", cfg)
        path = str(tmp_path / "model.txt")
        save_model(model, path)
        reloaded = load_model(path)
        window = teacher_student_samples(200, seed=13)
        train_online_step(model, window, cfg)
        train_online_step(reloaded, window, cfg)
        assert np.array_equal(model.W1, reloaded.W1)
        assert model.b2 == reloaded.b2

    def test_magic_enforced(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("something else\n")
        with pytest.raises(ValueError):
            load_model(str(path))

    def test_report_csv(self, tmp_path):
        samples = teacher_student_samples(400, seed=1)
        _, report = train_offline(samples, "ref", TrainConfig(seed=0,
                                                              max_epochs=3))
        path = tmp_path / "report.csv"
        report.write_csv(str(path))
        lines = path.read_text().splitlines()
        assert lines[0] == "epoch,train_mae_db,holdout_mae_db"
        assert len(lines) == 1 + len(report.epochs)
