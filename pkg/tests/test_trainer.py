import numpy as np
import pytest

from helpers import key_value_task, text_task, word_list
from mrckit.autograd import Tensor
from mrckit.corpus import TaskDataset
from mrckit.errors import ConfigError, NumericError
from mrckit.lm import train_answer_length_model, train_question_lm
from mrckit.trainer import (
    AdamaxState,
    EmaState,
    TrainConfig,
    adamax_step,
    clip_gradients,
    ema_update,
    evaluate,
    train,
)
from mrckit.weighting import TaskModels, answer_length, assign_weights, question_words


def scalar_params(value=0.0):
    return {"w": Tensor(np.array([value]), requires_grad=True)}


class TestAdamax:
    def test_two_step_hand_trace(self):
        # recurrences stepped by hand for gradient sequence [1, 1]:
        #   m1 = 0.1, u1 = 1, step1 = lr * (0.1/0.1) / (1 + eps)
        #   m2 = 0.19, u2 = 1, step2 = lr * (0.19/0.19) / (1 + eps)
        lr, eps = 0.5, 1e-8
        params = scalar_params(2.0)
        state = AdamaxState.init(params)
        adamax_step(params, {"w": np.array([1.0])}, state, lr)
        m1 = 0.1 * 1.0
        u1 = max(0.999 * 0.0, 1.0)
        x1 = 2.0 - (lr / (1 - 0.9)) * m1 / (u1 + eps)
        assert params["w"].data[0] == pytest.approx(x1, abs=1e-12)
        assert state.m["w"][0] == pytest.approx(m1, abs=1e-12)
        assert state.u["w"][0] == pytest.approx(u1, abs=1e-12)
        adamax_step(params, {"w": np.array([1.0])}, state, lr)
        m2 = 0.9 * m1 + 0.1 * 1.0
        u2 = max(0.999 * u1, 1.0)
        x2 = x1 - (lr / (1 - 0.9**2)) * m2 / (u2 + eps)
        assert params["w"].data[0] == pytest.approx(x2, abs=1e-12)
        assert state.m["w"][0] == pytest.approx(m2, abs=1e-12)
        assert state.u["w"][0] == pytest.approx(u2, abs=1e-12)

    def test_zero_gradient_leaves_parameter_unchanged(self):
        params = scalar_params(3.0)
        state = AdamaxState.init(params)
        for _ in range(5):
            adamax_step(params, {"w": np.zeros(1)}, state, 0.1)
        assert params["w"].data[0] == 3.0

    def test_zero_lr_updates_moments_only(self):
        params = scalar_params(1.0)
        state = AdamaxState.init(params)
        adamax_step(params, {"w": np.array([2.0])}, state, 0.0)
        assert params["w"].data[0] == 1.0
        assert state.m["w"][0] == pytest.approx(0.2)
        assert state.u["w"][0] == pytest.approx(2.0)

    def test_nonfinite_gradient_raises(self):
        params = scalar_params()
        state = AdamaxState.init(params)
        with pytest.raises(NumericError, match="w"):
            adamax_step(params, {"w": np.array([np.nan])}, state, 0.1)


class TestEma:
    def test_single_step(self):
        params = scalar_params(1.0)
        ema = EmaState.init(params, decay=0.995)
        ema_update(ema, params)
        assert ema.shadow["w"][0] == pytest.approx(0.005, abs=1e-15)

    def test_closed_form_constant_params(self):
        params = scalar_params(7.0)
        ema = EmaState.init(params, decay=0.995)
        for k in range(1, 41):
            ema_update(ema, params)
            want = 7.0 * (1 - 0.995**k)
            assert ema.shadow["w"][0] == pytest.approx(want, abs=1e-12)

    def test_zero_decay_tracks_params(self):
        params = scalar_params(-2.5)
        ema = EmaState.init(params, decay=0.0)
        ema_update(ema, params)
        assert ema.shadow["w"][0] == -2.5


class TestClip:
    def test_below_threshold_untouched(self):
        grads = {"a": np.array([3.0]), "b": np.array([4.0])}  # norm 5
        out = clip_gradients(grads, 10.0)
        assert out is grads

    def test_scales_to_max_norm(self):
        grads = {"a": np.array([3.0]), "b": np.array([4.0])}
        out = clip_gradients(grads, 1.0)
        total = np.sqrt(sum(float(np.sum(g * g)) for g in out.values()))
        assert total == pytest.approx(1.0)
        np.testing.assert_allclose(out["a"], [0.6])


def tiny_task(seed, n_train=40, n_dev=12, task_id=1, **kwargs):
    rng = np.random.default_rng(seed)
    return (
        key_value_task(rng, n_train, n_keys=8, n_values=8, task_id=task_id, **kwargs),
        key_value_task(rng, n_dev, n_keys=8, n_values=8, task_id=task_id, **kwargs),
    )


def tiny_config(**overrides):
    defaults = dict(
        batch_size=8,
        lr=0.01,
        dropout=0.0,
        epochs=3,
        mode="none",
        seed=5,
        emb_dim=6,
        hidden_dim=6,
        steps=2,
        deterministic=True,
    )
    defaults.update(overrides)
    return TrainConfig(**defaults)


class TestValidation:
    def test_mode_checked(self):
        with pytest.raises(ConfigError):
            tiny_config(mode="bogus").validate()

    def test_mixture_requires_alpha(self):
        with pytest.raises(ConfigError):
            tiny_config(mode="mixture").validate()

    def test_alpha_outside_mixture_rejected(self):
        with pytest.raises(ConfigError):
            tiny_config(mode="none", alpha=0.5).validate()

    def test_rates_checked(self):
        with pytest.raises(ConfigError):
            tiny_config(lr=0.0).validate()
        with pytest.raises(ConfigError):
            tiny_config(dropout=1.0).validate()


class TestEvaluate:
    def test_never_mutates_live_parameters(self):
        target, dev = tiny_task(0)
        cfg = tiny_config(epochs=1)
        result = train(target, [], cfg, dev)
        model = result.model
        before = {k: v.copy() for k, v in model.parameter_arrays().items()}
        shadow = {k: np.full_like(v, 0.123) for k, v in before.items()}
        evaluate(model, dev.samples, params_override=shadow)
        after = model.parameter_arrays()
        for name in before:
            np.testing.assert_array_equal(before[name], after[name])

    def test_empty_returns_zero_report(self):
        target, dev = tiny_task(0)
        cfg = tiny_config(epochs=1)
        result = train(target, [], cfg, dev)
        report = evaluate(result.model, [])
        assert report.n == 0


class TestTrainLoop:
    def test_single_task_runs_and_logs(self):
        target, dev = tiny_task(1)
        result = train(target, [], tiny_config(), dev)
        assert len(result.history) == 3
        assert len(result.loss_trajectory) == 3 * 5  # ceil(40/8) batches per epoch
        entry = result.history[0]
        for key in ("epoch", "train_loss", "dev_em", "dev_f1", "lr", "wall_ms"):
            assert key in entry.to_json()

    def test_best_checkpoint_is_earliest_argmax(self):
        target, dev = tiny_task(2)
        result = train(target, [], tiny_config(epochs=4), dev)
        metrics = [h.dev_f1 for h in result.history]
        best = max(metrics)
        assert result.best_epoch == metrics.index(best) + 1
        assert result.best_metric == best

    def test_identical_seed_reproduces_loss_trajectory_bitwise(self):
        target, dev = tiny_task(3)
        run1 = train(target, [], tiny_config(dropout=0.3), dev)
        run2 = train(target, [], tiny_config(dropout=0.3), dev)
        assert run1.loss_trajectory == run2.loss_trajectory
        assert [h.dev_f1 for h in run1.history] == [h.dev_f1 for h in run2.history]

    def test_mixture_alpha_zero_equals_single_task_bitwise(self):
        target, dev = tiny_task(4)
        aux, _ = tiny_task(40, task_id=2)
        single = train(target, [], tiny_config(), dev)
        mixed = train(
            target, [aux], tiny_config(mode="mixture", alpha=0.0), dev,
            vocab=single.vocab,
        )
        assert mixed.loss_trajectory == single.loss_trajectory
        assert [h.dev_em for h in mixed.history] == [h.dev_em for h in single.history]

    def test_mixture_schedule_counts(self):
        target, dev = tiny_task(5)  # 40 samples -> 5 batches
        aux, _ = tiny_task(41, n_train=80, task_id=2)  # 10 batches
        result = train(target, [aux], tiny_config(mode="mixture", alpha=0.4), dev)
        # floor(0.4 * 5) = 2 auxiliary batches joined each epoch
        assert len(result.loss_trajectory) == 3 * 7

    def test_ced_mode_uses_sample_weights(self):
        target, dev = tiny_task(6)
        aux, _ = tiny_task(42, task_id=2)
        for s in aux.samples:
            s.weight = 0.0
        with_weights = train(target, [aux], tiny_config(mode="ced"), dev)
        for s in aux.samples:
            s.weight = 1.0
        uniform = train(target, [aux], tiny_config(mode="ced"), dev)
        # zero-weight auxiliary batches contribute zero loss, so the
        # trajectories must differ from the uniform run at aux positions
        assert with_weights.loss_trajectory != uniform.loss_trajectory
        assert any(v == 0.0 for v in with_weights.loss_trajectory)

    def test_zero_weight_aux_gradients_are_zero(self):
        target, dev = tiny_task(7)
        aux, _ = tiny_task(43, task_id=2)
        result = train(target, [], tiny_config(epochs=1), dev)
        model = result.model
        for s in aux.samples:
            s.weight = 0.0
        batch = model.encode_batch(aux.samples[:4])
        _, grads, _ = model.gradients(batch)
        for name, g in grads.items():
            np.testing.assert_array_equal(g, np.zeros_like(g))

    def test_empty_target_rejected(self):
        target, dev = tiny_task(8)
        empty = TaskDataset(1, [])
        with pytest.raises(ConfigError):
            train(empty, [], tiny_config(), dev)

    def test_learns_the_copy_task(self):
        # scaled-down smoke of the pilot: EM climbs well above chance
        rng = np.random.default_rng(9)
        target = key_value_task(rng, 200, n_keys=12, n_values=12, task_id=1)
        dev = key_value_task(rng, 50, n_keys=12, n_values=12, task_id=1)
        cfg = TrainConfig(
            batch_size=16, lr=0.005, dropout=0.1, epochs=10, mode="none",
            seed=3, emb_dim=12, hidden_dim=12, steps=3, deterministic=False,
        )
        result = train(target, [], cfg, dev)
        assert result.best_report.em >= 0.5

    def test_cloze_dev_selects_by_accuracy(self):
        from mrckit.corpus import Cloze, Sample, make_token

        rng = np.random.default_rng(10)

        def cloze_ds(n, task_id):
            samples = []
            for i in range(n):
                words = [f"e{rng.integers(6)}" for _ in range(5)]
                gold_word = words[int(rng.integers(5))]
                occ = tuple(j for j, w in enumerate(words) if w == gold_word)
                other = tuple(j for j, w in enumerate(words) if w != gold_word)
                if not other:
                    continue
                samples.append(
                    Sample(
                        f"c{i}", task_id,
                        tuple(make_token(w) for w in ["find", gold_word]),
                        tuple(make_token(w) for w in words),
                        Cloze((occ, other), 0),
                    )
                )
            return TaskDataset(task_id, samples)

        target = cloze_ds(60, 1)
        dev = cloze_ds(20, 1)
        result = train(target, [], tiny_config(epochs=2), dev)
        assert result.best_metric == max(h.dev_accuracy for h in result.history)


def test_weighting_integrates_with_training():
    rng = np.random.default_rng(11)
    target = text_task(rng, 30, word_list("g", 20), task_id=1, passage_len=8)
    aux = text_task(rng, 25, word_list("z", 20), task_id=2, passage_len=8)
    dev = text_task(rng, 10, word_list("g", 20), task_id=1, passage_len=8)
    models = {}
    for ds in (target, aux):
        models[ds.task_id] = TaskModels(
            train_question_lm([question_words(s) for s in ds.samples], 2),
            train_answer_length_model([answer_length(s) for s in ds.samples]),
        )
    assign_weights(target, [aux], models)
    result = train(target, [aux], tiny_config(mode="ced", epochs=2), dev)
    assert len(result.history) == 2
    assert all(np.isfinite(v) for v in result.loss_trajectory)
