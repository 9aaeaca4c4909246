import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flexencoder.config import ModelConfig
from flexencoder.data import GRID, from_triples
from flexencoder.errors import DivergenceError, EmptyEvaluationError, ShapeError
from flexencoder.model import FlexModel
from flexencoder.nn import Activation
from flexencoder.optim import OptimizerKind
from flexencoder.trainer import evaluate, fit, predict_row, prepare, top_n, train

from conftest import random_table


def cfg(**kw):
    base = dict(hidden_layers=(8,), epochs=2, train_batch_size=8, lr=0.01, seed=3)
    base.update(kw)
    return ModelConfig(**base)


def zero_linear_model(n, dtype=np.float64):
    model = FlexModel(n, (4,), None, dtype=dtype)
    for p in model.parameters().values():
        p[...] = 0
    return model


def test_epochs_zero_evaluates_initial_model(small_table):
    model, report = train(cfg(epochs=0), small_table)
    assert report.history == []
    assert math.isfinite(report.rmse) and report.evaluated_count > 0


def test_training_is_deterministic(small_table):
    c = cfg(noise_prob=0.3, drop_prob=0.2, dense_refeed=2, epochs=3)
    m1, r1 = train(c, small_table)
    m2, r2 = train(c, small_table)
    assert r1.rmse == r2.rmse and r1.history == r2.history
    for name, p in m1.parameters().items():
        np.testing.assert_array_equal(p, m2.parameters()[name])
    assert r1.line(omit_timing=True) == r2.line(omit_timing=True)


def test_different_seed_changes_result(small_table):
    _, r1 = train(cfg(seed=1), small_table)
    _, r2 = train(cfg(seed=2), small_table)
    assert r1.rmse != r2.rmse


def test_zero_linear_model_predicts_row_means(small_table):
    c = cfg(mean_normalization=True)
    split_ = prepare(c, small_table)
    model = zero_linear_model(split_.train.n_cols)
    report = evaluate(model, c, split_)
    # oracle: every hidden target is predicted by its row's train mean
    from flexencoder.trainer import _eval_targets

    t = _eval_targets(split_, c.test_mask_rate, c.seed)
    mu = split_.means.row_means[split_.test_rows[t]]
    err = mu - split_.test_ratings[t]
    assert report.rmse == pytest.approx(math.sqrt(np.mean(err**2)), rel=1e-12)


def test_hidden_targets_never_reach_the_input(small_table, monkeypatch):
    c = cfg(mean_normalization=False)
    split_ = prepare(c, small_table)
    from flexencoder import trainer

    t = trainer._eval_targets(split_, c.test_mask_rate, c.seed)
    hidden = set(zip(split_.test_rows[t].tolist(), split_.test_cols[t].tolist()))
    seen = []
    real = trainer.predict_dense

    def spy(model, config, inputs, observed, row_means):
        seen.append(observed.copy())
        return real(model, config, inputs, observed, row_means)

    monkeypatch.setattr(trainer, "predict_dense", spy)
    model = FlexModel(split_.train.n_cols, (4,), Activation.TANH, dtype=np.float64)
    trainer.evaluate(model, c, split_)
    rows = np.unique(split_.test_rows[t])
    observed = np.concatenate(seen)
    for k, r in enumerate(rows):
        for col in np.nonzero(observed[k])[0]:
            assert (int(r), int(col)) not in hidden


def test_perfect_predictions_give_zero_rmse(small_table, monkeypatch):
    from flexencoder import trainer

    c = cfg()
    split_ = prepare(c, small_table)
    full = np.zeros((split_.train.n_rows, split_.train.n_cols))
    full[split_.test_rows, split_.test_cols] = split_.test_ratings
    r, cl, v = split_.train.triples()
    full[r, cl] = v
    calls = []

    def oracle(model, config, inputs, observed, row_means):
        rows = np.unique(split_.test_rows[trainer._eval_targets(split_, c.test_mask_rate, c.seed)])
        start = sum(len(x) for x in calls)
        calls.append(inputs)
        return full[rows[start : start + inputs.shape[0]]]

    monkeypatch.setattr(trainer, "predict_dense", oracle)
    assert trainer.evaluate(None, c, split_).rmse == 0.0


def test_prediction_rounding_lands_on_grid(small_table):
    c = cfg(prediction_rounding=True)
    model, _ = train(c, small_table)
    pred = predict_row(model, c, [0, 3], [4.0, 2.5], row_mean=3.25)
    assert np.isin(pred, GRID).all()


def test_predict_row_width_and_finite(small_table):
    c = cfg()
    model, _ = train(c, small_table)
    pred = predict_row(model, c, [1, 2], [5.0, 1.0], row_mean=3.0)
    assert pred.shape == (model.n,) and np.isfinite(pred).all()
    with pytest.raises(ShapeError):
        predict_row(model, c, [model.n], [3.0], row_mean=3.0)
    with pytest.raises(ValueError):
        predict_row(model, c, [1], [3.0])


@settings(max_examples=100)
@given(st.lists(st.integers(0, 5), min_size=1, max_size=30), st.integers(0, 30))
def test_top_n_matches_sort_oracle(values, n):
    pred = np.array(values, dtype=float)
    oracle = sorted(range(len(values)), key=lambda i: (-values[i], i))[:n]
    assert top_n(pred, n).tolist() == oracle


def test_empty_evaluation_is_reported(small_table):
    with pytest.raises(EmptyEvaluationError):
        train(cfg(test_mask_rate=0.0), small_table)


def test_divergence_is_raised():
    t = random_table(10, 12, 0.5, 0)
    c = cfg(lr=1e6, optimizer=OptimizerKind.SGD, activation=Activation.RELU, epochs=20, mean_normalization=False)
    with pytest.raises(DivergenceError):
        train(c, t)


def test_fit_rejects_width_mismatch(small_table):
    c = cfg()
    split_ = prepare(c, small_table)
    with pytest.raises(ShapeError):
        fit(FlexModel(split_.train.n_cols + 1, (3,)), c, split_.train, split_.means)


def test_training_reduces_train_rmse():
    t = random_table(40, 30, 0.5, 7)
    _, report = train(cfg(epochs=15, optimizer=OptimizerKind.ADAM, activation=Activation.SELU), t)
    assert report.history[-1] < report.history[0]


def test_item_based_uses_item_rows(small_table):
    split_ = prepare(cfg(pivot="item"), small_table)
    assert split_.train.n_rows == small_table.n_items
    assert split_.train.n_cols == small_table.n_users
