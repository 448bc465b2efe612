import json
import math

import numpy as np
import pytest

from core.autodiff import backward
from core.errors import ConfigError, DimensionError, NumericError
from core.network import Layer, default_architecture, sequential
from models import Dataset
from services.interval_propagation import RobustSpec, sample_box, widen
from services.losses import INTERVAL, MSE, SYMBOLIC, compute_loss
from services.training import (AdamState, MetricsLog, OptimizerConfig, Schedule, Stage, TrainingResult,
                               adam_step, evaluate_loss, init_weights, mean_absolute_error, staged_schedule,
                               parse_stage, run_schedule, select_top_k, train_step, warmup_kappa)


def test_optimizer_config_validation():
    OptimizerConfig()
    for bad in ({'learning_rate': 0.0}, {'beta1': 1.0}, {'beta2': -0.1}, {'epsilon': 0.0}, {'seed': -1}):
        with pytest.raises(ConfigError):
            OptimizerConfig(**bad)


def test_first_adam_step_moves_by_learning_rate():
    params = {'w': np.array([1.0, -2.0, 0.5])}
    grads = {'w': np.array([0.3, -4.0, 0.0])}
    new, state = adam_step(params, grads, AdamState(), OptimizerConfig(learning_rate=0.1))
    assert state.t == 1
    np.testing.assert_allclose(new['w'], [0.9, -1.9, 0.5], atol=1e-6)


def test_adam_step_does_not_mutate_inputs():
    params = {'w': np.ones(2)}
    state = AdamState()
    adam_step(params, {'w': np.ones(2)}, state, OptimizerConfig())
    np.testing.assert_array_equal(params['w'], [1.0, 1.0])
    assert state.t == 0 and state.m == {}


def test_adam_bias_correction_over_steps():
    config = OptimizerConfig(learning_rate=0.01)
    params, state = {'w': np.array([0.0])}, AdamState()
    for _ in range(5):
        params, state = adam_step(params, {'w': np.array([2.0])}, state, config)
    # a constant gradient keeps the corrected step at the learning rate
    np.testing.assert_allclose(params['w'], [-0.05], atol=1e-6)


def test_adam_shape_mismatch():
    with pytest.raises(DimensionError):
        adam_step({'w': np.ones(3)}, {'w': np.ones(2)}, AdamState(), OptimizerConfig())


def test_init_weights_is_seeded_and_bounded():
    net = default_architecture((16, 16, 1))
    first, again, other = init_weights(net, 3), init_weights(net, 3), init_weights(net, 4)
    for name, value in first.parameter_arrays().items():
        np.testing.assert_array_equal(value, again.parameter_arrays()[name])
        if name.endswith('.bias'):
            assert not value.any()
    w = first.parameter_arrays()['fc40.weight']
    assert np.abs(w).max() <= math.sqrt(6.0 / (100 + 40))
    assert not np.array_equal(w, other.parameter_arrays()['fc40.weight'])


@pytest.mark.parametrize("text,kind,lr,epochs", [("mse:0.01:20", MSE, 0.01, 20),
                                                 ("symbolic:0.001:10", SYMBOLIC, 0.001, 10)])
def test_parse_stage(text, kind, lr, epochs):
    stage = parse_stage(text, spec=RobustSpec(10.0, 10, 0.01))
    assert (stage.kind, stage.learning_rate, stage.epochs) == (kind, lr, epochs)


@pytest.mark.parametrize("text", ["mse:0.01", "adam:0.01:3", "mse:fast:3", "mse:0.01:0", "symbolic:0.1:2"])
def test_parse_stage_rejects(text):
    with pytest.raises(ConfigError):
        parse_stage(text)


def test_interval_stage_takes_delta():
    stage = parse_stage("interval:0.001:5", delta=4.0)
    assert stage.tolerance == (4.0,)


def test_default_staged_schedule():
    schedule = staged_schedule(RobustSpec(10.0, 10, 0.01))
    assert [(s.kind, s.learning_rate, s.epochs) for s in schedule.stages] == \
        [(MSE, 0.01, 20), (MSE, 0.001, 10), (SYMBOLIC, 0.001, 10)]


def test_warmup_kappa_ramps_over_first_half():
    assert [warmup_kappa(0.01, e, 10) for e in range(7)] == pytest.approx(
        [0.0, 0.002, 0.004, 0.006, 0.008, 0.01, 0.01])
    assert warmup_kappa(0.5, 0, 1) == 0.5
    assert warmup_kappa(0.5, 0, 2) == 0.0


def _linear_problem(rng, n=64):
    x = rng.uniform(-1, 1, size=(n, 3))
    labels = x @ np.array([2.0, -1.0, 0.5]) + 3.0
    return Dataset(x, labels)


def _small_net():
    return sequential((3,), [Layer.dense('fc1', 3, 8), Layer.relu('relu1'), Layer.dense('out', 8, 1)])


def test_mse_schedule_reduces_loss(rng):
    data = _linear_problem(rng)
    net = init_weights(_small_net(), 0)
    before = evaluate_loss(net, data)
    result = run_schedule(net, data, Schedule((Stage(MSE, 0.01, 30),), batch_size=16), OptimizerConfig(seed=0))
    assert evaluate_loss(result.network, data) < 0.1 * before
    assert [r['epoch'] for r in result.metrics] == list(range(1, 31))
    assert {'stage', 'kind', 'loss', 'kappa', 'learning_rate', 'wall_time', 'rss_mb'} <= set(result.metrics[0])


def test_training_is_deterministic_per_seed(rng):
    data = _linear_problem(rng)
    schedule = Schedule((Stage(MSE, 0.01, 3),), batch_size=8)
    runs = [run_schedule(init_weights(_small_net(), 5), data, schedule, OptimizerConfig(seed=5)) for _ in range(2)]
    for name, value in runs[0].network.parameter_arrays().items():
        np.testing.assert_array_equal(value, runs[1].network.parameter_arrays()[name])


def test_symbolic_zero_tolerance_zero_kappa_follows_mse(rng):
    data = _linear_problem(rng, n=32)
    net = init_weights(_small_net(), 1)
    spec = RobustSpec(0.0, 3, 0.0)
    mse = run_schedule(net, data, Schedule((Stage(MSE, 0.01, 4),), batch_size=8), OptimizerConfig(seed=1))
    symbolic = run_schedule(net, data, Schedule((Stage(SYMBOLIC, 0.01, 4, spec=spec),), batch_size=8),
                            OptimizerConfig(seed=1))
    for name, value in mse.network.parameter_arrays().items():
        np.testing.assert_array_equal(symbolic.network.parameter_arrays()[name], value)


def test_full_batch_mse_loss_is_nonincreasing_after_epoch_five(rng):
    x = rng.uniform(-1, 1, size=(32, 3))
    data = Dataset(x, x @ np.array([4.0, -5.0, 3.0]) + 2.0)
    net = init_weights(sequential((3,), [Layer.dense('fc1', 3, 1)]), 3)
    result = run_schedule(net, data, Schedule((Stage(MSE, 0.01, 40),), batch_size=32), OptimizerConfig(seed=3))
    losses = [r['loss'] for r in result.metrics]
    assert all(later <= earlier for earlier, later in zip(losses[4:], losses[5:])), losses


def test_single_sample_linear_regression_converges():
    data = Dataset(np.array([[0.5, -0.3, 0.8]]), np.array([[0.5]]))
    net = init_weights(sequential((3,), [Layer.dense('fc1', 3, 1)]), 0)
    result = run_schedule(net, data, Schedule((Stage(MSE, 0.01, 500),), batch_size=1), OptimizerConfig())
    assert evaluate_loss(result.network, data) < 1e-6


def test_batch_inside_tolerance_band_leaves_parameters_unchanged(rng):
    data = _linear_problem(rng, n=8)
    net = init_weights(_small_net(), 2)
    spec = RobustSpec(1e6, 3, 0.1)
    stage = Stage(SYMBOLIC, 0.01, 1, spec=spec)

    report = compute_loss(SYMBOLIC, net.trainable(), data, spec=spec)
    assert report.value == 0.0
    gradients = backward(report.tensor)
    assert all(not np.any(g) for g in gradients.values())

    updated, state, _ = train_step(net, data, stage, spec, AdamState(), OptimizerConfig())
    assert state.t == 1
    for name, value in net.parameter_arrays().items():
        np.testing.assert_array_equal(updated.parameter_arrays()[name], value)


def test_initialised_reference_architecture_is_finite_on_a_blank_image():
    net = init_weights(default_architecture(), 0)
    out = net.forward(np.zeros((128, 320, 1))).data
    assert out.shape == (1,)
    assert np.all(np.isfinite(out))


def test_staged_schedule_logs_kappa_warmup(rng, tmp_path):
    data = _linear_problem(rng, n=16)
    spec = RobustSpec(1.0, 3, 0.2)
    schedule = Schedule((Stage(MSE, 0.01, 2), Stage(INTERVAL, 0.01, 1, delta=(1.0,)),
                         Stage(SYMBOLIC, 0.001, 4, spec=spec)), batch_size=8)
    log = MetricsLog(tmp_path / 'metrics.jsonl')
    result = run_schedule(init_weights(_small_net(), 0), data, schedule, OptimizerConfig(), log)
    records = [json.loads(line) for line in (tmp_path / 'metrics.jsonl').read_text().splitlines()]
    assert records == result.metrics
    assert [r['kind'] for r in records] == [MSE, MSE, INTERVAL] + [SYMBOLIC] * 4
    assert [r['kappa'] for r in records[3:]] == pytest.approx([0.0, 0.1, 0.2, 0.2])


def test_non_finite_loss_aborts(rng):
    data = _linear_problem(rng, n=8)
    data.labels[3, 0] = np.nan
    with pytest.raises(NumericError, match='epoch 1'):
        run_schedule(init_weights(_small_net(), 0), data, Schedule((Stage(MSE, 0.01, 1),)), OptimizerConfig())


def test_schedule_checks_layer_index(rng):
    data = _linear_problem(rng, n=8)
    schedule = Schedule((Stage(SYMBOLIC, 0.01, 1, spec=RobustSpec(1.0, 9, 0.1)),))
    with pytest.raises(ConfigError):
        run_schedule(_small_net(), data, schedule, OptimizerConfig())


def test_validation_metrics(rng):
    data = _linear_problem(rng)
    train, validation = data.split(0.25, rng)
    result = run_schedule(init_weights(_small_net(), 0), train, Schedule((Stage(MSE, 0.01, 2),)),
                          OptimizerConfig(), validation=validation)
    assert result.validation_loss == pytest.approx(evaluate_loss(result.network, validation))
    assert 'validation_mse' in result.metrics[-1]
    assert mean_absolute_error(result.network, validation) >= 0


def test_select_top_k_orders_by_validation_loss():
    results = [TrainingResult(None, [], loss, seed) for seed, loss in enumerate([0.5, 0.1, 0.3, 0.1])]
    assert [r.seed for r in select_top_k(results, 3)] == [1, 3, 2]
    with pytest.raises(ConfigError):
        select_top_k(results, 0)


def test_zero_symbolic_loss_gives_the_robustness_guarantee():
    rng = np.random.default_rng(21)
    x = rng.uniform(-1, 1, size=(20, 3))
    data = Dataset(x, 20.0 + 5.0 * x.sum(axis=1))
    net = init_weights(sequential((3,), [Layer.dense('fc1', 3, 16), Layer.relu('relu1'),
                                         Layer.dense('out', 16, 1)]), 0)
    spec = RobustSpec(10.0, 3, 0.01)
    schedule = Schedule((Stage(SYMBOLIC, 0.05, 50, spec=spec),), batch_size=20)
    for round_ in range(20):
        net = run_schedule(net, data, schedule, OptimizerConfig(seed=round_)).network
        if evaluate_loss(net, data, SYMBOLIC, spec) < 1e-12:
            break
    assert evaluate_loss(net, data, SYMBOLIC, spec) < 1e-12

    sampler = np.random.default_rng(22)
    for i in range(len(data)):
        fv = net.forward_to(2, data.inputs[i]).data
        outputs = net.forward_from(3, sample_box(widen(fv, 0.01), 10_000, sampler)).data
        assert np.all(np.abs(outputs - data.labels[i]) <= 10.0 + 1e-5)
