import pytest
import yaml

from config import (CompareConfig, Config, DataPrepConfig, RunConfig, TrainConfig, load_run_config)
from core.errors import ConfigError
from services.attack_eval import default_epsilon_grid


@pytest.fixture
def dataset_dir(tmp_path):
    path = tmp_path / 'dataset'
    path.mkdir()
    (path / 'index.jsonl').write_text('')
    return path


def _write(tmp_path, payload, name='run.yaml'):
    path = tmp_path / name
    path.write_text(payload if isinstance(payload, str) else yaml.safe_dump(payload))
    return path


def test_default_file_matches_defaults():
    run = load_run_config(Config.DEFAULT_CONFIG_PATH)
    assert run.train.stages == ['mse:0.01:20', 'mse:0.001:10']
    assert run.train.layer == 'fc40'
    assert run.compare.names == ['baseline', 'robust']
    assert run.data_prep.duplicate_rare is True
    assert load_run_config() == RunConfig()


def test_partial_file_keeps_defaults(tmp_path):
    run = load_run_config(_write(tmp_path, {'train': {'kappa': 0.05}, 'log_level': 'DEBUG'}))
    assert run.train.kappa == 0.05
    assert run.train.delta == 10.0
    assert run.log_level == 'DEBUG'


@pytest.mark.parametrize("payload", [{'bogus': {}}, {'train': {'learning_rate': 0.1}}, '- a\n- b\n', 'train: [\n'])
def test_bad_files_are_config_errors(tmp_path, payload):
    with pytest.raises(ConfigError):
        load_run_config(_write(tmp_path, payload))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / 'absent.yaml')


def test_overrides_apply_to_one_section():
    run = RunConfig()
    updated = run.with_overrides('train', {'kappa': 0.05, 'seed': None, 'log_level': 'WARNING'})
    assert updated.train.kappa == 0.05
    assert updated.train.seed == run.train.seed
    assert updated.certify.kappa == run.certify.kappa
    assert updated.log_level == 'WARNING'
    assert run.train.kappa == 0.01
    with pytest.raises(ConfigError):
        run.with_overrides('train', {'epsilon_step': 0.1})
    with pytest.raises(ConfigError):
        run.section('evaluate')


def test_dump_round_trip(tmp_path):
    run = RunConfig().with_overrides('compare', {'names': ['mse', 'symbolic'], 'workers': 4})
    run.dump(tmp_path / 'out' / 'config.yaml')
    assert load_run_config(tmp_path / 'out' / 'config.yaml') == run


@pytest.mark.parametrize("seeds,expected", [(None, [7]), ('0-3', [0, 1, 2, 3]), ('0,3,7', [0, 3, 7]),
                                            ('1-2,5', [1, 2, 5])])
def test_seed_list(seeds, expected):
    assert TrainConfig(seed=7, seeds=seeds).seed_list() == expected


@pytest.mark.parametrize("seeds", ['a-b', '', '-1'])
def test_bad_seed_list(seeds):
    with pytest.raises(ConfigError):
        TrainConfig(seeds=seeds).seed_list()


def test_train_validation(dataset_dir):
    TrainConfig(dataset=str(dataset_dir)).validate()
    for bad in ({'dataset': str(dataset_dir / 'missing')}, {'seeds': '0-2', 'top_k': 5},
                {'top_k': 1, 'validation_fraction': 0.0}, {'delta': -1.0}, {'kappa': -0.1},
                {'validation_fraction': 1.0}, {'stages': []}):
        with pytest.raises(ConfigError):
            TrainConfig(**{'dataset': str(dataset_dir), **bad}).validate()


def test_data_prep_validation(tmp_path):
    DataPrepConfig(synthetic=10).validate()
    for bad in ({}, {'synthetic': 0}, {'synthetic': 5, 'tusimple': 'x.json'},
                {'tusimple': str(tmp_path / 'labels.json')}):
        with pytest.raises(ConfigError):
            DataPrepConfig(**bad).validate()


def test_compare_grid():
    settings = CompareConfig()
    assert settings.epsilon_grid() == pytest.approx(list(default_epsilon_grid()))
    assert settings.attack_config().deviation_threshold == 80.0
    with pytest.raises(ConfigError):
        CompareConfig(epsilon_step=0.0).epsilon_grid()
    with pytest.raises(ConfigError):
        CompareConfig(epsilon_start=0.5, epsilon_stop=0.1).attack_config()
