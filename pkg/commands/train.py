import json
import logging
from pathlib import Path
from typing import List, Optional

from config import RunConfig, TrainConfig
from core.errors import ConfigError
from core.network import Network, default_architecture
from models import Dataset
from services.ingestion import DatasetStore
from services.interval_propagation import RobustSpec
from services.losses import MSE
from services.training import (MetricsLog, OptimizerConfig, Schedule, TrainingResult, mean_absolute_error,
                               init_weights, parse_stage, run_schedule, select_top_k)
from utils.rng import generator
from utils.serialization import data_hash, load_model, save_model

logger = logging.getLogger(__name__)


def build_network(settings: TrainConfig, dataset: Dataset) -> Network:
    if settings.init_model:
        net, _ = load_model(settings.init_model)
        logger.info(f"Starting from {settings.init_model}")
        return net
    return default_architecture(dataset.input_shape, dataset.output_dim)


def build_schedule(settings: TrainConfig, net: Network, stages: List[str]) -> Optional[Schedule]:
    if not stages:
        return None
    layer_index = net.perturbation_index(settings.layer)
    logger.info(f"Layer '{settings.layer}' resolves to perturbation index {layer_index} "
                f"(first layer after its activation)")
    spec = RobustSpec(settings.delta, layer_index, settings.kappa)
    return Schedule(
        stages=tuple(parse_stage(text, spec, settings.delta) for text in stages),
        batch_size=settings.batch_size,
        warmup=settings.warmup,
        reset_optimizer=settings.reset_optimizer,
    ).check(net)


def _train_one(net: Network, seed: int, train_set: Dataset, validation: Optional[Dataset],
               schedule: Schedule, metrics_path: Path, initialise: bool) -> TrainingResult:
    if initialise:
        net = init_weights(net, seed)
    return run_schedule(net, train_set, schedule, OptimizerConfig(seed=seed),
                        MetricsLog(metrics_path), validation)


def _save(result: TrainingResult, output: Path, schedules: List[Schedule], hash_: str,
          validation: Optional[Dataset]):
    provenance = {
        'seed': result.seed,
        'schedule': [s.describe() for s in schedules],
        'data_hash': hash_,
        'validation_loss': result.validation_loss,
    }
    if validation is not None:
        provenance['validation_mae'] = mean_absolute_error(result.network, validation)
    save_model(output / 'model.rbm', result.network, provenance)


def cmd_train(run: RunConfig) -> int:
    """
    Run the configured schedule for one seed, or the multi-seed protocol:
    MSE stages per seed, top-k by validation loss, then the robust stages
    on the selected models only
    """
    settings = run.train
    settings.validate()
    output = Path(settings.output)
    output.mkdir(parents=True, exist_ok=True)
    run.dump(output / 'config.yaml')

    dataset = DatasetStore(settings.dataset).read()
    hash_ = data_hash(dataset.inputs, dataset.labels)
    train_set, validation = dataset.split(settings.validation_fraction, generator(settings.seed, 'split'))
    logger.info(f"Training set {len(train_set)} samples, validation {len(validation) if validation else 0}")

    net = build_network(settings, dataset)
    seeds = settings.seed_list()
    initialise = settings.init_model is None

    if len(seeds) == 1:
        schedule = build_schedule(settings, net, settings.stages)
        result = _train_one(net, seeds[0], train_set, validation, schedule, output / 'metrics.jsonl', initialise)
        _save(result, output, [schedule], hash_, validation)
        return 0

    baseline_stages = [s for s in settings.stages if s.split(':')[0].strip().lower() == MSE]
    robust_stages = [s for s in settings.stages if s not in baseline_stages]
    baseline = build_schedule(settings, net, baseline_stages)
    robust = build_schedule(settings, net, robust_stages)
    if baseline is None:
        raise ConfigError("the multi-seed protocol needs at least one mse stage")

    candidates = []
    for seed in seeds:
        logger.info(f"Baseline training for seed {seed}")
        candidates.append(_train_one(net, seed, train_set, validation, baseline,
                                     output / f"seed-{seed}" / 'baseline-metrics.jsonl', initialise))
        _save(candidates[-1], output / f"seed-{seed}", [baseline], hash_, validation)

    selected = select_top_k(candidates, settings.top_k or len(candidates))
    for result in selected:
        if robust is None:
            continue
        logger.info(f"Robust fine-tuning for seed {result.seed}")
        tuned = run_schedule(result.network, train_set, robust, OptimizerConfig(seed=result.seed),
                             MetricsLog(output / f"seed-{result.seed}" / 'robust-metrics.jsonl'), validation)
        _save(tuned, output / f"seed-{result.seed}" / 'robust', [baseline, robust], hash_, validation)

    (output / 'selection.json').write_text(json.dumps({
        'seeds': seeds,
        'validation_loss': {str(r.seed): r.validation_loss for r in candidates},
        'selected': [r.seed for r in selected],
    }, indent=2))
    return 0
