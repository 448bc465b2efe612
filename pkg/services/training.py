"""
Adam optimisation, staged training schedules and seed selection

A schedule is an ordered list of stages; each stage fixes a loss kind
(mse, interval or symbolic), a learning rate and an epoch count. The staged
recipe is MSE first, then the tolerance-aware losses, then the symbolic loss
with growing kappa.
"""

import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import psutil

from core.autodiff import backward
from core.errors import ConfigError, ContractError, DimensionError, NumericError
from core.network import CONV2D, DENSE, Network
from models import Dataset
from services.interval_propagation import RobustSpec
from services.losses import INTERVAL, LOSS_KINDS, MSE, SYMBOLIC, compute_loss
from utils.rng import generator

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimizerConfig:
    """Adam constants and the seed for initialisation and shuffling"""
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError(f"Adam betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if not self.epsilon > 0:
            raise ConfigError(f"Adam epsilon must be positive, got {self.epsilon}")
        if self.seed < 0:
            raise ConfigError(f"seed must be nonnegative, got {self.seed}")


@dataclass
class AdamState:
    """First/second moment estimates per parameter name and the step count"""
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


@dataclass(frozen=True)
class Stage:
    """
    One block of epochs with a fixed loss

    interval stages need delta (or a spec to take it from); symbolic stages
    need a full RobustSpec.
    """
    kind: str
    learning_rate: float
    epochs: int
    spec: Optional[RobustSpec] = None
    delta: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ConfigError(f"unknown stage loss '{self.kind}', expected one of {LOSS_KINDS}")
        if self.epochs < 1:
            raise ConfigError(f"a stage needs at least one epoch, got {self.epochs}")
        if not self.learning_rate > 0:
            raise ConfigError(f"stage learning rate must be positive, got {self.learning_rate}")
        if self.kind == SYMBOLIC and self.spec is None:
            raise ConfigError("a symbolic stage needs delta, kappa and a perturbation layer")
        if self.kind == INTERVAL and self.delta is None and self.spec is None:
            raise ConfigError("an interval stage needs a tolerance delta")

    @property
    def tolerance(self):
        return self.delta if self.delta is not None else self.spec.delta

    def describe(self) -> dict:
        description = {'kind': self.kind, 'learning_rate': self.learning_rate, 'epochs': self.epochs}
        if self.spec is not None:
            description['spec'] = {'delta': list(self.spec.delta), 'layer_index': self.spec.layer_index,
                                   'kappa': self.spec.kappa}
        if self.delta is not None:
            description['delta'] = list(self.delta)
        return description


@dataclass(frozen=True)
class Schedule:
    stages: Tuple[Stage, ...]
    batch_size: int = 32
    warmup: bool = True
    reset_optimizer: bool = True

    def __post_init__(self):
        object.__setattr__(self, 'stages', tuple(self.stages))
        if not self.stages:
            raise ConfigError("a schedule needs at least one stage")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be positive, got {self.batch_size}")

    def check(self, net: Network) -> 'Schedule':
        for stage in self.stages:
            if stage.spec is not None:
                try:
                    stage.spec.check(net)
                except (ContractError, DimensionError) as e:
                    raise ConfigError(f"stage {stage.kind}: {e}")
        return self

    def describe(self) -> dict:
        return {
            'stages': [stage.describe() for stage in self.stages],
            'batch_size': self.batch_size,
            'warmup': self.warmup,
            'reset_optimizer': self.reset_optimizer,
        }


@dataclass
class TrainingResult:
    network: Network
    metrics: List[dict]
    validation_loss: Optional[float] = None
    seed: int = 0


def parse_stage(text: str, spec: Optional[RobustSpec] = None, delta=None) -> Stage:
    """Parse 'kind:learning_rate:epochs', e.g. 'mse:0.01:20'"""
    parts = text.split(':')
    if len(parts) != 3:
        raise ConfigError(f"stage '{text}' must look like kind:learning_rate:epochs")
    kind, lr, epochs = parts
    try:
        learning_rate, epoch_count = float(lr), int(epochs)
    except ValueError:
        raise ConfigError(f"stage '{text}': learning rate must be a number and epochs an integer")
    kind = kind.strip().lower()
    return Stage(
        kind=kind,
        learning_rate=learning_rate,
        epochs=epoch_count,
        spec=spec if kind == SYMBOLIC else None,
        delta=tuple(np.atleast_1d(delta).tolist()) if kind == INTERVAL and delta is not None else None,
    )


def staged_schedule(robust_spec: Optional[RobustSpec] = None, batch_size: int = 32) -> Schedule:
    """MSE at 0.01 for 20 epochs, 0.001 for 10, then the symbolic loss at 0.001 for 10"""
    stages = [Stage(MSE, 0.01, 20), Stage(MSE, 0.001, 10)]
    if robust_spec is not None:
        stages.append(Stage(SYMBOLIC, 0.001, 10, spec=robust_spec))
    return Schedule(tuple(stages), batch_size=batch_size)


def init_weights(net: Network, seed: int) -> Network:
    """
    Xavier/Glorot uniform weights, zero biases

    Weights of each affine layer are drawn from U(-a, a) with
    a = sqrt(6 / (fan_in + fan_out)); layers are visited in order from one
    seeded stream.
    """
    rng = generator(seed, 'init')
    params = {}
    for layer in net.layers:
        if layer.kind == DENSE:
            fan_out, fan_in = layer.weight.shape
        elif layer.kind == CONV2D:
            kh, kw, c, f = layer.weight.shape
            fan_in, fan_out = kh * kw * c, kh * kw * f
        else:
            continue
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        params[f"{layer.name}.weight"] = rng.uniform(-limit, limit, size=layer.weight.shape)
        params[f"{layer.name}.bias"] = np.zeros(layer.bias.shape)
    logger.debug(f"Initialised {len(params) // 2} affine layers with seed {seed}")
    return net.with_parameters(params)


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: AdamState,
              config: OptimizerConfig) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """
    One bias-corrected Adam update

    Returns new parameter arrays and a new state; inputs are not modified.
    """
    t = state.t + 1
    bc1 = 1.0 - config.beta1 ** t
    bc2 = 1.0 - config.beta2 ** t
    new_params, new_m, new_v = {}, {}, {}
    for name, value in params.items():
        g = grads.get(name)
        if g is None:
            raise ContractError(f"no gradient for parameter '{name}'")
        if np.shape(g) != np.shape(value):
            raise DimensionError(f"gradient {np.shape(g)} does not match parameter '{name}' {np.shape(value)}")
        m = state.m.get(name, np.zeros_like(value))
        v = state.v.get(name, np.zeros_like(value))
        if m.shape != np.shape(value) or v.shape != np.shape(value):
            raise DimensionError(f"optimizer state for '{name}' does not match {np.shape(value)}")
        m = config.beta1 * m + (1.0 - config.beta1) * g
        v = config.beta2 * v + (1.0 - config.beta2) * (g * g)
        denom = np.sqrt(v / bc2) + config.epsilon
        new_params[name] = value - (config.learning_rate / bc1) * m / denom
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(new_m, new_v, t)


def warmup_kappa(target: float, epoch: int, epochs: int) -> float:
    """kappa for a 0-based epoch: linear from 0 over the first half of the stage, then target"""
    if epochs < 2:
        return target
    ramp = max(1, math.ceil(epochs / 2))
    return target * min(1.0, epoch / ramp)


class MetricsLog:
    """Append-only newline-delimited JSON records, one per epoch"""

    def __init__(self, path: Optional[Path] = None):
        self.path = Path(path) if path else None
        self.records: List[dict] = []
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text('')

    def append(self, record: dict):
        self.records.append(record)
        if self.path:
            with open(self.path, 'a') as f:
                f.write(json.dumps(record) + '\n')


def _batches(n: int, batch_size: int, order: np.ndarray):
    for b, start in enumerate(range(0, n, batch_size)):
        yield b, order[start:start + batch_size]


def evaluate_loss(net: Network, dataset: Dataset, kind: str = MSE, spec: Optional[RobustSpec] = None,
                  delta=None, batch_size: int = 256) -> float:
    """Loss of kind over a whole dataset, evaluated in chunks without gradients"""
    total = 0.0
    for _, idx in _batches(len(dataset), batch_size, np.arange(len(dataset))):
        report = compute_loss(kind, net, dataset.subset(idx), spec=spec, delta=delta)
        total += report.value * report.n
    return total / len(dataset)


def mean_absolute_error(net: Network, dataset: Dataset, batch_size: int = 256) -> float:
    errors = []
    for _, idx in _batches(len(dataset), batch_size, np.arange(len(dataset))):
        preds = net.forward(dataset.inputs[idx]).data
        errors.append(np.abs(preds - dataset.labels[idx]).sum(axis=1))
    return float(np.concatenate(errors).mean())


def train_step(net: Network, batch: Dataset, stage: Stage, spec: Optional[RobustSpec],
               state: AdamState, config: OptimizerConfig):
    """Loss, gradients and one Adam update on a batch; returns (network, state, loss value)"""
    trainable = net.trainable()
    report = compute_loss(stage.kind, trainable, batch, spec=spec,
                          delta=stage.tolerance if stage.kind == INTERVAL else None)
    gradients = backward(report.tensor)
    grad_arrays = {name: gradients.get(p, np.zeros(p.shape)) for name, p in trainable.parameters().items()}
    params, state = adam_step(net.parameter_arrays(), grad_arrays, state, config)
    return net.with_parameters(params), state, report


def run_schedule(net: Network, train_set: Dataset, schedule: Schedule, config: OptimizerConfig,
                 metrics: Optional[MetricsLog] = None, validation: Optional[Dataset] = None,
                 on_epoch: Optional[Callable[[dict], None]] = None) -> TrainingResult:
    """
    Run every stage of a schedule in order

    Shuffles once per epoch from the seeded shuffle stream, logs one metrics
    record per epoch and aborts with NumericError on a non-finite loss.
    """
    if len(train_set) == 0:
        raise ContractError("cannot train on an empty dataset")
    schedule.check(net)
    metrics = metrics or MetricsLog()
    rng = generator(config.seed, 'shuffle')
    process = psutil.Process()
    n = len(train_set)
    state = AdamState()

    logger.info(f"Training on {n} samples: {len(schedule.stages)} stages, batch size {schedule.batch_size}")
    for stage_number, stage in enumerate(schedule.stages, start=1):
        if schedule.reset_optimizer or stage_number == 1:
            state = AdamState()
        stage_config = replace(config, learning_rate=stage.learning_rate)
        if stage.spec is not None:
            logger.info(f"Stage {stage_number} ({stage.kind}): perturbation enters at layer "
                        f"{stage.spec.layer_index}, kappa={stage.spec.kappa}, delta={stage.spec.delta}")

        for epoch in range(stage.epochs):
            started = time.monotonic()
            spec = stage.spec
            if spec is not None and stage.kind == SYMBOLIC and schedule.warmup:
                spec = spec.with_kappa(warmup_kappa(stage.spec.kappa, epoch, stage.epochs))

            order = rng.permutation(n)
            total = 0.0
            for b, idx in _batches(n, schedule.batch_size, order):
                net, state, report = train_step(net, train_set.subset(idx), stage, spec, state, stage_config)
                if not math.isfinite(report.value):
                    raise NumericError(f"non-finite {stage.kind} loss in stage {stage_number}, "
                                       f"epoch {epoch + 1}, batch {b + 1}")
                total += report.value * report.n

            record = {
                'stage': stage_number,
                'kind': stage.kind,
                'epoch': epoch + 1,
                'loss': total / n,
                'kappa': spec.kappa if spec is not None else None,
                'learning_rate': stage.learning_rate,
                'wall_time': round(time.monotonic() - started, 6),
                'rss_mb': round(process.memory_info().rss / 2 ** 20, 1),
            }
            if validation is not None:
                record['validation_mse'] = evaluate_loss(net, validation)
            metrics.append(record)
            if on_epoch:
                on_epoch(record)
            logger.info(f"Stage {stage_number} ({stage.kind}) epoch {epoch + 1}/{stage.epochs}: "
                        f"loss={record['loss']:.6g}")

    result = TrainingResult(net, metrics.records, seed=config.seed)
    if validation is not None:
        last = schedule.stages[-1]
        result.validation_loss = evaluate_loss(net, validation, last.kind, spec=last.spec,
                                               delta=last.tolerance if last.kind == INTERVAL else None)
    return result


def select_top_k(results: Sequence[TrainingResult], k: int) -> List[TrainingResult]:
    """The k results with the lowest validation loss (ties broken by seed)"""
    if k < 1:
        raise ConfigError(f"top-k needs k >= 1, got {k}")
    scored = [r for r in results if r.validation_loss is not None]
    if len(scored) != len(results):
        raise ContractError("every candidate needs a validation loss for top-k selection")
    ranked = sorted(scored, key=lambda r: (r.validation_loss, r.seed))
    for rank, r in enumerate(ranked, start=1):
        logger.info(f"Seed {r.seed}: validation loss {r.validation_loss:.6g} (rank {rank})")
    return ranked[:k]
