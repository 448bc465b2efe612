"""
FGSM attack evaluation

Single-step fast gradient sign perturbations of the network input, the
search for the smallest grid step that pushes an in-band prediction away
from its label by the deviation threshold, and the side-by-side comparison
of two models over an evaluation set.
"""

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from core import tensor as T
from core.autodiff import backward
from core.errors import ConfigError, ContractError, DataError, DimensionError
from core.network import Network
from core.tensor import Tensor
from models import Dataset

logger = logging.getLogger(__name__)

FOUND = 'found'
NOT_FOUND = 'not_found'
SKIPPED = 'skipped'

A_LARGER = 'a_larger'
ROUGHLY_EQUAL = 'roughly_equal'
B_LARGER = 'b_larger'
BUCKETS = (A_LARGER, ROUGHLY_EQUAL, B_LARGER)

# normalized input step -> raw 8-bit pixel step
RAW_PIXEL_SCALE = 255.0 / 2.0


def default_epsilon_grid() -> Tuple[float, ...]:
    """0.005, 0.010, ..., 0.5"""
    return tuple(round(0.005 * k, 6) for k in range(1, 101))


@dataclass(frozen=True)
class AttackConfig:
    """
    deviation_threshold: output deviation (pixels) that counts as a successful attack
    epsilon_grid: strictly increasing candidate steps in the normalized input domain
    equality_band: |eps_a - eps_b| below this is bucketed as roughly equal
    tolerance: an image is attacked only if its clean prediction lies within
        this distance of the label
    """
    deviation_threshold: float = 80.0
    epsilon_grid: Tuple[float, ...] = field(default_factory=default_epsilon_grid)
    equality_band: float = 0.05
    tolerance: float = 10.0
    chunk_size: int = 20

    def __post_init__(self):
        grid = tuple(float(e) for e in self.epsilon_grid)
        object.__setattr__(self, 'epsilon_grid', grid)
        if not self.deviation_threshold > 0:
            raise ConfigError(f"deviation threshold must be positive, got {self.deviation_threshold}")
        if not grid:
            raise ConfigError("epsilon grid is empty")
        if any(e <= 0 for e in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("epsilon grid must be strictly increasing and positive")
        if self.equality_band < 0:
            raise ConfigError(f"equality band must be nonnegative, got {self.equality_band}")
        if self.tolerance < 0:
            raise ConfigError(f"attack tolerance must be nonnegative, got {self.tolerance}")
        if self.chunk_size < 1:
            raise ConfigError(f"chunk size must be positive, got {self.chunk_size}")


@dataclass(frozen=True)
class AttackResult:
    """Outcome of a minimal-epsilon search on one image"""
    source_id: str
    status: str
    epsilon: Optional[float] = None
    clean_deviation: float = 0.0
    attacked_deviation: Optional[float] = None
    reason: str = ''

    @property
    def effective_epsilon(self) -> float:
        """epsilon with not-found counted as +inf"""
        if self.status == FOUND:
            return self.epsilon
        if self.status == NOT_FOUND:
            return math.inf
        raise ContractError(f"image {self.source_id} was skipped: {self.reason}")


def _deviation(pred: np.ndarray, lb: np.ndarray) -> np.ndarray:
    """L-infinity distance between predictions and label along the last axis"""
    return np.abs(pred - lb).max(axis=-1)


def input_gradient(net: Network, x, lb) -> np.ndarray:
    """Gradient of the squared deviation sum((f(x) - lb)^2) with respect to a single input"""
    x = Tensor(T.as_tensor(x).data, requires_grad=True)
    lb = np.atleast_1d(np.asarray(lb, dtype=np.float64))
    pred = net.forward(x)
    if pred.shape != lb.shape:
        raise DimensionError(f"prediction {pred.shape} does not match label {lb.shape}")
    diff = T.sub(pred, lb)
    loss = T.reduce_sum(T.mul(diff, diff))
    return backward(loss).get(x, np.zeros(x.shape))


def perturb(x, gradient: np.ndarray, epsilon: float) -> Tensor:
    """clip(x + epsilon * sign(gradient), -1, 1)"""
    if epsilon < 0:
        raise ContractError(f"FGSM step must be nonnegative, got {epsilon}")
    x = T.as_tensor(x)
    if np.shape(gradient) != x.shape:
        raise DimensionError(f"gradient {np.shape(gradient)} does not match input {x.shape}")
    return Tensor(np.clip(x.data + epsilon * np.sign(gradient), -1.0, 1.0))


def fgsm_step(net: Network, x, lb, epsilon: float) -> Tensor:
    """One FGSM step of size epsilon against the squared prediction-label deviation"""
    return perturb(x, input_gradient(net, x, lb), epsilon)


def minimal_epsilon(net: Network, x, lb, config: AttackConfig, source_id: str = '') -> AttackResult:
    """
    First grid step whose FGSM image deviates from the label by the threshold

    The gradient sign is taken once at the clean input and every grid step is
    evaluated from it. Images whose clean prediction is outside the tolerance,
    or already beyond the threshold, are returned as skipped. Deviation is not
    monotone in epsilon for a single step; the result is the first success on
    the grid, not the smallest epsilon in a continuous sense.
    """
    x = T.as_tensor(x)
    lb = np.atleast_1d(np.asarray(lb, dtype=np.float64))
    clean = float(_deviation(net.forward(x).data, lb))
    if clean >= config.deviation_threshold:
        return AttackResult(source_id, SKIPPED, clean_deviation=clean, reason='already beyond threshold')
    if clean > config.tolerance:
        return AttackResult(source_id, SKIPPED, clean_deviation=clean, reason='clean prediction outside tolerance')

    direction = np.sign(input_gradient(net, x, lb))
    grid = np.asarray(config.epsilon_grid)
    for start in range(0, len(grid), config.chunk_size):
        steps = grid[start:start + config.chunk_size]
        shape = (len(steps),) + (1,) * x.ndim
        candidates = np.clip(x.data[None] + steps.reshape(shape) * direction[None], -1.0, 1.0)
        deviations = _deviation(net.forward(candidates).data, lb)
        hits = np.flatnonzero(deviations >= config.deviation_threshold)
        if hits.size:
            k = int(hits[0])
            return AttackResult(source_id, FOUND, float(steps[k]), clean, float(deviations[k]))
    return AttackResult(source_id, NOT_FOUND, clean_deviation=clean)


def bucket(epsilon_a: float, epsilon_b: float, equality_band: float) -> str:
    """Bucket of one image; identical values (including both not found) are roughly equal"""
    if epsilon_a == epsilon_b:
        return ROUGHLY_EQUAL
    difference = epsilon_a - epsilon_b
    if abs(difference) < equality_band:
        return ROUGHLY_EQUAL
    return A_LARGER if difference > 0 else B_LARGER


@dataclass(frozen=True)
class ComparisonRow:
    source_id: str
    epsilon_a: float
    epsilon_b: float
    bucket: str


@dataclass
class ComparisonReport:
    """Per-image minimal epsilon of two models and the bucket partition"""
    rows: List[ComparisonRow]
    skipped: List[AttackResult]
    equality_band: float
    names: Tuple[str, str] = ('A', 'B')
    mean_absolute_error: Dict[str, float] = field(default_factory=dict)

    @property
    def attacked(self) -> int:
        return len(self.rows)

    @property
    def counts(self) -> Dict[str, int]:
        counts = {name: 0 for name in BUCKETS}
        for row in self.rows:
            counts[row.bucket] += 1
        return counts

    @property
    def fractions(self) -> Dict[str, float]:
        return {name: count / self.attacked for name, count in self.counts.items()}

    def swapped(self) -> 'ComparisonReport':
        """The same report with the roles of the two models exchanged"""
        flip = {A_LARGER: B_LARGER, B_LARGER: A_LARGER, ROUGHLY_EQUAL: ROUGHLY_EQUAL}
        rows = [ComparisonRow(r.source_id, r.epsilon_b, r.epsilon_a, flip[r.bucket]) for r in self.rows]
        return ComparisonReport(rows, list(self.skipped), self.equality_band, self.names[::-1],
                                dict(self.mean_absolute_error))

    def to_record(self) -> dict:
        """Machine-readable summary plus the per-image (eps_a, eps_b) scatter pairs; not-found is null"""
        def finite(value):
            return None if math.isinf(value) else value

        return {
            'models': list(self.names),
            'equality_band': self.equality_band,
            'attacked': self.attacked,
            'skipped': len(self.skipped),
            'counts': self.counts,
            'fractions': self.fractions,
            'mean_absolute_error': self.mean_absolute_error,
            'semantics': 'first grid success of a single FGSM step; epsilon in normalized input units',
            'images': [
                {
                    'id': r.source_id,
                    'epsilon_a': finite(r.epsilon_a),
                    'epsilon_b': finite(r.epsilon_b),
                    'epsilon_a_raw': finite(r.epsilon_a * RAW_PIXEL_SCALE),
                    'epsilon_b_raw': finite(r.epsilon_b * RAW_PIXEL_SCALE),
                    'bucket': r.bucket,
                }
                for r in self.rows
            ],
            'skipped_images': [{'id': s.source_id, 'reason': s.reason} for s in self.skipped],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), indent=2)

    def format_table(self) -> str:
        """Per-image table followed by a summary block"""
        a, b = self.names

        def cell(value):
            return '-' if math.isinf(value) else f"{value:.3f} ({value * RAW_PIXEL_SCALE:.2f})"

        lines = [f"{'image':<32} {'eps ' + a + ' (raw)':>22} {'eps ' + b + ' (raw)':>22}  bucket"]
        for r in self.rows:
            lines.append(f"{r.source_id:<32} {cell(r.epsilon_a):>22} {cell(r.epsilon_b):>22}  {r.bucket}")
        fractions = self.fractions
        lines += [
            '',
            f"attacked images: {self.attacked} (skipped {len(self.skipped)})",
            f"{a} needs larger eps:  {fractions[A_LARGER]:.1%}",
            f"roughly equal (< {self.equality_band}): {fractions[ROUGHLY_EQUAL]:.1%}",
            f"{b} needs larger eps:  {fractions[B_LARGER]:.1%}",
        ]
        for name, mae in self.mean_absolute_error.items():
            lines.append(f"mean absolute error {name}: {mae:.3f}")
        return '\n'.join(lines)


def compare_models(net_a: Network, net_b: Network, eval_set: Dataset, config: AttackConfig,
                   workers: int = 1, names: Sequence[str] = ('A', 'B')) -> ComparisonReport:
    """
    Minimal epsilon of both models on every image and the bucket partition

    Images skipped by either model are left out of the partition and listed
    in the report. Attacks run on a thread pool; rows keep dataset order.
    """
    if net_a.input_shape != net_b.input_shape or net_a.output_dim != net_b.output_dim:
        raise DimensionError(f"models differ in shape: {net_a.input_shape}->{net_a.output_dim} vs "
                             f"{net_b.input_shape}->{net_b.output_dim}")
    if len(eval_set) == 0:
        raise DataError("evaluation set is empty")

    def attack(i: int) -> Tuple[AttackResult, AttackResult]:
        x, lb, source_id = eval_set.inputs[i], eval_set.labels[i], eval_set.ids[i]
        return (minimal_epsilon(net_a, x, lb, config, source_id),
                minimal_epsilon(net_b, x, lb, config, source_id))

    logger.info(f"Attacking {len(eval_set)} images with {len(config.epsilon_grid)} grid steps, {workers} workers")
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(attack, range(len(eval_set))))

    rows, skipped = [], []
    for result_a, result_b in results:
        if result_a.status == SKIPPED or result_b.status == SKIPPED:
            skipped.append(result_a if result_a.status == SKIPPED else result_b)
            logger.debug(f"Skipped {result_a.source_id}: {skipped[-1].reason}")
            continue
        eps_a, eps_b = result_a.effective_epsilon, result_b.effective_epsilon
        rows.append(ComparisonRow(result_a.source_id, eps_a, eps_b, bucket(eps_a, eps_b, config.equality_band)))

    if not rows:
        raise DataError(f"no evaluation image passed the attack precondition ({len(skipped)} skipped)")

    report = ComparisonReport(rows, skipped, config.equality_band, tuple(names))
    fractions = report.fractions
    logger.info(f"Compared {report.attacked} images: {names[0]} larger {fractions[A_LARGER]:.1%}, "
                f"equal {fractions[ROUGHLY_EQUAL]:.1%}, {names[1]} larger {fractions[B_LARGER]:.1%}")
    return report
