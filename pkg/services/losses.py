"""
Tolerance-aware regression losses

Scalar reference forms (tolerance_error, overflow_oracle) work on plain
floats; the differentiable forms used for training are built from the
clip_nonneg primitive and evaluate whole batches at once.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from core import tensor as T
from core.errors import ContractError, DimensionError
from core.network import Network
from core.tensor import Tensor
from models import Dataset
from services.interval_propagation import RobustSpec, output_bounds

logger = logging.getLogger(__name__)

MSE = 'mse'
INTERVAL = 'interval'
SYMBOLIC = 'symbolic'
LOSS_KINDS = (MSE, INTERVAL, SYMBOLIC)


@dataclass(frozen=True)
class ToleranceBand:
    """The band [lb - delta, lb + delta] of predictions counted as correct"""
    lb: float
    delta: float

    def __post_init__(self):
        if self.delta < 0:
            raise ContractError(f"tolerance must be nonnegative, got {self.delta}")

    @property
    def lower(self) -> float:
        return self.lb - self.delta

    @property
    def upper(self) -> float:
        return self.lb + self.delta

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper


@dataclass
class LossReport:
    """Batch loss: value == mean(per_sample)"""
    value: float
    per_sample: List[float]
    n: int
    tensor: Optional[Tensor] = field(default=None, repr=False)


def tolerance_error(pred: float, band: ToleranceBand) -> float:
    """Distance from pred to the band, 0 inside it"""
    lower, upper = band.lower, band.upper
    if lower <= pred <= upper:
        return 0.0
    return min(abs(pred - lower), abs(pred - upper))


def _clip_nonneg(x: float) -> float:
    return x if x >= 0 else 0.0


def tolerance_error_clip(pred: float, band: ToleranceBand) -> float:
    """tolerance_error rewritten as max(clip(lower - pred), clip(pred - upper))"""
    return max(_clip_nonneg(band.lower - pred), _clip_nonneg(pred - band.upper))


def overflow_oracle(bound: Tuple[float, float], band: ToleranceBand) -> float:
    """
    Reference overflow of [L, U] beyond the band

    The parts of [L, U] outside the band (at most one on each side) are
    taken as half-open pieces, so removing a degenerate band only drops a
    point; the result sums the distance of each piece's midpoint to the band.
    """
    low, high = bound
    if low > high:
        raise ContractError(f"bound lower end {low} exceeds upper end {high}")
    pieces = []
    if low < band.lower:
        pieces.append((low, min(high, band.lower)))
    if high > band.upper:
        pieces.append((max(low, band.upper), high))

    total = 0.0
    for a, b in pieces:
        midpoint = 0.5 * (a + b)
        total += max(band.lower - midpoint, 0.0, midpoint - band.upper)
    return total


def symbolic_error(bound: Tuple[float, float], band: ToleranceBand) -> float:
    """Overflow computed from the two endpoints: (e(L) + e(U)) / 2"""
    low, high = bound
    if low > high:
        raise ContractError(f"bound lower end {low} exceeds upper end {high}")
    return 0.5 * (tolerance_error_clip(low, band) + tolerance_error_clip(high, band))


# differentiable batch forms ------------------------------------------------------

def tolerance_error_tensor(pred: Tensor, lower: np.ndarray, upper: np.ndarray) -> Tensor:
    """Elementwise clip-form tolerance error of pred against bands [lower, upper]"""
    if pred.shape != lower.shape or pred.shape != upper.shape:
        raise DimensionError(f"predictions {pred.shape} do not match bands {lower.shape}")
    below = T.clip_nonneg(T.sub(lower, pred))
    above = T.clip_nonneg(T.sub(pred, upper))
    return T.maximum(below, above)


def _bands(batch: Dataset, delta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    delta = np.asarray(delta, dtype=np.float64).reshape(-1)
    if np.any(delta < 0):
        raise ContractError(f"tolerances must be nonnegative, got {delta}")
    if delta.size == 1:
        delta = np.full(batch.output_dim, delta[0])
    if delta.size != batch.output_dim:
        raise DimensionError(f"{delta.size} tolerances for {batch.output_dim} outputs")
    deltas = np.broadcast_to(delta, batch.labels.shape)
    return batch.labels - deltas, batch.labels + deltas


def _check_batch(batch: Dataset):
    if len(batch) == 0:
        raise ContractError("loss over an empty batch (N must be at least 1)")


def _report(per_output: Tensor) -> LossReport:
    per_sample = T.reduce_sum(T.mul(per_output, per_output), axis=1)
    loss = T.reduce_mean(per_sample)
    return LossReport(
        value=loss.item(),
        per_sample=per_sample.data.tolist(),
        n=per_sample.shape[0],
        tensor=loss,
    )


def mse_loss(net: Network, batch: Dataset) -> LossReport:
    """(1/N) sum ||f(in) - lb||^2"""
    _check_batch(batch)
    preds = net.forward(batch.inputs)
    return _report(T.sub(preds, batch.labels))


def interval_tolerance_loss(net: Network, batch: Dataset, delta) -> LossReport:
    """Mean over samples of the summed squared tolerance errors"""
    _check_batch(batch)
    lower, upper = _bands(batch, delta)
    preds = net.forward(batch.inputs)
    return _report(tolerance_error_tensor(preds, lower, upper))


def symbolic_tolerance_loss(net: Network, batch: Dataset, spec: RobustSpec) -> LossReport:
    """Mean over samples of the summed squared symbolic errors of the propagated output box"""
    _check_batch(batch)
    lower, upper = _bands(batch, spec.delta_vector(batch.output_dim))
    bounds = output_bounds(net, batch.inputs, spec)
    error_low = tolerance_error_tensor(bounds.lower, lower, upper)
    error_high = tolerance_error_tensor(bounds.upper, lower, upper)
    return _report(T.mul(T.add(error_low, error_high), 0.5))


def compute_loss(kind: str, net: Network, batch: Dataset, spec: Optional[RobustSpec] = None,
                 delta=None) -> LossReport:
    """Dispatch on a schedule stage's loss kind"""
    if kind == MSE:
        return mse_loss(net, batch)
    if kind == INTERVAL:
        if delta is None and spec is None:
            raise ContractError("interval loss needs a tolerance")
        return interval_tolerance_loss(net, batch, spec.delta if delta is None else delta)
    if kind == SYMBOLIC:
        if spec is None:
            raise ContractError("symbolic loss needs a RobustSpec")
        return symbolic_tolerance_loss(net, batch, spec)
    raise ContractError(f"unknown loss kind '{kind}', expected one of {LOSS_KINDS}")
