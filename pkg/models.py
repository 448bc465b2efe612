"""
Data records shared across the pipeline, training and evaluation
"""

from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence

import numpy as np

from core.errors import ContractError, DataError, ValidationError

# TuSimple marks a lane without a marking at a sampled row with x = -2
ABSENT_X = -2

IMAGE_WIDTH = 1280
IMAGE_HEIGHT = 720
IMAGE_CENTER_X = IMAGE_WIDTH / 2


@dataclass(frozen=True)
class LaneRecord:
    """One line of a TuSimple label file"""
    h_samples: tuple
    lanes: tuple
    raw_file: str

    def __post_init__(self):
        object.__setattr__(self, 'h_samples', tuple(float(y) for y in self.h_samples))
        object.__setattr__(self, 'lanes', tuple(tuple(float(x) for x in lane) for lane in self.lanes))
        for i, lane in enumerate(self.lanes):
            if len(lane) != len(self.h_samples):
                raise DataError(f"{self.raw_file}: lane {i} has {len(lane)} points for "
                                f"{len(self.h_samples)} h_samples")


@dataclass(frozen=True)
class Sample:
    """
    One (input, label) pair

    input is [128, 320, 1] normalized to [-1, 1]; label is the ego-lane
    center x at y = 500 in original 1280-wide pixel coordinates.
    """
    input: np.ndarray
    label: np.ndarray
    source_id: str
    duplicated: bool = False

    def __post_init__(self):
        data = np.asarray(self.input, dtype=np.float64)
        if data.size and (data.min() < -1.0 or data.max() > 1.0):
            raise ValidationError(f"sample {self.source_id}: input values outside [-1, 1]")
        label = np.atleast_1d(np.asarray(self.label, dtype=np.float64))
        if not np.all((label >= 0.0) & (label <= IMAGE_WIDTH)):
            raise ValidationError(f"sample {self.source_id}: label {label.tolist()} outside [0, {IMAGE_WIDTH}]")
        object.__setattr__(self, 'input', data)
        object.__setattr__(self, 'label', label)


@dataclass
class Dataset:
    """
    Column store of samples: inputs [n, ...], labels [n, d]

    Keeps record order; subset() preserves the order of the given indices.
    """
    inputs: np.ndarray
    labels: np.ndarray
    ids: List[str] = field(default_factory=list)
    duplicated: List[bool] = field(default_factory=list)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.float64)
        self.labels = labels.reshape(len(labels), -1) if labels.ndim < 2 else labels
        if len(self.inputs) != len(self.labels):
            raise ContractError(f"{len(self.inputs)} inputs but {len(self.labels)} labels")
        if not self.ids:
            self.ids = [f"sample-{i:06d}" for i in range(len(self.inputs))]
        if not self.duplicated:
            self.duplicated = [False] * len(self.inputs)
        if len(self.ids) != len(self.inputs) or len(self.duplicated) != len(self.inputs):
            raise ContractError("ids and duplicated flags must have one entry per sample")

    @classmethod
    def from_samples(cls, samples: Sequence[Sample]) -> 'Dataset':
        if not samples:
            raise DataError("cannot build a dataset from zero samples")
        return cls(
            inputs=np.stack([s.input for s in samples]),
            labels=np.stack([s.label for s in samples]),
            ids=[s.source_id for s in samples],
            duplicated=[s.duplicated for s in samples],
        )

    def __len__(self):
        return len(self.inputs)

    def __getitem__(self, i: int) -> Sample:
        return Sample(self.inputs[i], self.labels[i], self.ids[i], self.duplicated[i])

    def __iter__(self) -> Iterator[Sample]:
        for i in range(len(self)):
            yield self[i]

    @property
    def input_shape(self) -> tuple:
        return tuple(self.inputs.shape[1:])

    @property
    def output_dim(self) -> int:
        return self.labels.shape[1]

    def subset(self, indices: Sequence[int]) -> 'Dataset':
        indices = list(indices)
        return Dataset(
            inputs=self.inputs[indices],
            labels=self.labels[indices],
            ids=[self.ids[i] for i in indices],
            duplicated=[self.duplicated[i] for i in indices],
        )

    def split(self, validation_fraction: float, rng: Optional[np.random.Generator] = None):
        """Split into (train, validation); validation_fraction 0 returns (self, None)"""
        if not 0.0 <= validation_fraction < 1.0:
            raise ContractError(f"validation fraction must lie in [0, 1), got {validation_fraction}")
        n_val = int(round(len(self) * validation_fraction))
        if n_val == 0:
            return self, None
        order = rng.permutation(len(self)) if rng is not None else np.arange(len(self))
        val_idx = sorted(order[:n_val].tolist())
        train_idx = sorted(order[n_val:].tolist())
        return self.subset(train_idx), self.subset(val_idx)
