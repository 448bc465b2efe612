"""
Provable-robustness certification of a trained model on a dataset
"""

import json
import logging
from dataclasses import asdict, dataclass
from typing import List, Optional

import numpy as np

from core.errors import DataError
from core.network import Network
from models import Dataset
from services.interval_propagation import RobustSpec, output_bounds, sample_box, widen
from utils.rng import generator

logger = logging.getLogger(__name__)

# bounds are checked with a small slack for floating point rounding in the sampled forward pass
EMPIRICAL_SLACK = 1e-9


@dataclass(frozen=True)
class CertifiedSample:
    source_id: str
    label: List[float]
    lower: List[float]
    upper: List[float]
    band_lower: List[float]
    band_upper: List[float]
    certified: bool
    violations: int = 0


@dataclass
class CertificationReport:
    spec: RobustSpec
    samples: List[CertifiedSample]
    empirical_samples: int = 0
    layer_name: Optional[str] = None

    @property
    def certified_fraction(self) -> float:
        return sum(s.certified for s in self.samples) / len(self.samples)

    @property
    def violations(self) -> int:
        return sum(s.violations for s in self.samples)

    @property
    def guarantee(self) -> Optional[str]:
        if self.certified_fraction < 1.0:
            return None
        where = f"'{self.layer_name}'" if self.layer_name else f"layer {self.spec.layer_index - 1}"
        return (f"For every one of the {len(self.samples)} samples, any input whose feature vector at "
                f"{where} lies within kappa={self.spec.kappa} (L-infinity) of the sample's feature "
                f"vector is mapped into [label - {self.spec.delta}, label + {self.spec.delta}].")

    def to_record(self) -> dict:
        return {
            'delta': list(self.spec.delta),
            'kappa': self.spec.kappa,
            'layer_index': self.spec.layer_index,
            'layer_name': self.layer_name,
            'samples': len(self.samples),
            'certified_fraction': self.certified_fraction,
            'empirical_samples': self.empirical_samples,
            'empirical_violations': self.violations,
            'guarantee': self.guarantee,
            'per_sample': [asdict(s) for s in self.samples],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), indent=2)

    def format_table(self) -> str:
        lines = [f"{'sample':<32} {'label':>10} {'L':>12} {'U':>12}  certified"]
        for s in self.samples:
            lines.append(f"{s.source_id:<32} {s.label[0]:>10.3f} {s.lower[0]:>12.4f} {s.upper[0]:>12.4f}  "
                         f"{'yes' if s.certified else 'NO'}")
        lines += ['', f"certified fraction: {self.certified_fraction:.1%} of {len(self.samples)}"]
        if self.empirical_samples:
            lines.append(f"empirical check: {self.violations} violations in "
                         f"{self.empirical_samples * len(self.samples)} sampled perturbations")
        if self.guarantee:
            lines.append(self.guarantee)
        return '\n'.join(lines)


def certify(net: Network, dataset: Dataset, spec: RobustSpec, empirical_samples: int = 0,
            seed: int = 0, layer_name: Optional[str] = None, batch_size: int = 256) -> CertificationReport:
    """
    Check [L, U] against [lb - delta, lb + delta] for every sample

    With empirical_samples > 0, that many uniform points of each feature box
    are also pushed through the suffix and any output outside the band is
    counted as a violation.
    """
    if len(dataset) == 0:
        raise DataError("cannot certify an empty dataset")
    spec.check(net)
    delta = spec.delta_vector(net.output_dim)
    band_lower, band_upper = dataset.labels - delta, dataset.labels + delta
    logger.info(f"Certifying {len(dataset)} samples: perturbation enters at layer {spec.layer_index}"
                f"{f' (after {layer_name})' if layer_name else ''}, kappa={spec.kappa}, delta={spec.delta}")

    if logger.isEnabledFor(logging.DEBUG):
        trace = []
        output_bounds(net, dataset.inputs[0], spec, trace=trace)
        for layer, box in zip(net.layers[spec.layer_index - 1:], trace):
            logger.debug(f"{dataset.ids[0]}: after {layer.name} max width {float(box.width().max()):.6g}")

    lower = np.empty_like(dataset.labels)
    upper = np.empty_like(dataset.labels)
    for start in range(0, len(dataset), batch_size):
        bounds = output_bounds(net, dataset.inputs[start:start + batch_size], spec)
        lower[start:start + batch_size] = bounds.lower.data
        upper[start:start + batch_size] = bounds.upper.data

    certified = np.all((lower >= band_lower) & (upper <= band_upper), axis=1)
    violations = np.zeros(len(dataset), dtype=int)
    if empirical_samples > 0:
        rng = generator(seed, 'sampling')
        for i in range(len(dataset)):
            fv = net.forward_to(spec.layer_index - 1, dataset.inputs[i])
            points = sample_box(widen(fv, spec.kappa), empirical_samples, rng)
            outputs = net.forward_from(spec.layer_index, points).data
            outside = (outputs < band_lower[i] - EMPIRICAL_SLACK) | (outputs > band_upper[i] + EMPIRICAL_SLACK)
            violations[i] = int(np.any(outside, axis=1).sum())
            if violations[i] and certified[i]:
                logger.error(f"Sample {dataset.ids[i]} is certified but {violations[i]} sampled points leave the band")

    samples = [
        CertifiedSample(
            source_id=dataset.ids[i],
            label=dataset.labels[i].tolist(),
            lower=lower[i].tolist(),
            upper=upper[i].tolist(),
            band_lower=band_lower[i].tolist(),
            band_upper=band_upper[i].tolist(),
            certified=bool(certified[i]),
            violations=int(violations[i]),
        )
        for i in range(len(dataset))
    ]
    report = CertificationReport(spec, samples, empirical_samples, layer_name)
    logger.info(f"Certified {int(certified.sum())}/{len(dataset)} samples ({report.certified_fraction:.1%})")
    return report
