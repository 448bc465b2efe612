import json
import logging
from pathlib import Path

from config import RunConfig
from services.certify import certify
from services.ingestion import DatasetStore
from services.interval_propagation import RobustSpec
from utils.serialization import load_model

logger = logging.getLogger(__name__)


def cmd_certify(run: RunConfig) -> int:
    settings = run.certify
    settings.validate()
    net, _ = load_model(settings.model)
    dataset = DatasetStore(settings.dataset).read()

    layer_index = net.perturbation_index(settings.layer)
    logger.info(f"Layer '{settings.layer}' resolves to perturbation index {layer_index} "
                f"(first layer after its activation)")
    spec = RobustSpec(settings.delta, layer_index, settings.kappa)
    report = certify(net, dataset, spec, settings.empirical_samples, settings.seed, settings.layer)

    output = Path(settings.output)
    output.mkdir(parents=True, exist_ok=True)
    run.dump(output / 'config.yaml')
    (output / 'certification.json').write_text(report.to_json())
    (output / 'certification.txt').write_text(report.format_table() + '\n')
    print(f"certified fraction: {report.certified_fraction:.1%} of {len(report.samples)}")
    if report.guarantee:
        print(report.guarantee)
    return 0
