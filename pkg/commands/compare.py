import logging
from pathlib import Path

from config import RunConfig
from services.attack_eval import compare_models
from services.ingestion import DatasetStore
from services.training import mean_absolute_error
from utils.serialization import load_model

logger = logging.getLogger(__name__)


def cmd_compare(run: RunConfig) -> int:
    """
    Minimal FGSM epsilon of two models on one dataset, bucketed per image
    """
    settings = run.compare
    settings.validate()
    net_a, _ = load_model(settings.model_a)
    net_b, _ = load_model(settings.model_b)
    dataset = DatasetStore(settings.dataset).read()

    report = compare_models(net_a, net_b, dataset, settings.attack_config(), settings.workers, settings.names)
    report.mean_absolute_error = {
        settings.names[0]: mean_absolute_error(net_a, dataset),
        settings.names[1]: mean_absolute_error(net_b, dataset),
    }

    output = Path(settings.output)
    output.mkdir(parents=True, exist_ok=True)
    run.dump(output / 'config.yaml')
    (output / 'comparison.json').write_text(report.to_json())
    (output / 'comparison.txt').write_text(report.format_table() + '\n')
    print('\n'.join(report.format_table().splitlines()[-(5 + len(report.mean_absolute_error)):]))
    return 0
