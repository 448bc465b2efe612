import logging
from pathlib import Path

from config import RunConfig
from core.errors import DataError
from models import Dataset
from services.ingestion import DatasetStore, IngestionService, duplicate_rare
from utils.synthetic import synthetic_dataset

logger = logging.getLogger(__name__)


def cmd_data_prep(run: RunConfig) -> int:
    """
    Build a dataset directory from TuSimple labels or the synthetic generator
    """
    settings = run.data_prep
    settings.validate()
    output = Path(settings.output)

    if settings.synthetic is not None:
        samples = list(synthetic_dataset(settings.synthetic, settings.seed))
        skipped = []
        source = {'source': 'synthetic', 'count': settings.synthetic, 'seed': settings.seed}
    else:
        service = IngestionService(settings.images, height=settings.height, workers=settings.workers)
        samples, skipped = service.ingest_file(settings.tusimple)
        source = {'source': 'tusimple', 'labels': str(settings.tusimple), 'images': str(settings.images)}
    if not samples:
        raise DataError(f"no usable samples ({len(skipped)} records skipped)")

    if settings.duplicate_rare:
        samples = duplicate_rare(samples)

    manifest = DatasetStore(output).write(Dataset.from_samples(samples), skipped, extra=source)
    run.dump(output / 'config.yaml')
    logger.info(f"Dataset ready at {output}: {manifest['samples']} samples, "
                f"{manifest['duplicated']} duplicated, {manifest['skipped']} skipped")
    return 0
