import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from core.errors import DataError
from models import IMAGE_CENTER_X, IMAGE_HEIGHT, IMAGE_WIDTH, Dataset, LaneRecord, Sample
from services.parser import LABEL_HEIGHT, LaneLabelParser, label_or_reason
from utils.image_io import load_image
from utils.serialization import data_hash, read_tensor, write_tensor

logger = logging.getLogger(__name__)

CROP_TOP = 208
DOWNSAMPLE = 4
RARE_DISTANCE = 100.0


def normalize(values: np.ndarray) -> np.ndarray:
    """t(v) = 2v/255 - 1"""
    return values * 2.0 / 255.0 - 1.0


def preprocess(image: np.ndarray) -> np.ndarray:
    """
    720x1280 (x c) image -> normalized [128, 320, 1] network input

    Keeps rows 208..719, averages channels to grayscale, box-filters 4x4
    blocks and maps 0..255 to -1..1.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3 and image.shape[2] in (1, 3):
        image = image.mean(axis=2)
    if image.shape != (IMAGE_HEIGHT, IMAGE_WIDTH):
        raise DataError(f"expected a {IMAGE_HEIGHT}x{IMAGE_WIDTH} image with 1 or 3 channels, got {image.shape}")
    cropped = image[CROP_TOP:]
    h, w = cropped.shape[0] // DOWNSAMPLE, cropped.shape[1] // DOWNSAMPLE
    small = cropped.reshape(h, DOWNSAMPLE, w, DOWNSAMPLE).mean(axis=(1, 3))
    return normalize(small)[:, :, None]


def is_rare(label: float) -> bool:
    return abs(label - IMAGE_CENTER_X) >= RARE_DISTANCE


def duplicate_rare(samples: Sequence[Sample]) -> List[Sample]:
    """Every sample whose label is 100 or more pixels from the center is followed by a flagged copy"""
    out = []
    for sample in samples:
        out.append(sample)
        if is_rare(float(sample.label[0])):
            out.append(replace(sample, duplicated=True))
    logger.info(f"Duplicated {len(out) - len(samples)} of {len(samples)} samples far from the center")
    return out


class IngestionService:
    """
    Builds samples from TuSimple label records and their images

    Records are processed independently; a record that cannot be labelled
    or whose image cannot be read is skipped with a reason and never aborts
    the run.
    """

    def __init__(self, images_dir, height: float = LABEL_HEIGHT, workers: int = 1):
        self.images_dir = Path(images_dir)
        self.height = height
        self.workers = max(1, workers)
        self.parser = LaneLabelParser()

    def ingest_record(self, rec: LaneRecord) -> Tuple[Optional[Sample], str]:
        """
        One record to a sample, or None and a skip reason
        """
        label, reason = label_or_reason(rec, self.height)
        if label is None:
            return None, reason
        try:
            image = load_image(self.images_dir / rec.raw_file)
            return Sample(preprocess(image), label, rec.raw_file), ''
        except Exception as e:
            logger.warning(f"Skipping {rec.raw_file}: {e}")
            return None, str(e)

    def ingest_file(self, labels_path) -> Tuple[List[Sample], List[dict]]:
        """
        All samples of a label file in record order plus the skip log
        """
        records, skipped = self.parser.parse_file(labels_path)
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            results = list(pool.map(self.ingest_record, records))

        samples = []
        for rec, (sample, reason) in zip(records, results):
            if sample is None:
                skipped.append({'source': rec.raw_file, 'reason': reason})
            else:
                samples.append(sample)
        logger.info(f"Ingested {len(samples)} samples from {labels_path}, skipped {len(skipped)}")
        return samples, skipped


class DatasetStore:
    """
    Directory layout:
        index.jsonl     one {"id", "file", "label", "duplicated"} record per sample, in order
        samples/        <n>.tns tensor file per sample
        skipped.jsonl   records omitted during preparation, with reasons
        manifest.json   counts and the data hash
    """

    def __init__(self, root):
        self.root = Path(root)

    @property
    def index_path(self) -> Path:
        return self.root / 'index.jsonl'

    def write(self, dataset: Dataset, skipped: Sequence[dict] = (), extra: Optional[dict] = None) -> dict:
        try:
            return self._write(dataset, skipped, extra)
        except OSError as e:
            logger.error(f"Error writing dataset to {self.root}: {str(e)}")
            raise DataError(f"could not write dataset to {self.root}: {e}")

    def _write(self, dataset: Dataset, skipped: Sequence[dict], extra: Optional[dict]) -> dict:
        samples_dir = self.root / 'samples'
        samples_dir.mkdir(parents=True, exist_ok=True)

        with open(self.index_path, 'w') as index:
            for i in range(len(dataset)):
                name = f"{i:06d}.tns"
                write_tensor(samples_dir / name, dataset.inputs[i])
                index.write(json.dumps({
                    'id': dataset.ids[i],
                    'file': f"samples/{name}",
                    'label': dataset.labels[i].tolist(),
                    'duplicated': dataset.duplicated[i],
                }) + '\n')

        with open(self.root / 'skipped.jsonl', 'w') as f:
            for entry in skipped:
                f.write(json.dumps(entry) + '\n')

        manifest = {
            'samples': len(dataset),
            'duplicated': int(sum(dataset.duplicated)),
            'skipped': len(skipped),
            'input_shape': list(dataset.input_shape),
            'output_dim': dataset.output_dim,
            'data_hash': data_hash(dataset.inputs, dataset.labels),
            **(extra or {}),
        }
        (self.root / 'manifest.json').write_text(json.dumps(manifest, indent=2, sort_keys=True))
        logger.info(f"Wrote {len(dataset)} samples to {self.root}")
        return manifest

    def read(self) -> Dataset:
        if not self.index_path.is_file():
            raise DataError(f"no dataset index at {self.index_path}")
        inputs, labels, ids, duplicated = [], [], [], []
        with open(self.index_path) as index:
            for line_number, line in enumerate(index, start=1):
                try:
                    entry = json.loads(line)
                    inputs.append(read_tensor(self.root / entry['file']))
                    labels.append(entry['label'])
                    ids.append(entry['id'])
                    duplicated.append(bool(entry.get('duplicated', False)))
                except (ValueError, KeyError) as e:
                    raise DataError(f"{self.index_path}:{line_number}: bad index entry ({e})")
        if not inputs:
            raise DataError(f"dataset at {self.root} is empty")
        logger.info(f"Loaded {len(inputs)} samples from {self.root}")
        return Dataset(np.stack(inputs), np.asarray(labels), ids, duplicated)

    def manifest(self) -> dict:
        path = self.root / 'manifest.json'
        return json.loads(path.read_text()) if path.is_file() else {}
