import json

import numpy as np
import pytest

from core.errors import DataError, ValidationError
from models import Dataset, Sample
from services.ingestion import DatasetStore, IngestionService, duplicate_rare, is_rare, normalize, preprocess
from utils.image_io import save_image
from utils.serialization import data_hash
from utils.synthetic import synthetic_dataset


def test_normalize_endpoints():
    np.testing.assert_array_equal(normalize(np.array([0.0, 127.5, 255.0])), [-1.0, 0.0, 1.0])


@pytest.mark.parametrize("shape", [(720, 1280), (720, 1280, 1), (720, 1280, 3)])
def test_preprocess_shapes(shape):
    out = preprocess(np.full(shape, 255, dtype=np.uint8))
    assert out.shape == (128, 320, 1)
    np.testing.assert_array_equal(out, 1.0)


def test_preprocess_crops_the_sky():
    image = np.zeros((720, 1280), dtype=np.uint8)
    image[:208] = 255
    np.testing.assert_array_equal(preprocess(image), -1.0)


def test_preprocess_averages_blocks_and_channels():
    image = np.zeros((720, 1280, 3), dtype=np.uint8)
    image[208, 0] = (255, 255, 255)
    image[212:216, 4:8, 0] = 255
    out = preprocess(image)
    assert out[0, 0, 0] == pytest.approx(255 / 16 * 2 / 255 - 1)
    assert out[1, 1, 0] == pytest.approx(85 * 2 / 255 - 1)
    assert out[2, 2, 0] == -1.0


@pytest.mark.parametrize("shape", [(720, 1279), (360, 640, 3), (720, 1280, 2)])
def test_preprocess_rejects_other_shapes(shape):
    with pytest.raises(DataError):
        preprocess(np.zeros(shape))


def test_duplicate_rare():
    labels = [550.0, 540.0, 500.0, 740.0, 700.0]
    samples = [Sample(np.zeros((2, 2, 1)), label, f"s{i}") for i, label in enumerate(labels)]
    out = duplicate_rare(samples)
    assert [is_rare(label) for label in labels] == [False, True, True, True, False]
    assert len(out) == len(samples) + 3
    assert [(s.source_id, s.duplicated) for s in out] == [
        ('s0', False), ('s1', False), ('s1', True), ('s2', False), ('s2', True),
        ('s3', False), ('s3', True), ('s4', False)]


@pytest.mark.parametrize("label", [-0.5, 1280.5, float('nan')])
def test_sample_rejects_label_outside_image(label):
    with pytest.raises(ValidationError, match=r'outside \[0, 1280\]'):
        Sample(np.zeros((2, 2, 1)), label, 'clips/a.jpg')


@pytest.mark.parametrize("label", [0.0, 640.0, 1280.0])
def test_sample_accepts_label_edges(label):
    assert Sample(np.zeros((2, 2, 1)), label, 'clips/a.jpg').label.tolist() == [label]


def test_sample_rejects_input_outside_unit_range():
    with pytest.raises(DataError):
        Sample(np.full((2, 2, 1), 1.5), 640.0, 'clips/a.jpg')


def test_dataset_store_round_trip(tmp_path):
    dataset = synthetic_dataset(5, seed=2)
    store = DatasetStore(tmp_path / 'data')
    manifest = store.write(dataset, [{'source': 'x.jpg', 'reason': 'no h_samples'}], {'seed': 2})
    loaded = store.read()
    np.testing.assert_allclose(loaded.inputs, dataset.inputs, atol=1e-6)
    np.testing.assert_array_equal(loaded.labels, dataset.labels)
    assert loaded.ids == dataset.ids
    assert loaded.duplicated == dataset.duplicated
    assert manifest['samples'] == 5 and manifest['skipped'] == 1 and manifest['seed'] == 2
    assert manifest['data_hash'] == data_hash(loaded.inputs, loaded.labels)
    assert store.manifest() == manifest


def test_dataset_store_is_reproducible(tmp_path):
    for name in ('a', 'b'):
        DatasetStore(tmp_path / name).write(synthetic_dataset(4, seed=9))
    assert (tmp_path / 'a' / 'index.jsonl').read_bytes() == (tmp_path / 'b' / 'index.jsonl').read_bytes()
    assert (tmp_path / 'a' / 'samples' / '000003.tns').read_bytes() == \
        (tmp_path / 'b' / 'samples' / '000003.tns').read_bytes()


def test_dataset_store_missing(tmp_path):
    with pytest.raises(DataError):
        DatasetStore(tmp_path).read()


def test_ingestion_service(tmp_path):
    image = np.zeros((720, 1280), dtype=np.uint8)
    image[208:, 600:700] = 200
    save_image(tmp_path / 'images' / 'clips' / 'a.png', image)

    lines = [
        {'lanes': [[300], [800]], 'h_samples': [500], 'raw_file': 'clips/a.png'},
        {'lanes': [[300], [800]], 'h_samples': [500], 'raw_file': 'clips/missing.png'},
        {'lanes': [[100], [300]], 'h_samples': [500], 'raw_file': 'clips/a.png'},
    ]
    labels = tmp_path / 'label_data.json'
    labels.write_text('\n'.join(json.dumps(line) for line in lines) + '\n')

    samples, skipped = IngestionService(tmp_path / 'images', workers=2).ingest_file(labels)
    assert len(samples) == 1
    assert samples[0].label.tolist() == [550.0]
    np.testing.assert_allclose(samples[0].input, preprocess(image))
    assert [entry['source'] for entry in skipped] == ['clips/missing.png', 'clips/a.png']
    assert 'image not found' in skipped[0]['reason']

    dataset = Dataset.from_samples(duplicate_rare(samples))
    assert len(dataset) == 1
