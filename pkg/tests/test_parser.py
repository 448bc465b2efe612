import json

import pytest

from core.errors import DataError
from models import LaneRecord
from services.parser import LaneLabelParser, generate_label, label_or_reason, lane_x_at


def _record(lanes, h_samples=(500,), raw_file='clips/0/20.jpg'):
    return LaneRecord(h_samples=h_samples, lanes=lanes, raw_file=raw_file)


@pytest.mark.parametrize("lanes,expected", [
    ([[300], [800]], 550.0),
    ([[800], [300]], 550.0),
    ([[100], [300], [800], [1100]], 550.0),
    ([[400], [880]], 640.0),
    ([[-2], [300], [800]], 550.0),
])
def test_label_is_midpoint_of_lanes_around_center(lanes, expected):
    assert generate_label(_record(lanes)) == expected


@pytest.mark.parametrize("lanes", [[[100], [300]], [[700], [900]], [[300]], [], [[-2], [-2]]])
def test_records_without_a_lane_pair_are_omitted(lanes):
    label, reason = label_or_reason(_record(lanes))
    assert label is None
    assert 'no lane pair' in reason


def test_label_interpolates_between_sampled_rows():
    rec = _record([[280, 320], [820, 780]], h_samples=(480, 520))
    assert generate_label(rec) == pytest.approx(550.0)


def test_height_outside_sampled_range():
    label, reason = label_or_reason(_record([[300, 300], [800, 800]], h_samples=(160, 290)))
    assert label is None
    assert 'outside' in reason


def test_lane_x_at():
    h = (480, 500, 520)
    assert lane_x_at((290, 300, 310), h, 500) == 300
    assert lane_x_at((290, 300, 310), h, 510) == pytest.approx(305)
    assert lane_x_at((290, -2, 310), h, 500) is None
    assert lane_x_at((290, -2, 310), h, 490) is None
    assert lane_x_at((290, 300, 310), h, 600) is None


def test_parse_line():
    parser = LaneLabelParser()
    line = json.dumps({'lanes': [[-2, 300], [-2, 800]], 'h_samples': [490, 500], 'raw_file': 'clips/a/20.jpg'})
    rec = parser.parse_line(line, 1)
    assert rec.raw_file == 'clips/a/20.jpg'
    assert rec.lanes[0] == (-2.0, 300.0)


@pytest.mark.parametrize("line", [
    'not json',
    '[1, 2, 3]',
    json.dumps({'lanes': [[300]], 'h_samples': [500]}),
    json.dumps({'lanes': [[300, 310]], 'h_samples': [500], 'raw_file': 'x.jpg'}),
    json.dumps({'lanes': 7, 'h_samples': [500], 'raw_file': 'x.jpg'}),
])
def test_parse_line_rejects(line):
    with pytest.raises(DataError):
        LaneLabelParser().parse_line(line, 4)


def test_parse_file_skips_malformed_lines(tmp_path):
    good = json.dumps({'lanes': [[300], [800]], 'h_samples': [500], 'raw_file': 'clips/a.jpg'})
    path = tmp_path / 'label_data.json'
    path.write_text('\n'.join([good, '{broken', '', json.dumps({'lanes': []}), good]) + '\n')
    records, errors = LaneLabelParser().parse_file(path)
    assert len(records) == 2
    assert [e['source'] for e in errors] == ['label_data.json:2', 'label_data.json:4']


def test_parse_file_missing(tmp_path):
    with pytest.raises(DataError):
        LaneLabelParser().parse_file(tmp_path / 'nope.json')
