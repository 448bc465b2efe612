import json
import logging
from pathlib import Path
from typing import List, Optional, Tuple

from core.errors import DataError
from models import IMAGE_CENTER_X, LaneRecord

logger = logging.getLogger(__name__)

LABEL_HEIGHT = 500
REQUIRED_FIELDS = ('lanes', 'h_samples', 'raw_file')


class LaneLabelParser:
    """
    Reads TuSimple lane annotations: one JSON object per line with the
    fields lanes, h_samples and raw_file
    """

    def parse_line(self, line: str, line_number: int = 0) -> LaneRecord:
        """
        Parse one label line into a LaneRecord
        """
        try:
            payload = json.loads(line)
        except (ValueError, TypeError) as e:
            raise DataError(f"line {line_number}: not valid JSON ({e})")
        if not isinstance(payload, dict):
            raise DataError(f"line {line_number}: expected an object, got {type(payload).__name__}")

        missing = [name for name in REQUIRED_FIELDS if name not in payload]
        if missing:
            raise DataError(f"line {line_number}: missing required fields {missing}")

        try:
            return LaneRecord(
                h_samples=payload['h_samples'],
                lanes=payload['lanes'],
                raw_file=str(payload['raw_file']),
            )
        except (TypeError, ValueError) as e:
            raise DataError(f"line {line_number}: malformed lanes or h_samples ({e})")

    def parse_file(self, path) -> Tuple[List[LaneRecord], List[dict]]:
        """
        Parse a label file; malformed lines are logged and returned as errors
        instead of aborting the file
        """
        path = Path(path)
        if not path.is_file():
            raise DataError(f"label file not found: {path}")

        records, errors = [], []
        with open(path) as f:
            for line_number, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    records.append(self.parse_line(line, line_number))
                except DataError as e:
                    logger.warning(f"Skipping label line: {e}")
                    errors.append({'source': f"{path.name}:{line_number}", 'reason': str(e)})

        logger.info(f"Parsed {len(records)} lane records from {path} ({len(errors)} malformed)")
        return records, errors


def lane_x_at(lane, h_samples, height: float) -> Optional[float]:
    """
    x of one lane at a row, or None when the lane has no marking there

    Rows between two sampled heights are linearly interpolated when both
    neighbours are present.
    """
    points = sorted(zip(h_samples, lane))
    for y, x in points:
        if y == height:
            return x if x >= 0 else None

    for (y0, x0), (y1, x1) in zip(points, points[1:]):
        if y0 < height < y1:
            if x0 < 0 or x1 < 0:
                return None
            return x0 + (x1 - x0) * (height - y0) / (y1 - y0)
    return None


def label_or_reason(rec: LaneRecord, height: float = LABEL_HEIGHT) -> Tuple[Optional[float], str]:
    """The ego-lane center label of a record, or None with the reason it was omitted"""
    if not rec.h_samples:
        return None, 'no h_samples'
    if not min(rec.h_samples) <= height <= max(rec.h_samples):
        return None, f"height {height} outside sampled range {min(rec.h_samples)}..{max(rec.h_samples)}"

    xs = sorted(x for x in (lane_x_at(lane, rec.h_samples, height) for lane in rec.lanes) if x is not None)
    for left, right in zip(xs, xs[1:]):
        if left < IMAGE_CENTER_X < right:
            return (left + right) / 2.0, ''
    return None, f"no lane pair around x={IMAGE_CENTER_X:g} at y={height:g} ({len(xs)} lanes present)"


def generate_label(rec: LaneRecord, height: float = LABEL_HEIGHT) -> Optional[float]:
    """
    Average x of the two adjacent lanes straddling the image center at a row

    Lanes are ordered left to right by their x at that row, so the order of
    the lane lists in the record does not matter. Returns None when the
    record has to be omitted.
    """
    label, reason = label_or_reason(rec, height)
    if label is None:
        logger.debug(f"Omitting {rec.raw_file}: {reason}")
    return label
