"""
Synthetic lane images for dataset-free runs

Each image is a noisy dark 128x320 frame with two bright, near-vertical
line segments (the lane markings left and right of the ego lane). The label
is the midpoint of the two lines at the row that original y=500 maps to,
scaled back to 1280-wide pixel coordinates.
"""

import logging

import numpy as np

from core.errors import ContractError
from models import Dataset, IMAGE_CENTER_X
from utils.rng import generator

logger = logging.getLogger(__name__)

HEIGHT, WIDTH = 128, 320
CROP_TOP = 208
SCALE = 4
# row of the resized image that original y=500 falls on
LABEL_ROW = (500 - CROP_TOP) // SCALE

LINE_HALF_WIDTH = 1.5
BACKGROUND = -0.8
LINE_VALUE = 0.8
NOISE = 0.05


def to_original_x(column: float) -> float:
    return column * SCALE


def label_for(left: float, right: float) -> float:
    """Label of an image whose lines cross LABEL_ROW at columns left and right"""
    return to_original_x((left + right) / 2.0)


def render(left: float, right: float, left_slope: float, right_slope: float,
           rng: np.random.Generator) -> np.ndarray:
    """
    One [128, 320, 1] image with lines through (LABEL_ROW, left) and (LABEL_ROW, right)

    Slopes are in columns per row.
    """
    rows = np.arange(HEIGHT, dtype=np.float64)[:, None]
    cols = np.arange(WIDTH, dtype=np.float64)[None, :]
    image = np.full((HEIGHT, WIDTH), BACKGROUND)
    for x0, slope in ((left, left_slope), (right, right_slope)):
        centre = x0 + slope * (rows - LABEL_ROW)
        image[np.abs(cols - centre) <= LINE_HALF_WIDTH] = LINE_VALUE
    image += rng.normal(0.0, NOISE, size=image.shape)
    return np.clip(image, -1.0, 1.0)[:, :, None]


def synthetic_dataset(n: int, seed: int = 0) -> Dataset:
    """
    n deterministic samples for a seed

    Ego-lane centers are drawn so that roughly half of the labels lie 100 or
    more original pixels away from the image center.
    """
    if n < 1:
        raise ContractError(f"synthetic dataset needs n >= 1, got {n}")
    rng = generator(seed, 'synthetic')
    center_col = IMAGE_CENTER_X / SCALE

    inputs, labels = np.empty((n, HEIGHT, WIDTH, 1)), np.empty((n, 1))
    for i in range(n):
        centre = rng.uniform(center_col - 60.0, center_col + 60.0)
        half_width = rng.uniform(35.0, 60.0)
        left, right = centre - half_width, centre + half_width
        # markings converge towards the horizon: left leans right going up, right leans left
        left_slope = -rng.uniform(0.2, 0.9)
        right_slope = rng.uniform(0.2, 0.9)
        inputs[i] = render(left, right, left_slope, right_slope, rng)
        labels[i, 0] = label_for(left, right)

    logger.info(f"Generated {n} synthetic samples with seed {seed}")
    return Dataset(inputs, labels, ids=[f"synthetic-{seed}-{i:06d}" for i in range(n)])
