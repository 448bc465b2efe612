import logging
from pathlib import Path

import cv2
import numpy as np

from core.errors import DataError

logger = logging.getLogger(__name__)


def load_image(path) -> np.ndarray:
    """
    Decode a raster image (PNG, JPEG, PGM, ...) as uint8 [h, w] or RGB [h, w, 3]
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"image not found: {path}")
    image = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if image is None:
        raise DataError(f"could not decode image: {path}")
    if image.dtype != np.uint8:
        image = cv2.convertScaleAbs(image, alpha=255.0 / max(1, int(image.max())))
    if image.ndim == 3:
        if image.shape[2] == 4:
            image = cv2.cvtColor(image, cv2.COLOR_BGRA2RGB)
        elif image.shape[2] == 3:
            image = cv2.cvtColor(image, cv2.COLOR_BGR2RGB)
    return image


def save_image(path, image: np.ndarray):
    """Encode uint8 [h, w] or RGB [h, w, 3]; the format follows the file extension"""
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim == 3 and image.shape[2] == 3:
        image = cv2.cvtColor(image, cv2.COLOR_RGB2BGR)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), image):
        raise DataError(f"could not encode image: {path}")
