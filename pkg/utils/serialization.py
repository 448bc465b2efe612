"""
On-disk formats

Tensor files (.tns): b"RTNS", uint32 version, uint32 ndim, ndim uint32
dims, then float32 data, all little-endian.

Model files (.rbm): b"RBMF", uint32 version, uint32 header length, a UTF-8
JSON header (architecture, parameter table, provenance), then every
parameter as little-endian float64 in header order.
"""

import hashlib
import json
import logging
import struct
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from core.errors import DataError
from core.network import Network

logger = logging.getLogger(__name__)

TENSOR_MAGIC = b"RTNS"
TENSOR_VERSION = 1
MODEL_MAGIC = b"RBMF"
MODEL_VERSION = 1


def write_tensor(path, array: np.ndarray):
    array = np.asarray(array, dtype='<f4')
    header = TENSOR_MAGIC + struct.pack('<II', TENSOR_VERSION, array.ndim)
    header += struct.pack(f'<{array.ndim}I', *array.shape)
    with open(path, 'wb') as f:
        f.write(header)
        f.write(np.ascontiguousarray(array).tobytes())


def read_tensor(path) -> np.ndarray:
    """Tensor file contents as a float64 array"""
    raw = Path(path).read_bytes()
    if raw[:4] != TENSOR_MAGIC:
        raise DataError(f"{path}: not a tensor file")
    try:
        version, ndim = struct.unpack_from('<II', raw, 4)
        if version != TENSOR_VERSION:
            raise DataError(f"{path}: unsupported tensor file version {version}")
        shape = struct.unpack_from(f'<{ndim}I', raw, 12)
    except struct.error:
        raise DataError(f"{path}: truncated tensor header")
    offset = 12 + 4 * ndim
    expected = int(np.prod(shape)) * 4
    if len(raw) - offset != expected:
        raise DataError(f"{path}: expected {expected} data bytes for shape {shape}, found {len(raw) - offset}")
    return np.frombuffer(raw, dtype='<f4', offset=offset).reshape(shape).astype(np.float64)


def save_model(path, net: Network, provenance: Optional[dict] = None):
    params = net.parameter_arrays()
    table, offset = [], 0
    for name, value in params.items():
        table.append({'name': name, 'shape': list(value.shape), 'offset': offset})
        offset += value.size * 8
    header = json.dumps({
        'architecture': net.describe(),
        'parameters': table,
        'provenance': provenance or {},
    }, sort_keys=True).encode('utf-8')

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'wb') as f:
        f.write(MODEL_MAGIC + struct.pack('<II', MODEL_VERSION, len(header)))
        f.write(header)
        for value in params.values():
            f.write(np.ascontiguousarray(value, dtype='<f8').tobytes())
    logger.info(f"Saved model with {len(table)} parameter blobs to {path}")


def load_model(path) -> Tuple[Network, dict]:
    """(network, provenance) from a model file"""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"model file not found: {path}")
    raw = path.read_bytes()
    if raw[:4] != MODEL_MAGIC:
        raise DataError(f"{path}: not a model file")
    version, header_len = struct.unpack_from('<II', raw, 4)
    if version != MODEL_VERSION:
        raise DataError(f"{path}: unsupported model file version {version}")
    try:
        header = json.loads(raw[12:12 + header_len].decode('utf-8'))
    except ValueError as e:
        raise DataError(f"{path}: corrupt model header ({e})")

    base = 12 + header_len
    params: Dict[str, np.ndarray] = {}
    for entry in header['parameters']:
        count = int(np.prod(entry['shape']))
        start = base + entry['offset']
        if start + count * 8 > len(raw):
            raise DataError(f"{path}: parameter '{entry['name']}' runs past the end of the file")
        params[entry['name']] = np.frombuffer(raw, dtype='<f8', count=count, offset=start) \
            .reshape(entry['shape']).astype(np.float64)
    net = Network.from_description(header['architecture'], params)
    return net, header.get('provenance', {})


def data_hash(inputs: np.ndarray, labels: np.ndarray) -> str:
    """sha256 of a dataset's float32 inputs and float64 labels"""
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(inputs, dtype='<f4').tobytes())
    digest.update(np.ascontiguousarray(labels, dtype='<f8').tobytes())
    return digest.hexdigest()
