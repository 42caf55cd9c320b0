"""
GeoLab - Checkpoint Container
GEOL binary format: magic, version, JSON manifest, then named little-endian arrays
"""
import json
import logging
import os
import struct
from typing import Any, Dict, Iterable, Optional, Tuple

import numpy as np

from geolab.nn.params import ParameterStore
from geolab.utils.errors import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b'GEOL'
VERSION = 1
DTYPE_CODES = {0: np.dtype('<f4'), 1: np.dtype('<f8')}
CODE_OF_DTYPE = {np.dtype('float32'): 0, np.dtype('float64'): 1}


def save_checkpoint(path: str, store: ParameterStore, manifest: Dict[str, Any]) -> str:
    """Write every parameter of the store; returns the path"""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    manifest_bytes = json.dumps(manifest, sort_keys=True).encode('utf-8')
    tmp_path = path + '.tmp'
    with open(tmp_path, 'wb') as fh:
        fh.write(MAGIC)
        fh.write(struct.pack('<H', VERSION))
        fh.write(struct.pack('<I', len(manifest_bytes)))
        fh.write(manifest_bytes)
        fh.write(struct.pack('<I', len(store)))
        for name, param in store.items():
            code = CODE_OF_DTYPE.get(param.dtype)
            if code is None:
                raise CheckpointError(f"{name}: unsupported dtype {param.dtype}")
            name_bytes = name.encode('utf-8')
            fh.write(struct.pack('<H', len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack('<BB', code, param.ndim))
            fh.write(struct.pack(f'<{param.ndim}I', *param.shape))
            fh.write(np.ascontiguousarray(param.data, dtype=DTYPE_CODES[code]).tobytes())
    os.replace(tmp_path, path)
    logger.info(f"Saved checkpoint {path} ({store.num_parameters()} parameters)")
    return path


def _read(fh, fmt: str) -> Tuple:
    size = struct.calcsize(fmt)
    raw = fh.read(size)
    if len(raw) != size:
        raise CheckpointError("truncated checkpoint")
    return struct.unpack(fmt, raw)


def read_checkpoint(path: str) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """Parse a GEOL file into (arrays, manifest)"""
    if not os.path.exists(path):
        raise CheckpointError(f"checkpoint not found: {path}")
    with open(path, 'rb') as fh:
        if fh.read(4) != MAGIC:
            raise CheckpointError(f"{path}: bad magic, not a GEOL checkpoint")
        (version,) = _read(fh, '<H')
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        (manifest_len,) = _read(fh, '<I')
        try:
            manifest = json.loads(fh.read(manifest_len).decode('utf-8'))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"{path}: unreadable manifest ({e})")
        (count,) = _read(fh, '<I')
        arrays = {}
        for _ in range(count):
            (name_len,) = _read(fh, '<H')
            name = fh.read(name_len).decode('utf-8')
            code, ndim = _read(fh, '<BB')
            if code not in DTYPE_CODES:
                raise CheckpointError(f"{path}: array {name} has unknown dtype code {code}")
            shape = _read(fh, f'<{ndim}I') if ndim else ()
            dtype = DTYPE_CODES[code]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            payload = fh.read(nbytes)
            if len(payload) != nbytes:
                raise CheckpointError(f"{path}: array {name} is truncated")
            arrays[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
    return arrays, manifest


def load_checkpoint(path: str, store: Optional[ParameterStore] = None,
                    prefixes: Optional[Iterable[str]] = None) -> Dict[str, Any]:
    """Validate shapes and copy arrays into `store`; prefixes restrict which arrays load"""
    arrays, manifest = read_checkpoint(path)
    if store is not None:
        if prefixes is None:
            missing = [n for n in store if n not in arrays]
            if missing:
                raise CheckpointError(f"{path}: missing {len(missing)} parameters, e.g. {missing[0]}")
        loaded = store.load_state_dict(arrays, prefixes)
        logger.info(f"Loaded {len(loaded)} arrays from {path}")
    return manifest
