"""
GeoLab - Helper Utilities
Seeded random streams, hashing, response envelopes and small formatting helpers
"""
import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, Dict, List, Optional, Sequence, TypeVar

import numpy as np

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1

T = TypeVar('T')
R = TypeVar('R')


def rng_stream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for (seed, *keys); order of creation does not matter"""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(k) for k in keys]]))


def spawn_seeds(rng: np.random.Generator, count: int) -> np.ndarray:
    """Draw per-item seeds from a master generator"""
    return rng.integers(0, 2 ** 32 - 1, size=count, dtype=np.uint64)


def map_documents(fn: Callable[[T], R], items: Sequence[T], jobs: int = 1) -> List[R]:
    """Order-preserving map; a process pool when jobs > 1 (fn must be picklable)"""
    items = list(items)
    if jobs <= 1 or len(items) < 2:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def stable_hash(payload: Any) -> str:
    """SHA-256 of the canonical JSON form of payload"""
    canonical = json.dumps(payload, sort_keys=True, separators=(',', ':'), default=str)
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def harmonic_f1(precision: float, recall: float) -> float:
    """F1 as 2PR/(P+R), 0 when both are 0"""
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def safe_ratio(numerator: float, denominator: float) -> float:
    return 0.0 if denominator == 0 else numerator / denominator


def format_file_size(size_bytes: int) -> str:
    """Format file size in human readable format"""
    if size_bytes == 0:
        return "0 B"

    size_units = ["B", "KB", "MB", "GB"]
    size = float(size_bytes)
    unit_index = 0

    while size >= 1024 and unit_index < len(size_units) - 1:
        size /= 1024
        unit_index += 1

    return f"{size:.1f} {size_units[unit_index]}"


def parse_int_list(value) -> list:
    """'1, 5,10' -> [1, 5, 10]; lists pass through"""
    if isinstance(value, (list, tuple)):
        return [int(v) for v in value]
    return [int(part) for part in str(value).split(',') if part.strip()]


def create_error_response(message: str, status_code: int = 2, details: Dict = None) -> Dict:
    """Create standardized error response"""
    response = {
        'success': False,
        'error': message,
        'status_code': status_code
    }

    if details:
        response.update(details)

    return response


def create_success_response(data: Any = None, message: str = None) -> Dict:
    """Create standardized success response"""
    response = {
        'success': True
    }

    if message:
        response['message'] = message

    if data is not None:
        response['data'] = data

    return response


def run_metadata(config_hash: str, seed: int, extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Fields every artifact carries"""
    meta = {
        'config_hash': config_hash,
        'seed': int(seed),
        'format_version': FORMAT_VERSION,
    }
    if extra:
        meta.update(extra)
    return meta
