"""
GeoLab - Configuration Settings
Profile defaults (desk / smoke / testing) plus flat KEY=value experiment files
"""
import os
from typing import Any, Dict, Iterable, Optional

import numpy as np
from dotenv import dotenv_values, load_dotenv

from geolab.utils.errors import ConfigError
from geolab.utils.helpers import parse_int_list, stable_hash

# Load environment variables from .env file if it exists
load_dotenv()

# keys that change where or how fast a run goes, never what it computes
PLUMBING_KEYS = frozenset({'OUT_DIR', 'JOBS', 'LOG_LEVEL'})

INIT_CHOICES = ('pretrained', 'random-heads', 'random')
HEAD_INIT_CHOICES = ('pretrained', 'random')
RFE_INIT_CHOICES = ('pretrained', 'random', 'none')
LINK_ORDER_CHOICES = ('father-son', 'son-father')


class Config:
    # Run plumbing
    SEED = 0
    OUT_DIR = os.environ.get('GEOLAB_OUT_DIR', 'runs/desk')
    JOBS = int(os.environ.get('GEOLAB_JOBS', '1'))
    LOG_LEVEL = os.environ.get('LOG_LEVEL', 'INFO')
    DTYPE = 'float32'

    # Corpus generation
    CORPUS_PRETRAIN_DOCS = 500
    CORPUS_FINETUNE_DOCS = 100
    CORPUS_TEST_DOCS = 50
    CORPUS_COLUMNS = 2
    CORPUS_ROWS = 5
    CORPUS_JITTER = 3.0
    CORPUS_MULTI_FATHER_RATE = 0.25
    CORPUS_MULTI_SON_RATE = 0.15
    CORPUS_HEADER_RATE = 0.5
    CORPUS_NOISE_RATE = 0.1
    CORPUS_VOCABULARY_SIZE = 80
    CORPUS_VOCABULARY_OVERLAP = 0.8
    CORPUS_PAGE_WIDTH = 1000.0
    CORPUS_PAGE_HEIGHT = 1000.0
    CORPUS_SEGMENT_PROB = 0.9
    CORPUS_PRETRAIN_LINE_LEVEL = True
    CORPUS_MIN_COUNT = 1

    # FUNSD ingestion
    FUNSD_LINK_ORDER = 'father-son'

    # Model dimensions
    MODEL_HIDDEN = 256
    MODEL_LAYERS = 4
    MODEL_HEADS = 4
    MODEL_FFN = 1024
    MODEL_MAX_TOKENS = 512
    MODEL_RELATION_DIM = 256
    MODEL_RFE_HEADS = 2
    MODEL_RFE_FFN = 512
    MODEL_POSITIVE_CAP = 128
    MODEL_SER_HIDDEN = 256
    MODEL_INIT_STD = 0.02

    # Pre-training
    PRETRAIN_EPOCHS = 3
    PRETRAIN_LR = 5e-4
    PRETRAIN_WEIGHT_DECAY = 0.01
    PRETRAIN_BATCH_SIZE = 4
    PRETRAIN_CLIP_NORM = 1.0
    PRETRAIN_DDM = True
    PRETRAIN_DDE = True
    PRETRAIN_CIT = True
    PRETRAIN_MVLM = True
    PRETRAIN_DDM_ANCHORS = 16
    PRETRAIN_DDM_PARTNERS = 32
    PRETRAIN_DDE_PAIRS = 40
    PRETRAIN_DDE_THRESHOLD = 0.6
    PRETRAIN_DDE_RATIO = 0.7
    PRETRAIN_CIT_TRIPLETS = 16
    PRETRAIN_MASK_RATE = 0.15
    PRETRAIN_VERIFY_LABELS = False

    # Fine-tuning
    FINETUNE_EPOCHS = 20
    FINETUNE_LR = 1e-3
    FINETUNE_WEIGHT_DECAY = 0.01
    FINETUNE_BATCH_SIZE = 2
    FINETUNE_CLIP_NORM = 1.0
    FINETUNE_TRAIN_DOCS = 20
    FINETUNE_INIT = 'pretrained'
    FINETUNE_CRP_INIT = 'pretrained'
    FINETUNE_RFE_INIT = 'pretrained'
    FINETUNE_VARIANCE_LOSS = True
    FINETUNE_VARIANCE_WEIGHT = 1.0

    # Decoding
    RSF_ENABLED = True
    RSF_TAU = 1e-3
    CONSTRAINT_ENABLED = False
    CONSTRAINT_DELTA_FACTOR = 3.0

    # Probing, few-shot, ablations
    PROBE_EPOCHS = 200
    PROBE_LR = 1e-2
    PROBE_TRAIN_DOCS = 50
    PROBE_TEST_DOCS = 50
    FEWSHOT_SHOTS = '1,5,10,20'
    FEWSHOT_SEEDS = '0,1,2'
    ABLATE_SEEDS = '0,1,2'
    ABLATE_PRETRAIN_DOCS = 100

    # Gradient verification
    GRADCHECK_EPS = 1e-5
    GRADCHECK_MAX_COORDS = 200
    GRADCHECK_TOLERANCE = 1e-4


class DeskConfig(Config):
    """Desk-scale defaults: CPU, minutes per stage"""


class SmokeConfig(Config):
    """Tiny end-to-end runs for checking the pipeline wiring"""
    OUT_DIR = os.environ.get('GEOLAB_OUT_DIR', 'runs/smoke')

    CORPUS_PRETRAIN_DOCS = 16
    CORPUS_FINETUNE_DOCS = 8
    CORPUS_TEST_DOCS = 6
    CORPUS_ROWS = 3

    MODEL_HIDDEN = 32
    MODEL_LAYERS = 1
    MODEL_HEADS = 2
    MODEL_FFN = 64
    MODEL_MAX_TOKENS = 128
    MODEL_RELATION_DIM = 32
    MODEL_RFE_FFN = 64
    MODEL_POSITIVE_CAP = 32
    MODEL_SER_HIDDEN = 32

    PRETRAIN_EPOCHS = 1
    FINETUNE_EPOCHS = 2
    FINETUNE_TRAIN_DOCS = 8
    PROBE_EPOCHS = 20
    PROBE_TRAIN_DOCS = 8
    PROBE_TEST_DOCS = 6
    FEWSHOT_SHOTS = '1,2'
    FEWSHOT_SEEDS = '0'
    ABLATE_SEEDS = '0'
    ABLATE_PRETRAIN_DOCS = 8


class TestingConfig(SmokeConfig):
    """Unit tests: float64 throughout, smallest dimensions"""
    DTYPE = 'float64'
    LOG_LEVEL = 'WARNING'

    CORPUS_PRETRAIN_DOCS = 6
    CORPUS_FINETUNE_DOCS = 4
    CORPUS_TEST_DOCS = 3
    CORPUS_COLUMNS = 2
    CORPUS_ROWS = 2

    MODEL_HIDDEN = 8
    MODEL_HEADS = 2
    MODEL_FFN = 16
    MODEL_MAX_TOKENS = 96
    MODEL_RELATION_DIM = 8
    MODEL_RFE_FFN = 16
    MODEL_POSITIVE_CAP = 16
    MODEL_SER_HIDDEN = 8

    FINETUNE_EPOCHS = 1
    FINETUNE_TRAIN_DOCS = 4
    PROBE_EPOCHS = 5
    PROBE_TRAIN_DOCS = 4
    PROBE_TEST_DOCS = 3
    GRADCHECK_MAX_COORDS = 40


# Configuration mapping
config_map = {
    'desk': DeskConfig,
    'smoke': SmokeConfig,
    'testing': TestingConfig,
    'default': DeskConfig
}


def get_config(config_name):
    """Get configuration class by name"""
    return config_map.get(config_name, config_map['default'])


def _defaults(profile_cls) -> Dict[str, Any]:
    return {key: getattr(profile_cls, key) for key in dir(profile_cls) if key.isupper()}


def _coerce(key: str, raw: Any, default: Any) -> Any:
    if raw is None:
        raise ConfigError(f"{key}: missing value")
    if isinstance(default, bool):
        if isinstance(raw, bool):
            return raw
        text = str(raw).strip().lower()
        if text in ('true', '1', 't', 'yes', 'on'):
            return True
        if text in ('false', '0', 'f', 'no', 'off'):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected {type(default).__name__}, got {raw!r}")
    return str(raw).strip()


class ExperimentConfig:
    """Resolved experiment settings; attribute access by key name"""

    def __init__(self, values: Dict[str, Any], profile: str = 'desk'):
        self._values = dict(values)
        self.profile = profile
        self._validate()

    def __getattr__(self, key):
        values = self.__dict__.get('_values')
        if values is not None and key in values:
            return values[key]
        raise AttributeError(key)

    def __getitem__(self, key):
        return self._values[key]

    def __contains__(self, key):
        return key in self._values

    def get(self, key, default=None):
        return self._values.get(key, default)

    def to_dict(self) -> Dict[str, Any]:
        return dict(sorted(self._values.items()))

    def section(self, prefix: str) -> Dict[str, Any]:
        return {k: v for k, v in sorted(self._values.items()) if k.startswith(prefix)}

    def replace(self, **overrides) -> 'ExperimentConfig':
        values = dict(self._values)
        values.update(_apply(values, overrides))
        return ExperimentConfig(values, self.profile)

    def config_hash(self) -> str:
        experiment = {k: v for k, v in self._values.items() if k not in PLUMBING_KEYS}
        return stable_hash(experiment)

    @property
    def dtype(self):
        return np.float64 if self.DTYPE == 'float64' else np.float32

    @property
    def fewshot_shots(self):
        return parse_int_list(self.FEWSHOT_SHOTS)

    @property
    def fewshot_seeds(self):
        return parse_int_list(self.FEWSHOT_SEEDS)

    @property
    def ablate_seeds(self):
        return parse_int_list(self.ABLATE_SEEDS)

    def _validate(self):
        checks = (
            ('FINETUNE_INIT', INIT_CHOICES),
            ('FINETUNE_CRP_INIT', HEAD_INIT_CHOICES),
            ('FINETUNE_RFE_INIT', RFE_INIT_CHOICES),
            ('FUNSD_LINK_ORDER', LINK_ORDER_CHOICES),
            ('DTYPE', ('float32', 'float64')),
        )
        for key, choices in checks:
            if self._values.get(key) not in choices:
                raise ConfigError(f"{key}: {self._values.get(key)!r} not one of {', '.join(choices)}")
        if self._values['MODEL_HIDDEN'] % self._values['MODEL_HEADS']:
            raise ConfigError("MODEL_HIDDEN: must be divisible by MODEL_HEADS")
        if self._values['MODEL_RELATION_DIM'] % self._values['MODEL_RFE_HEADS']:
            raise ConfigError("MODEL_RELATION_DIM: must be divisible by MODEL_RFE_HEADS")
        if not 0.0 <= self._values['CORPUS_SEGMENT_PROB'] <= 1.0:
            raise ConfigError("CORPUS_SEGMENT_PROB: must lie in [0, 1]")
        if not 1e-6 <= self._values['GRADCHECK_EPS'] <= 1e-4:
            raise ConfigError("GRADCHECK_EPS: must lie in [1e-6, 1e-4]")
        for key in ('FEWSHOT_SHOTS', 'FEWSHOT_SEEDS', 'ABLATE_SEEDS'):
            try:
                parse_int_list(self._values[key])
            except ValueError:
                raise ConfigError(f"{key}: expected a comma-separated list of integers")


def _apply(defaults: Dict[str, Any], raw_values: Dict[str, Any]) -> Dict[str, Any]:
    resolved = {}
    for raw_key, raw in raw_values.items():
        key = raw_key.strip().upper().replace('-', '_')
        if key not in defaults:
            raise ConfigError(f"{raw_key}: unknown configuration key")
        resolved[key] = _coerce(key, raw, defaults[key])
    return resolved


def load_config(path: Optional[str] = None, profile: str = 'desk',
                overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """Profile defaults, then the config file, then explicit overrides"""
    if profile not in config_map:
        raise ConfigError(f"profile: unknown profile {profile!r}")
    values = _defaults(get_config(profile))

    if path:
        if not os.path.exists(path):
            raise ConfigError(f"config: file not found: {path}")
        values.update(_apply(values, dotenv_values(path)))

    if overrides:
        values.update(_apply(values, {k: v for k, v in overrides.items() if v is not None}))

    return ExperimentConfig(values, profile)


def documented_keys() -> Iterable[str]:
    return sorted(_defaults(Config))
