"""
GeoLab - Artifact Service
Run-directory layout, stage records and the resume / --force rules
"""
import json
import logging
import os
from datetime import datetime
from typing import Any, Callable, Dict, List, Optional

import pandas as pd

from geolab.utils.errors import ConfigMismatchError, GeoLabError, MissingArtifactError
from geolab.utils.helpers import FORMAT_VERSION, run_metadata

logger = logging.getLogger(__name__)

STAGE_PRODUCERS = {
    'corpus': 'gen-corpus',
    'labels': 'prepare-labels',
    'pretrain': 'pretrain',
    'finetune': 'finetune',
    'evaluate': 'evaluate',
    'probe': 'probe',
    'ablate': 'ablate',
    'few-shot': 'few-shot',
    'grad-check': 'grad-check',
    'report': 'report',
}


class StageRecord:
    """Status of one pipeline stage in one run directory"""

    def __init__(self, stage, config_hash, seed):
        self.stage = stage
        self.config_hash = config_hash
        self.seed = int(seed)
        self.format_version = FORMAT_VERSION
        self.status = 'pending'
        self.outputs: Dict[str, Any] = {}
        self.result: Dict[str, Any] = {}
        self.error_details = None
        self.created_at = datetime.utcnow()
        self.processed_at = None

    def mark_processing(self):
        """Mark stage as currently running"""
        self.status = 'processing'
        self.processed_at = datetime.utcnow()

    def mark_completed(self, outputs, result=None):
        """Mark stage as completed"""
        self.status = 'completed'
        self.outputs = dict(outputs or {})
        self.result = dict(result or {})
        self.error_details = None
        self.processed_at = datetime.utcnow()

    def mark_error(self, error_message):
        """Mark stage as failed with error details"""
        self.status = 'error'
        self.error_details = error_message
        self.processed_at = datetime.utcnow()

    @property
    def completed(self) -> bool:
        return self.status == 'completed'

    def to_dict(self):
        """Convert stage record to dictionary"""
        return {
            'stage': self.stage,
            'config_hash': self.config_hash,
            'seed': self.seed,
            'format_version': self.format_version,
            'status': self.status,
            'outputs': self.outputs,
            'result': self.result,
            'created_at': self.created_at.isoformat(),
            'processed_at': self.processed_at.isoformat() if self.processed_at else None,
            'error_details': self.error_details,
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> 'StageRecord':
        record = cls(payload['stage'], payload['config_hash'], payload['seed'])
        record.format_version = payload.get('format_version', FORMAT_VERSION)
        record.status = payload.get('status', 'pending')
        record.outputs = payload.get('outputs', {})
        record.result = payload.get('result', {})
        record.error_details = payload.get('error_details')
        record.created_at = datetime.fromisoformat(payload['created_at'])
        if payload.get('processed_at'):
            record.processed_at = datetime.fromisoformat(payload['processed_at'])
        return record


class RunArtifacts:
    """Paths of one run directory plus the stage bookkeeping"""

    def __init__(self, out_dir: str, config, force: bool = False):
        self.root = os.path.abspath(out_dir)
        self.config = config
        self.config_hash = config.config_hash()
        self.seed = config.SEED
        self.force = force
        os.makedirs(self.root, exist_ok=True)

    # ------------------------------------------------------------------ paths

    def _dir(self, *parts: str) -> str:
        path = os.path.join(self.root, *parts)
        os.makedirs(path, exist_ok=True)
        return path

    def corpus_dir(self, split: str) -> str:
        return os.path.join(self.root, 'corpus', split)

    @property
    def vocab_path(self) -> str:
        return os.path.join(self.root, 'vocab.json')

    @property
    def labels_dir(self) -> str:
        return self._dir('labels')

    def checkpoint_path(self, name: str) -> str:
        return os.path.join(self._dir('checkpoints'), f'{name}.geol')

    def metrics_path(self, name: str) -> str:
        return os.path.join(self._dir('metrics'), f'{name}.txt')

    def curves_path(self, name: str) -> str:
        return os.path.join(self._dir('curves'), f'{name}.csv')

    def tables_path(self, name: str) -> str:
        return os.path.join(self._dir('tables'), f'{name}.csv')

    def tables_summary_path(self, name: str) -> str:
        return os.path.join(self._dir('tables'), f'{name}_summary.txt')

    @property
    def report_dir(self) -> str:
        return self._dir('report')

    @property
    def logs_dir(self) -> str:
        return self._dir('logs')

    @property
    def dumps_dir(self) -> str:
        return self._dir('dumps')

    def stage_path(self, stage: str) -> str:
        return os.path.join(self._dir('stages'), f'{stage}.json')

    def metadata(self, extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        return run_metadata(self.config_hash, self.seed, extra)

    def stamp(self, frame: pd.DataFrame) -> pd.DataFrame:
        """config_hash, master_seed and format_version as trailing CSV columns"""
        meta = self.metadata()
        return frame.assign(config_hash=meta['config_hash'], master_seed=meta['seed'],
                            format_version=meta['format_version'])

    # ------------------------------------------------------------------ checks

    def require(self, path: str, producer: str) -> str:
        """Path of an input artifact, or an error naming the subcommand that makes it"""
        if not os.path.exists(path):
            logger.error(f"Missing artifact {path}")
            raise MissingArtifactError(os.path.relpath(path, self.root), producer)
        return path

    def load_record(self, stage: str) -> Optional[StageRecord]:
        path = self.stage_path(stage)
        if not os.path.exists(path):
            return None
        with open(path, encoding='utf-8') as fh:
            return StageRecord.from_dict(json.load(fh))

    def save_record(self, record: StageRecord) -> str:
        path = self.stage_path(record.stage)
        with open(path, 'w', encoding='utf-8') as fh:
            json.dump(record.to_dict(), fh, indent=2, sort_keys=True)
        return path

    def require_stage(self, stage: str) -> StageRecord:
        """Completed upstream stage produced under the current config"""
        record = self.load_record(stage)
        if record is None or not record.completed:
            raise MissingArtifactError(f'stages/{stage}.json', STAGE_PRODUCERS.get(stage, stage))
        if record.config_hash != self.config_hash:
            message = (f"stage {stage} was produced under config {record.config_hash[:12]}, "
                       f"current config is {self.config_hash[:12]}")
            if not self.force:
                logger.error(message)
                raise ConfigMismatchError(message + "; rerun that stage or pass --force")
            logger.warning(message + " (continuing because of --force)")
        return record

    # ------------------------------------------------------------------ stages

    def run_stage(self, stage: str, fn: Callable[[], Dict[str, Any]], rerun: bool = False) -> Dict[str, Any]:
        """Run fn as `stage` unless it already completed under this config

        fn returns {'outputs': {...}, **result}. A completed stage under another config is
        refused without --force. `rerun` stages (report) always run.
        """
        previous = self.load_record(stage)
        if previous is not None and previous.completed and not (self.force or rerun):
            if previous.config_hash != self.config_hash:
                message = (f"{stage} already completed under config {previous.config_hash[:12]}; "
                           f"current config is {self.config_hash[:12]}")
                logger.error(message)
                raise ConfigMismatchError(message + "; pass --force to overwrite")
            logger.info(f"Stage {stage} already completed, skipping (use --force to rerun)")
            payload = previous.to_dict()
            payload['skipped'] = True
            return payload

        record = StageRecord(stage, self.config_hash, self.seed)
        record.mark_processing()
        self.save_record(record)
        try:
            result = dict(fn() or {})
        except GeoLabError as e:
            record.mark_error(str(e))
            self.save_record(record)
            raise
        except Exception as e:
            logger.exception(f"Stage {stage} failed unexpectedly: {str(e)}")
            record.mark_error(f"unexpected {type(e).__name__}: {e}")
            self.save_record(record)
            raise
        outputs = result.pop('outputs', {})
        record.mark_completed(outputs, result)
        self.save_record(record)
        payload = record.to_dict()
        payload['skipped'] = False
        return payload

    def completed_stages(self) -> List[StageRecord]:
        directory = os.path.join(self.root, 'stages')
        if not os.path.isdir(directory):
            return []
        records = [self.load_record(name[:-len('.json')]) for name in sorted(os.listdir(directory))
                   if name.endswith('.json')]
        return [r for r in records if r is not None and r.completed]
