"""
GeoLab - Ablation Service
Pre-training task, head initialization and decoding grids, averaged over seeds
"""
import itertools
import logging
from functools import partial
from typing import Dict, List, Sequence, Tuple

import pandas as pd

from geolab.models.document import Document
from geolab.services.corpus_service import corpus_service
from geolab.services.evaluation_service import evaluate, relation_scores
from geolab.services.finetune_service import (THRESHOLD_DECODING, finetune_model, finetune_service, predict_corpus,
                                              resolve_init)
from geolab.services.label_service import LabelSettings, build_label_set
from geolab.services.pretrain_service import TaskToggles, pretrain_model
from geolab.utils.errors import ConfigError
from geolab.utils.helpers import map_documents

logger = logging.getLogger(__name__)

GRIDS = ('tasks', 'heads', 'rsf', 'all')
METRICS = ('precision', 'recall', 'f1')

# MVLM stays on in every row; the all-off row is the masked-token-only baseline
TASK_GRID = [TaskToggles(ddm, dde, cit, True) for ddm, dde, cit in itertools.product((False, True), repeat=3)]
HEAD_GRID = list(itertools.product(('random', 'pretrained'), ('none', 'random', 'pretrained')))
RSF_GRID = list(itertools.product((False, True), (False, True)))


def summarize(rows: Sequence[Dict]) -> pd.DataFrame:
    """Mean and std over seeds of P/R/F1 per (table, setting), in first-seen order"""
    frame = pd.DataFrame(rows, columns=['table', 'setting', 'seed', *METRICS])
    if frame.empty:
        return pd.DataFrame(columns=['table', 'setting', 'seeds'] + [f'{m}_{s}' for m in METRICS
                                                                      for s in ('mean', 'std')])
    grouped = frame.groupby(['table', 'setting'], sort=False)
    table = grouped[list(METRICS)].agg(['mean', 'std']).fillna(0.0)
    table.columns = [f'{metric}_{stat}' for metric, stat in table.columns]
    table.insert(0, 'seeds', grouped['seed'].nunique())
    return table.reset_index()


def summary_text(table: pd.DataFrame) -> str:
    lines = []
    for name, block in table.groupby('table', sort=False):
        lines.append(f'[{name}]')
        for _, row in block.iterrows():
            lines.append(f"{row['setting']:<32} P={row['precision_mean']:.4f} R={row['recall_mean']:.4f} "
                         f"F1={row['f1_mean']:.4f} +/- {row['f1_std']:.4f} (n={int(row['seeds'])})")
        lines.append('')
    return '\n'.join(lines)


class AblationRunner:
    """Runs the grids for one config; pre-trained models are reused across grids per (tasks, seed)"""

    def __init__(self, config, vocabulary, pretrain_documents: Sequence[Document],
                 finetune_documents: Sequence[Document], test_documents: Sequence[Document], artifacts=None):
        self.config = config
        self.vocabulary = vocabulary
        self.pretrain_documents = list(pretrain_documents)
        self.finetune_documents = list(finetune_documents)
        self.test_documents = list(test_documents)
        self.artifacts = artifacts
        self._checkpoints: Dict[Tuple[str, int], str] = {}
        self.rows: List[Dict] = []

    def _checkpoint_path(self, name: str) -> str:
        if self.artifacts is None:
            raise ConfigError("ablation runs need a run directory for their checkpoints")
        return self.artifacts.checkpoint_path(name)

    def pretrained(self, tasks: TaskToggles, seed: int) -> str:
        key = (tasks.label(), seed)
        if key not in self._checkpoints:
            config = self.config.replace(SEED=seed)
            settings = LabelSettings.from_config(config)
            label_sets = map_documents(partial(build_label_set, vocabulary=self.vocabulary, settings=settings,
                                               seed=seed), self.pretrain_documents, config.JOBS)
            logger.info(f"ablation pre-training tasks={tasks.label()} seed={seed}")
            model, _ = pretrain_model(config, self.vocabulary, self.pretrain_documents, label_sets, tasks)
            path = self._checkpoint_path(f"ablate-{tasks.label().replace('+', '-')}-s{seed}")
            self._checkpoints[key] = model.save(path, {'stage': 'ablate', 'tasks': tasks.label(), 'seed': seed,
                                                       **(self.artifacts.metadata() if self.artifacts else {})})
        return self._checkpoints[key]

    def _record(self, table: str, setting: str, seed: int, scores: Tuple[float, float, float]):
        precision, recall, f1 = scores
        self.rows.append({'table': table, 'setting': setting, 'seed': seed,
                          'precision': precision, 'recall': recall, 'f1': f1})
        logger.info(f"ablate {table} {setting} seed={seed}: P={precision:.4f} R={recall:.4f} F1={f1:.4f}")

    def _finetune(self, config, checkpoint: str):
        plan = resolve_init(config, 'pretrained')
        model, _ = finetune_model(config, self.vocabulary, self.finetune_documents, checkpoint, plan)
        return model, plan

    def _scores(self, predictions) -> Tuple[float, float, float]:
        report = evaluate(predictions, self.test_documents, self.config.MODEL_MAX_TOKENS)
        return report.re_precision, report.re_recall, report.re_f1

    def run_tasks(self, seeds: Sequence[int]):
        for tasks in TASK_GRID:
            for seed in seeds:
                config = self.config.replace(SEED=seed)
                model, plan = self._finetune(config, self.pretrained(tasks, seed))
                predictions = predict_corpus(model, self.test_documents, config, plan.use_rfe)
                self._record('tasks', tasks.label(), seed, self._scores(predictions))

    def run_heads(self, seeds: Sequence[int]):
        full = TaskToggles()
        for crp, rfe in HEAD_GRID:
            for seed in seeds:
                config = self.config.replace(SEED=seed, FINETUNE_CRP_INIT=crp, FINETUNE_RFE_INIT=rfe,
                                             **THRESHOLD_DECODING)
                model, plan = self._finetune(config, self.pretrained(full, seed))
                predictions = predict_corpus(model, self.test_documents, config, plan.use_rfe,
                                             rsf=False, constraint=False)
                self._record('heads', f'crp={crp} rfe={rfe}', seed, self._scores(predictions))

    def run_rsf(self, seeds: Sequence[int]):
        """RSF x variance loss, plus threshold-only vs constraint-filtered decoding"""
        full = TaskToggles()
        for variance in (False, True):
            for seed in seeds:
                config = self.config.replace(SEED=seed, FINETUNE_VARIANCE_LOSS=variance)
                model, plan = self._finetune(config, self.pretrained(full, seed))
                for rsf in (False, True):
                    predictions = predict_corpus(model, self.test_documents, config, plan.use_rfe,
                                                 rsf=rsf, constraint=False)
                    self._record('rsf', f'rsf={rsf} variance={variance}', seed, self._scores(predictions))
                if not variance:
                    continue
                constrained = predict_corpus(model, self.test_documents, config, plan.use_rfe,
                                             rsf=False, constraint=True)
                self._record('constraint', 'threshold', seed,
                             relation_scores(constrained, self.test_documents, 'thresholded'))
                self._record('constraint', 'threshold+constraint', seed, self._scores(constrained))

    def run(self, grid: str, seeds: Sequence[int]) -> pd.DataFrame:
        if grid not in GRIDS:
            raise ConfigError(f"grid: {grid!r} not one of {', '.join(GRIDS)}")
        if grid in ('tasks', 'all'):
            self.run_tasks(seeds)
        if grid in ('heads', 'all'):
            self.run_heads(seeds)
        if grid in ('rsf', 'all'):
            self.run_rsf(seeds)
        return summarize(self.rows)


class AblationService:
    """ablate stage: tables/ablate_<grid>.csv, per-seed rows and a text summary"""

    def run(self, config, artifacts, grid: str = 'all') -> Dict:
        if grid not in GRIDS:
            raise ConfigError(f"grid: {grid!r} not one of {', '.join(GRIDS)}")
        artifacts.require_stage('corpus')
        vocabulary = corpus_service.load_vocabulary(artifacts)
        pretrain = corpus_service.load_split(artifacts, 'pretrain')
        limit = int(config.ABLATE_PRETRAIN_DOCS)
        if limit > 0:
            pretrain = pretrain[:limit]
        runner = AblationRunner(config, vocabulary, pretrain, finetune_service.training_documents(artifacts, config),
                                corpus_service.load_split(artifacts, 'test'), artifacts)
        table = runner.run(grid, config.ablate_seeds)

        name = f'ablate_{grid}'
        table_path = artifacts.tables_path(name)
        artifacts.stamp(table).to_csv(table_path, index=False, float_format='%.6f')
        runs_path = artifacts.tables_path(f'{name}_runs')
        artifacts.stamp(pd.DataFrame(runner.rows)).to_csv(runs_path, index=False, float_format='%.6f')
        summary_path = artifacts.tables_summary_path(name)
        with open(summary_path, 'w', encoding='utf-8') as fh:
            fh.write(f"config_hash={artifacts.config_hash} seeds={','.join(map(str, config.ablate_seeds))}\n\n")
            fh.write(summary_text(table))
        return {'outputs': {'table': table_path, 'runs': runs_path, 'summary': summary_path},
                'rows': int(len(table))}


# Create singleton instance
ablation_service = AblationService()
