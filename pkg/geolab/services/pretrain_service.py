"""
GeoLab - Pre-training Service
Direction/distance, direction-exception, collinearity and masked-token losses and the
pre-training loop.
"""
import json
import logging
import math
import os
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from geolab.models.document import Document
from geolab.models.labels import GeoLabelSet
from geolab.network.model import GeoLayoutModel, ModelSpec
from geolab.nn import ops
from geolab.nn.optim import AdamW
from geolab.nn.tensor import Tensor, default_dtype
from geolab.services.corpus_service import corpus_service
from geolab.services.label_service import check_label_set, label_service
from geolab.utils.errors import LabelError, NumericError
from geolab.utils.helpers import rng_stream

logger = logging.getLogger(__name__)

TASKS = ('ddm', 'dde', 'cit', 'mvlm')
STREAM_ORDER = 11


@dataclass(frozen=True)
class TaskToggles:
    ddm: bool = True
    dde: bool = True
    cit: bool = True
    mvlm: bool = True

    @classmethod
    def from_config(cls, config) -> 'TaskToggles':
        return cls(config.PRETRAIN_DDM, config.PRETRAIN_DDE, config.PRETRAIN_CIT, config.PRETRAIN_MVLM)

    def label(self) -> str:
        enabled = [task for task in TASKS if getattr(self, task)]
        return '+'.join(enabled) if enabled else 'none'


def _zero(like: Tensor) -> Tensor:
    return Tensor(0.0, dtype=like.dtype)


def pretrain_losses(model: GeoLayoutModel, document: Document, labels: GeoLabelSet,
                    tasks: TaskToggles = TaskToggles()) -> Tuple[Tensor, Dict[str, float]]:
    """Unweighted sum of the four task losses; skipped or disabled tasks contribute 0"""
    inputs = model.prepare(document)
    input_ids = None
    if tasks.mvlm and labels.mvlm_mask:
        input_ids = labels.masked_input_ids(inputs.input_ids)
    encoded = model.encode(inputs, input_ids)
    features = encoded.segment_features
    terms = {task: _zero(features) for task in TASKS}

    if tasks.ddm and labels.ddm_pairs:
        pairs = np.asarray(labels.ddm_pairs, dtype=np.int64)
        rows, cols = pairs[:, 0], pairs[:, 1]
        direction_loss = ops.cross_entropy(model.direction.logits(features, rows, cols), pairs[:, 2])
        nearest_loss = ops.binary_cross_entropy_with_logits(model.crp.logits_at(features, rows, cols), pairs[:, 3])
        terms['ddm'] = ops.add(direction_loss, nearest_loss)

    if tasks.dde and labels.dde_positive and labels.dde_sample:
        positive = np.asarray(labels.dde_positive, dtype=np.int64)
        sample = np.asarray(labels.dde_sample, dtype=np.int64)
        logits = model.rfe.logits(model.pair.at(features, positive[:, 0], positive[:, 1]),
                                  model.pair.at(features, sample[:, 0], sample[:, 1]))
        terms['dde'] = ops.binary_cross_entropy_with_logits(logits, sample[:, 2])

    if tasks.cit and labels.cit_triplets:
        triplets = np.asarray(labels.cit_triplets, dtype=np.int64)
        terms['cit'] = ops.cross_entropy(model.cit.logits(features, triplets[:, :3]), triplets[:, 3])

    if tasks.mvlm and labels.mvlm_mask:
        masked = np.asarray(labels.mvlm_mask, dtype=np.int64)
        terms['mvlm'] = ops.cross_entropy(model.mvlm.logits(encoded.token_features, masked[:, 0]), masked[:, 1])

    total = terms['ddm']
    for task in TASKS[1:]:
        total = ops.add(total, terms[task])
    values = {task: terms[task].item() for task in TASKS}
    values['total'] = total.item()
    return total, values


def _dump_batch(dump_dir: Optional[str], document: Document, labels: GeoLabelSet,
                values: Dict[str, float]) -> Optional[str]:
    if not dump_dir:
        return None
    os.makedirs(dump_dir, exist_ok=True)
    path = os.path.join(dump_dir, f'nonfinite-{document.id}.json')
    with open(path, 'w', encoding='utf-8') as fh:
        json.dump({'doc_id': document.id, 'losses': {k: repr(v) for k, v in values.items()},
                   'labels': labels.to_dict()}, fh, indent=1, sort_keys=True)
    return path


def pretrain_loop(model: GeoLayoutModel, documents: Sequence[Document], label_sets: Sequence[GeoLabelSet],
                  config, tasks: Optional[TaskToggles] = None, dump_dir: Optional[str] = None) -> pd.DataFrame:
    """Minimize the summed task loss with AdamW and linear decay; returns per-epoch mean losses"""
    tasks = tasks or TaskToggles.from_config(config)
    if len(documents) != len(label_sets):
        raise LabelError(f"{len(documents)} documents but {len(label_sets)} label sets")
    for document, labels in zip(documents, label_sets):
        if document.id != labels.doc_id:
            raise LabelError(f"label set {labels.doc_id} does not belong to document {document.id}")

    batch_size = max(int(config.PRETRAIN_BATCH_SIZE), 1)
    steps_per_epoch = math.ceil(len(documents) / batch_size) if documents else 0
    optimizer = AdamW(model.store, config.PRETRAIN_LR, config.PRETRAIN_EPOCHS * steps_per_epoch,
                      weight_decay=config.PRETRAIN_WEIGHT_DECAY, clip_norm=config.PRETRAIN_CLIP_NORM)
    order_rng = rng_stream(config.SEED, STREAM_ORDER)
    history: List[Dict[str, float]] = []

    for epoch in range(config.PRETRAIN_EPOCHS):
        order = order_rng.permutation(len(documents))
        sums = {key: 0.0 for key in TASKS + ('total',)}
        for start in range(0, len(order), batch_size):
            chunk = order[start:start + batch_size]
            optimizer.zero_grad()
            for index in chunk:
                document, labels = documents[index], label_sets[index]
                if config.PRETRAIN_VERIFY_LABELS:
                    problems = check_label_set(labels, document, config.PRETRAIN_DDE_THRESHOLD)
                    if problems:
                        logger.error(f"Label check failed for {document.id}: {problems[:3]}")
                        raise LabelError(f"{document.id}: {len(problems)} labels disagree with geometry, "
                                         f"first: {problems[0]}")
                total, values = pretrain_losses(model, document, labels, tasks)
                if not all(math.isfinite(v) for v in values.values()):
                    path = _dump_batch(dump_dir, document, labels, values)
                    logger.error(f"Non-finite pre-training loss on {document.id}: {values}")
                    raise NumericError(f"non-finite loss on document {document.id} at epoch {epoch}", path)
                ops.mul(total, 1.0 / len(chunk)).backward()
                for key, value in values.items():
                    sums[key] += value
            optimizer.step()

        count = max(len(documents), 1)
        row = {'epoch': epoch, **{key: value / count for key, value in sums.items()}, 'lr': optimizer.current_lr}
        history.append(row)
        logger.info(f"pretrain epoch {epoch}: " + ' '.join(f"{k}={row[k]:.4f}" for k in TASKS + ('total',)))

    return pd.DataFrame(history, columns=['epoch', *TASKS, 'total', 'lr'])


def pretrain_model(config, vocabulary, documents: Sequence[Document], label_sets: Sequence[GeoLabelSet],
                   tasks: Optional[TaskToggles] = None, dump_dir: Optional[str] = None):
    """Fresh model from config, pre-trained; returns (model, history)"""
    with default_dtype(config.dtype):
        model = GeoLayoutModel(ModelSpec.from_config(config, len(vocabulary)), vocabulary,
                               seed=config.SEED, dtype=config.dtype)
        history = pretrain_loop(model, documents, label_sets, config, tasks, dump_dir)
    return model, history


class PretrainService:
    """Pre-trains on the pretrain split and writes checkpoints/pretrain.geol"""

    def run(self, config, artifacts) -> Dict:
        artifacts.require_stage('labels')
        documents = corpus_service.load_split(artifacts, 'pretrain')
        vocabulary = corpus_service.load_vocabulary(artifacts)
        label_sets = label_service.load(artifacts, documents)
        tasks = TaskToggles.from_config(config)
        logger.info(f"Pre-training on {len(documents)} documents with tasks {tasks.label()}")

        model, history = pretrain_model(config, vocabulary, documents, label_sets, tasks, artifacts.dumps_dir)
        checkpoint = model.save(artifacts.checkpoint_path('pretrain'),
                                artifacts.metadata({'stage': 'pretrain', 'tasks': asdict(tasks)}))
        curve = artifacts.curves_path('pretrain_history')
        artifacts.stamp(history).to_csv(curve, index=False)
        final = history.iloc[-1].to_dict() if len(history) else {}
        return {
            'outputs': {'checkpoint': checkpoint, 'history': curve},
            'final_losses': {k: float(final[k]) for k in TASKS + ('total',) if k in final},
        }


# Create singleton instance
pretrain_service = PretrainService()
