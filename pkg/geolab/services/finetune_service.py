"""
GeoLab - Fine-tuning Service
SER + relation losses with the father-variance term, head initialization variants,
restricted father selection decoding and the rule-based geometric constraint baseline.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from geolab.models.document import Document
from geolab.models.labels import SER_TAGS, segment_tag_ids
from geolab.models.metrics import DecodedRelations
from geolab.network.heads import RelationMatrix
from geolab.network.model import CRP_PREFIXES, ENCODER_PREFIXES, RFE_PREFIXES, GeoLayoutModel, ModelSpec
from geolab.nn import ops
from geolab.nn.optim import AdamW
from geolab.nn.tensor import Tensor, default_dtype, no_grad
from geolab.services.corpus_service import corpus_service
from geolab.utils.errors import ConfigError, NumericError
from geolab.utils.helpers import rng_stream

logger = logging.getLogger(__name__)

RELATION_THRESHOLD = 0.5
STREAM_ORDER = 21
INIT_FLAGS = ('pretrained', 'random-heads', 'random')

# head-initialization comparisons (few-shot curves, head grid) decode by plain 0.5 threshold
THRESHOLD_DECODING = {'RSF_ENABLED': False, 'CONSTRAINT_ENABLED': False, 'FINETUNE_VARIANCE_LOSS': False}


@dataclass(frozen=True)
class InitPlan:
    """Which components start from the pre-training checkpoint"""
    encoder: str = 'pretrained'
    crp: str = 'pretrained'
    rfe: str = 'pretrained'

    @property
    def use_rfe(self) -> bool:
        return self.rfe != 'none'

    def prefixes(self) -> Tuple[str, ...]:
        prefixes = ()
        if self.encoder == 'pretrained':
            prefixes += ENCODER_PREFIXES
        if self.crp == 'pretrained':
            prefixes += CRP_PREFIXES
        if self.rfe == 'pretrained':
            prefixes += RFE_PREFIXES
        return prefixes

    def label(self) -> str:
        return f'encoder={self.encoder},crp={self.crp},rfe={self.rfe}'


def resolve_init(config, init_flag: Optional[str] = None) -> InitPlan:
    """--init pretrained defers to the FINETUNE_*_INIT keys; random-heads is the no-head-pretraining condition"""
    flag = init_flag or config.FINETUNE_INIT
    if flag not in INIT_FLAGS:
        raise ConfigError(f"--init must be one of {', '.join(INIT_FLAGS)}, got {flag!r}")
    rfe_random = 'none' if config.FINETUNE_RFE_INIT == 'none' else 'random'
    if flag == 'random':
        return InitPlan('random', 'random', rfe_random)
    if flag == 'random-heads':
        return InitPlan('pretrained', 'random', rfe_random)
    return InitPlan('pretrained', config.FINETUNE_CRP_INIT, config.FINETUNE_RFE_INIT)


def build_finetune_model(config, vocabulary, checkpoint: Optional[str], plan: InitPlan) -> GeoLayoutModel:
    """Fresh model from config; components named by the plan are loaded from the checkpoint"""
    model = GeoLayoutModel(ModelSpec.from_config(config, len(vocabulary)), vocabulary,
                           seed=config.SEED, dtype=config.dtype)
    prefixes = plan.prefixes()
    if prefixes:
        if checkpoint is None:
            raise ConfigError(f"initialization {plan.label()} needs a pre-training checkpoint")
        model.load_weights(checkpoint, prefixes)
        logger.info(f"Initialized {', '.join(prefixes)} from {checkpoint}")
    return model


# ---------------------------------------------------------------- losses

def father_variance(probs: Tensor, gold: np.ndarray) -> Tensor:
    """Sum over sons with more than one gold father of the variance of their father probabilities"""
    n = gold.shape[0]
    flat = ops.reshape(probs, (n * n,))
    total = Tensor(0.0, dtype=probs.dtype)
    for son in np.flatnonzero(gold.sum(axis=1) > 1):
        fathers = np.flatnonzero(gold[son])
        total = ops.add(total, ops.variance(ops.take(flat, son * n + fathers, axis=0), axis=-1))
    return total


def finetune_losses(model: GeoLayoutModel, document: Document, use_rfe: bool = True,
                    variance: bool = True, variance_weight: float = 1.0) -> Tuple[Tensor, Dict[str, float]]:
    """SER cross-entropy + BCE on r0 + BCE on r1 + weighted father-variance"""
    encoded = model.encode(document)
    zero = Tensor(0.0, dtype=encoded.token_features.dtype)
    terms = {'ser': zero, 'r0': zero, 'r1': zero, 'variance': zero}

    tags = segment_tag_ids(document, encoded.inputs.token_segment)
    positions = np.flatnonzero(tags >= 0)
    if positions.size:
        logits = model.ser.logits(ops.take(encoded.token_features, positions, axis=0))
        terms['ser'] = ops.cross_entropy(logits, tags[positions])

    n = len(document)
    if n >= 2:
        gold = document.gold_relation_matrix()
        off_diagonal = 1.0 - np.eye(n)
        r0_logits, r1_logits = model.relation_logits(encoded.segment_features, use_rfe)
        terms['r0'] = ops.binary_cross_entropy_with_logits(r0_logits, gold, off_diagonal)
        final_logits = r0_logits
        if r1_logits is not None:
            terms['r1'] = ops.binary_cross_entropy_with_logits(r1_logits, gold, off_diagonal)
            final_logits = r1_logits
        if variance:
            terms['variance'] = ops.mul(father_variance(ops.sigmoid(final_logits), gold), variance_weight)

    total = ops.add(ops.add(terms['ser'], terms['r0']), ops.add(terms['r1'], terms['variance']))
    values = {key: term.item() for key, term in terms.items()}
    values['total'] = total.item()
    return total, values


def finetune_loop(model: GeoLayoutModel, documents: Sequence[Document], config,
                  use_rfe: bool = True) -> pd.DataFrame:
    """AdamW with linear decay over FINETUNE_EPOCHS; returns per-epoch mean losses"""
    batch_size = max(int(config.FINETUNE_BATCH_SIZE), 1)
    steps_per_epoch = math.ceil(len(documents) / batch_size) if documents else 0
    optimizer = AdamW(model.store, config.FINETUNE_LR, config.FINETUNE_EPOCHS * steps_per_epoch,
                      weight_decay=config.FINETUNE_WEIGHT_DECAY, clip_norm=config.FINETUNE_CLIP_NORM)
    order_rng = rng_stream(config.SEED, STREAM_ORDER)
    keys = ('ser', 'r0', 'r1', 'variance', 'total')
    history = []

    for epoch in range(config.FINETUNE_EPOCHS):
        order = order_rng.permutation(len(documents))
        sums = dict.fromkeys(keys, 0.0)
        for start in range(0, len(order), batch_size):
            chunk = order[start:start + batch_size]
            optimizer.zero_grad()
            for index in chunk:
                document = documents[index]
                total, values = finetune_losses(model, document, use_rfe, config.FINETUNE_VARIANCE_LOSS,
                                                config.FINETUNE_VARIANCE_WEIGHT)
                if not math.isfinite(values['total']):
                    logger.error(f"Non-finite fine-tuning loss on {document.id}: {values}")
                    raise NumericError(f"non-finite fine-tuning loss on document {document.id} at epoch {epoch}")
                ops.mul(total, 1.0 / len(chunk)).backward()
                for key in keys:
                    sums[key] += values[key]
            optimizer.step()
        row = {'epoch': epoch, **{k: v / max(len(documents), 1) for k, v in sums.items()}, 'lr': optimizer.current_lr}
        history.append(row)
        logger.debug(f"finetune epoch {epoch}: total={row['total']:.4f}")

    if history:
        logger.info(f"Fine-tuned {config.FINETUNE_EPOCHS} epochs on {len(documents)} documents, "
                    f"final loss {history[-1]['total']:.4f}")
    return pd.DataFrame(history, columns=['epoch', *keys, 'lr'])


# ---------------------------------------------------------------- decoding

def decode_rsf(r1: Union[RelationMatrix, np.ndarray], tau: float = 1e-3, enabled: bool = True,
               doc_id: str = '') -> DecodedRelations:
    """Links (son i, father j) with r1[i, j] > 0.5; with RSF also max_k r1[i, k] < r1[i, j] + tau

    The diagonal never yields a link and does not take part in the row maximum.
    """
    probs = np.array(r1.probs if isinstance(r1, RelationMatrix) else r1, dtype=np.float64)
    n = probs.shape[0]
    if n == 0:
        return DecodedRelations(doc_id, frozenset())
    np.fill_diagonal(probs, 0.0)
    keep = probs > RELATION_THRESHOLD
    if enabled:
        row_max = probs.max(axis=1, keepdims=True)
        keep &= row_max < probs + tau
    sons, fathers = np.nonzero(keep)
    return DecodedRelations(doc_id, frozenset(zip(sons.tolist(), fathers.tolist())))


def median_segment_height(document: Document) -> float:
    heights = [s.box.height for s in document.segments]
    return float(np.median(heights)) if heights else 0.0


def geometric_constraint_filter(links: DecodedRelations, document: Document, delta: Optional[float] = None,
                                factor: float = 3.0) -> DecodedRelations:
    """Drop links whose son center lies above its father's center by more than delta"""
    if delta is None:
        delta = factor * median_segment_height(document)
    boxes = document.boxes
    kept = frozenset((son, father) for son, father in links.links
                     if boxes[father].center[1] - boxes[son].center[1] <= delta)
    removed = len(links.links) - len(kept)
    if removed:
        logger.debug(f"{document.id}: constraint filter removed {removed} links (delta={delta:.1f})")
    return DecodedRelations(links.doc_id, kept)


@dataclass
class Prediction:
    doc_id: str
    tags: List[str]                   # one per segment token, [CLS] excluded
    r0: RelationMatrix
    r1: Optional[RelationMatrix]
    links: DecodedRelations
    thresholded: DecodedRelations     # RSF off, same matrix

    @property
    def relation(self) -> RelationMatrix:
        return self.r1 if self.r1 is not None else self.r0


def predict_document(model: GeoLayoutModel, document: Document, use_rfe: bool = True, rsf: bool = True,
                     tau: float = 1e-3, constraint: bool = False, constraint_factor: float = 3.0) -> Prediction:
    with no_grad():
        encoded = model.encode(document)
        positions = encoded.inputs.content_positions
        tags = []
        if positions.size:
            logits = model.ser.logits(ops.take(encoded.token_features, positions, axis=0))
            tags = [SER_TAGS[k] for k in np.argmax(logits.data, axis=-1)]
        if len(document) == 0:
            r0, r1 = RelationMatrix(np.zeros((0, 0))), None
        else:
            r0_logits, r1_logits = model.relation_logits(encoded.segment_features, use_rfe)
            r0 = RelationMatrix(ops.sigmoid(r0_logits).data)
            r1 = RelationMatrix(ops.sigmoid(r1_logits).data) if r1_logits is not None else None
    relation = r1 if r1 is not None else r0
    links = decode_rsf(relation, tau, rsf, document.id)
    thresholded = decode_rsf(relation, tau, False, document.id)
    if constraint:
        links = geometric_constraint_filter(links, document, factor=constraint_factor)
    return Prediction(document.id, tags, r0, r1, links, thresholded)


def predict_corpus(model: GeoLayoutModel, documents: Sequence[Document], config, use_rfe: bool = True,
                   rsf: Optional[bool] = None, constraint: Optional[bool] = None) -> List[Prediction]:
    rsf = config.RSF_ENABLED if rsf is None else rsf
    constraint = config.CONSTRAINT_ENABLED if constraint is None else constraint
    with default_dtype(config.dtype):
        return [predict_document(model, doc, use_rfe, rsf, config.RSF_TAU, constraint,
                                 config.CONSTRAINT_DELTA_FACTOR) for doc in documents]


def finetune_model(config, vocabulary, documents: Sequence[Document], checkpoint: Optional[str],
                   plan: InitPlan) -> Tuple[GeoLayoutModel, pd.DataFrame]:
    with default_dtype(config.dtype):
        model = build_finetune_model(config, vocabulary, checkpoint, plan)
        history = finetune_loop(model, documents, config, plan.use_rfe)
    return model, history


class FinetuneService:
    """Fine-tunes on the first FINETUNE_TRAIN_DOCS documents of the finetune split"""

    def training_documents(self, artifacts, config) -> List[Document]:
        documents = corpus_service.load_split(artifacts, 'finetune')
        limit = int(config.FINETUNE_TRAIN_DOCS)
        return documents[:limit] if limit > 0 else documents

    def run(self, config, artifacts, init_flag: Optional[str] = None) -> Dict:
        plan = resolve_init(config, init_flag)
        checkpoint = None
        if plan.prefixes():
            artifacts.require_stage('pretrain')
            checkpoint = artifacts.require(artifacts.checkpoint_path('pretrain'), 'pretrain')
        vocabulary = corpus_service.load_vocabulary(artifacts)
        documents = self.training_documents(artifacts, config)
        logger.info(f"Fine-tuning on {len(documents)} documents ({plan.label()})")

        model, history = finetune_model(config, vocabulary, documents, checkpoint, plan)
        path = model.save(artifacts.checkpoint_path('finetune'),
                          artifacts.metadata({'stage': 'finetune', 'init': plan.label(), 'use_rfe': plan.use_rfe}))
        curve = artifacts.curves_path('finetune_history')
        artifacts.stamp(history).to_csv(curve, index=False)
        return {
            'outputs': {'checkpoint': path, 'history': curve},
            'init': plan.label(),
            'final_loss': float(history['total'].iloc[-1]) if len(history) else None,
        }


# Create singleton instance
finetune_service = FinetuneService()
