"""
GeoLab - Evaluation Service
Relation and entity metrics, the frozen-encoder direction probe and the few-shot harness
"""
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from geolab.models.document import Document, Vocabulary
from geolab.models.geometry import NUM_DIRECTIONS
from geolab.models.labels import SER_TAGS, bio_spans, segment_tag_ids
from geolab.models.metrics import MetricsReport
from geolab.network.encoder import tokenize_document
from geolab.network.model import GeoLayoutModel, ModelSpec
from geolab.nn import ops
from geolab.nn.checkpoint import read_checkpoint
from geolab.nn.layers import Linear
from geolab.nn.optim import AdamW
from geolab.nn.params import ParameterStore
from geolab.nn.tensor import Tensor, default_dtype, no_grad
from geolab.services.corpus_service import corpus_service
from geolab.services.finetune_service import (THRESHOLD_DECODING, Prediction, finetune_model, finetune_service,
                                              predict_corpus, resolve_init)
from geolab.services.label_service import document_key, sample_ddm
from geolab.utils.errors import EvaluationError, HarnessError
from geolab.utils.helpers import harmonic_f1, rng_stream, safe_ratio

logger = logging.getLogger(__name__)

STREAM_PROBE_PAIRS, STREAM_PROBE_INIT, STREAM_SHOTS = 31, 32, 33
FEW_SHOT_VARIANTS = ('pretrained-heads', 'random-heads')


def gold_tags(document: Document, max_tokens: int = 512) -> List[str]:
    """BIO tag per segment token under the same truncation the encoder applies"""
    inputs = tokenize_document(document, Vocabulary(), max_tokens)
    ids = segment_tag_ids(document, inputs.token_segment)
    return [SER_TAGS[k] for k in ids[ids >= 0]]


def evaluate(predictions: Sequence[Prediction], documents: Sequence[Document],
             max_tokens: int = 512) -> MetricsReport:
    """Micro relation P/R/F1 over (son, father) links and entity-level SER P/R/F1"""
    predicted_ids = [p.doc_id for p in predictions]
    gold_ids = [d.id for d in documents]
    if sorted(predicted_ids) != sorted(gold_ids) or len(set(gold_ids)) != len(gold_ids):
        missing = sorted(set(gold_ids) ^ set(predicted_ids))
        logger.error(f"Prediction/gold mismatch on {len(missing)} document ids")
        raise EvaluationError(f"predictions and gold cover different documents, e.g. {missing[:3]}")
    by_id = {p.doc_id: p for p in predictions}

    re_tp = re_pred = re_gold = 0
    ser_tp = ser_pred = ser_gold = 0
    for document in documents:
        prediction = by_id[document.id]
        gold_links = {(son, father) for father, son in document.link_indices()}
        predicted_links = set(prediction.links.links)
        re_tp += len(gold_links & predicted_links)
        re_pred += len(predicted_links)
        re_gold += len(gold_links)

        tags = gold_tags(document, max_tokens)
        if len(tags) != len(prediction.tags):
            raise EvaluationError(f"{document.id}: {len(prediction.tags)} predicted tags for {len(tags)} tokens")
        gold_spans = set(bio_spans(tags))
        predicted_spans = set(bio_spans(prediction.tags))
        ser_tp += len(gold_spans & predicted_spans)
        ser_pred += len(predicted_spans)
        ser_gold += len(gold_spans)

    return MetricsReport(
        re_precision=safe_ratio(re_tp, re_pred),
        re_recall=safe_ratio(re_tp, re_gold),
        ser_precision=safe_ratio(ser_tp, ser_pred),
        ser_recall=safe_ratio(ser_tp, ser_gold),
        counts={'documents': len(documents), 're.tp': re_tp, 're.predicted': re_pred, 're.gold': re_gold,
                'ser.tp': ser_tp, 'ser.predicted': ser_pred, 'ser.gold': ser_gold},
    )


def relation_scores(predictions: Sequence[Prediction], documents: Sequence[Document],
                    field: str = 'links') -> Tuple[float, float, float]:
    """(precision, recall, f1) of one decoded link field, e.g. 'thresholded'"""
    by_id = {d.id: d for d in documents}
    tp = n_pred = n_gold = 0
    for prediction in predictions:
        gold = {(son, father) for father, son in by_id[prediction.doc_id].link_indices()}
        links = set(getattr(prediction, field).links)
        tp += len(gold & links)
        n_pred += len(links)
        n_gold += len(gold)
    precision, recall = safe_ratio(tp, n_pred), safe_ratio(tp, n_gold)
    return precision, recall, harmonic_f1(precision, recall)


# ---------------------------------------------------------------- probing

def probe_pairs(model: GeoLayoutModel, documents: Sequence[Document], seed: int, anchors: int = 16,
                partners: int = 32) -> Tuple[np.ndarray, np.ndarray]:
    """[B_i, B_j] features from the frozen encoder and oracle direction labels"""
    features, labels = [], []
    with no_grad():
        for document in documents:
            pairs = sample_ddm(document, rng_stream(seed, document_key(document.id), STREAM_PROBE_PAIRS),
                               anchors, partners)
            if not pairs:
                continue
            segments = model.encode(document).segment_features.data
            pairs = np.asarray(pairs, dtype=np.int64)
            features.append(np.concatenate([segments[pairs[:, 0]], segments[pairs[:, 1]]], axis=-1))
            labels.append(pairs[:, 2])
    if not features:
        raise EvaluationError("direction probe found no segment pairs")
    return np.concatenate(features), np.concatenate(labels)


def direction_probe(model: GeoLayoutModel, train_documents: Sequence[Document],
                    test_documents: Sequence[Document], config) -> Dict[str, float]:
    """Fresh linear 9-way classifier on frozen pair features"""
    seed = config.SEED
    with default_dtype(config.dtype):
        x_train, y_train = probe_pairs(model, train_documents, seed, config.PRETRAIN_DDM_ANCHORS,
                                       config.PRETRAIN_DDM_PARTNERS)
        x_test, y_test = probe_pairs(model, test_documents, seed + 1, config.PRETRAIN_DDM_ANCHORS,
                                     config.PRETRAIN_DDM_PARTNERS)
        store = ParameterStore(config.dtype)
        classifier = Linear(store, 'probe', x_train.shape[1], NUM_DIRECTIONS, rng_stream(seed, STREAM_PROBE_INIT),
                            config.MODEL_INIT_STD)
        optimizer = AdamW(store, config.PROBE_LR, config.PROBE_EPOCHS, weight_decay=0.0)
        inputs = Tensor(x_train, dtype=config.dtype)
        for _ in range(config.PROBE_EPOCHS):
            optimizer.zero_grad()
            ops.cross_entropy(classifier(inputs), y_train).backward()
            optimizer.step()

        with no_grad():
            probs = ops.softmax(classifier(Tensor(x_test, dtype=config.dtype)), axis=-1).data.astype(np.float64)

    clipped = np.clip(probs, 1e-12, 1.0)
    majority = int(np.argmax(np.bincount(y_train, minlength=NUM_DIRECTIONS)))
    result = {
        'entropy': float(np.mean(-(probs * np.log(clipped)).sum(axis=1))),
        'xent': float(np.mean(-np.log(clipped[np.arange(len(y_test)), y_test]))),
        'acc': float(np.mean(np.argmax(probs, axis=1) == y_test)),
        'majority_acc': float(np.mean(y_test == majority)),
        'train_pairs': int(len(y_train)),
        'test_pairs': int(len(y_test)),
    }
    logger.info(f"Direction probe: acc={result['acc']:.4f} entropy={result['entropy']:.4f} "
                f"(majority {result['majority_acc']:.4f})")
    return result


# ---------------------------------------------------------------- few-shot

def few_shot_harness(train_documents: Sequence[Document], test_documents: Sequence[Document], vocabulary,
                     config, checkpoint: Optional[str], shots: Sequence[int],
                     seeds: Sequence[int]) -> pd.DataFrame:
    """Fine-tune on `shots` sampled documents per seed, once per head variant; one row per run"""
    if not shots:
        raise HarnessError("no shot counts given")
    too_many = [s for s in shots if s > len(train_documents) or s < 1]
    if too_many:
        raise HarnessError(f"shot counts {too_many} outside 1..{len(train_documents)} training documents")

    rows = []
    for shot in shots:
        for seed in seeds:
            draw = rng_stream(seed, STREAM_SHOTS, shot)
            picked = np.sort(draw.choice(len(train_documents), size=shot, replace=False))
            subset = [train_documents[i] for i in picked]
            run_config = config.replace(SEED=seed, **THRESHOLD_DECODING)
            for variant in FEW_SHOT_VARIANTS:
                plan = resolve_init(run_config, 'pretrained' if variant == 'pretrained-heads' else 'random-heads')
                model, _ = finetune_model(run_config, vocabulary, subset, checkpoint, plan)
                predictions = predict_corpus(model, test_documents, run_config, plan.use_rfe,
                                             rsf=False, constraint=False)
                report = evaluate(predictions, test_documents, config.MODEL_MAX_TOKENS)
                rows.append({'shots': shot, 'seed': seed, 'variant': variant, 'precision': report.re_precision,
                             'recall': report.re_recall, 'f1': report.re_f1})
                logger.info(f"few-shot shots={shot} seed={seed} {variant}: f1={report.re_f1:.4f}")
    return pd.DataFrame(rows, columns=['shots', 'seed', 'variant', 'precision', 'recall', 'f1'])


def load_finetuned(path: str, dtype=None) -> Tuple[GeoLayoutModel, bool]:
    """Model plus whether it was fine-tuned with the relation feature enhancer"""
    _, manifest = read_checkpoint(path)
    return GeoLayoutModel.from_checkpoint(path, dtype), bool(manifest.get('use_rfe', True))


class EvaluationService:
    """evaluate / probe / few-shot stages"""

    def run_evaluate(self, config, artifacts, rsf: Optional[bool] = None, constraint: Optional[bool] = None,
                     name: str = 'evaluate') -> Dict:
        artifacts.require_stage('finetune')
        path = artifacts.require(artifacts.checkpoint_path('finetune'), 'finetune')
        rsf = config.RSF_ENABLED if rsf is None else rsf
        constraint = config.CONSTRAINT_ENABLED if constraint is None else constraint
        model, use_rfe = load_finetuned(path, config.dtype)
        documents = corpus_service.load_split(artifacts, 'test')

        predictions = predict_corpus(model, documents, config, use_rfe, rsf, constraint)
        report = evaluate(predictions, documents, config.MODEL_MAX_TOKENS)
        precision, recall, f1 = relation_scores(predictions, documents, 'thresholded')
        report.extra = {'re_threshold.precision': precision, 're_threshold.recall': recall, 're_threshold.f1': f1}
        report.metadata = artifacts.metadata({'rsf': rsf, 'constraint': constraint, 'use_rfe': use_rfe})
        metrics = report.save(artifacts.metrics_path(name))
        logger.info(f"RE P={report.re_precision:.4f} R={report.re_recall:.4f} F1={report.re_f1:.4f}; "
                    f"SER F1={report.ser_f1:.4f}")
        return {'outputs': {'metrics': metrics}, 'metrics': report.values()}

    def run_probe(self, config, artifacts) -> Dict:
        artifacts.require_stage('pretrain')
        path = artifacts.require(artifacts.checkpoint_path('pretrain'), 'pretrain')
        train = corpus_service.load_split(artifacts, 'finetune')[:config.PROBE_TRAIN_DOCS]
        test = corpus_service.load_split(artifacts, 'test')[:config.PROBE_TEST_DOCS]
        pretrained = GeoLayoutModel.from_checkpoint(path, config.dtype)
        with default_dtype(config.dtype):
            untrained = GeoLayoutModel(ModelSpec.from_config(config, len(pretrained.vocabulary)),
                                       pretrained.vocabulary, seed=config.SEED, dtype=config.dtype)

        result = direction_probe(pretrained, train, test, config)
        baseline = direction_probe(untrained, train, test, config)
        report = MetricsReport(probe_entropy=result['entropy'], probe_xent=result['xent'], probe_acc=result['acc'],
                               probe_majority_acc=result['majority_acc'])
        report.extra = {f'probe_random.{key}': baseline[key] for key in ('entropy', 'xent', 'acc')}
        report.counts = {'probe.train_pairs': result['train_pairs'], 'probe.test_pairs': result['test_pairs']}
        report.metadata = artifacts.metadata()
        metrics = report.save(artifacts.metrics_path('probe'))
        return {'outputs': {'metrics': metrics}, 'metrics': report.values()}

    def run_few_shot(self, config, artifacts) -> Dict:
        artifacts.require_stage('pretrain')
        checkpoint = artifacts.require(artifacts.checkpoint_path('pretrain'), 'pretrain')
        vocabulary = corpus_service.load_vocabulary(artifacts)
        train = finetune_service.training_documents(artifacts, config)
        test = corpus_service.load_split(artifacts, 'test')
        curves = few_shot_harness(train, test, vocabulary, config, checkpoint, config.fewshot_shots,
                                  config.fewshot_seeds)
        path = artifacts.curves_path('few_shot')
        artifacts.stamp(curves).to_csv(path, index=False, float_format='%.6f')
        summary = curves.groupby(['shots', 'variant'])['f1'].mean().unstack('variant')
        return {'outputs': {'curves': path},
                'mean_f1': {int(shot): {k: float(v) for k, v in row.items()} for shot, row in summary.iterrows()}}


# Create singleton instance
evaluation_service = EvaluationService()
