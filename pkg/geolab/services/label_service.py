"""
GeoLab - Label Service
Sampling and labelling for the direction/distance, direction-exception and collinearity
tasks plus masked-token targets, with a per-document JSON cache.
"""
import json
import logging
import math
import os
from dataclasses import asdict, dataclass
from functools import partial
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from geolab.models.document import Document, Vocabulary
from geolab.models.geometry import (CollinearClass, Direction, collinear_mask, collinearity,
                                    direction_matrix, nearest_matrix)
from geolab.models.labels import GeoLabelSet
from geolab.network.encoder import TokenizedInput, tokenize_document
from geolab.utils.helpers import map_documents, rng_stream, stable_hash

logger = logging.getLogger(__name__)

OVERLAP = int(Direction.OVERLAP)
STREAM_DDM, STREAM_DDE, STREAM_CIT, STREAM_MVLM = 1, 2, 3, 4


@dataclass(frozen=True)
class LabelSettings:
    ddm_anchors: int = 16
    ddm_partners: int = 32
    dde_pairs: int = 40
    dde_threshold: float = 0.6
    dde_ratio: float = 0.7
    cit_triplets: int = 16
    mask_rate: float = 0.15
    max_tokens: int = 512

    @classmethod
    def from_config(cls, config) -> 'LabelSettings':
        return cls(
            ddm_anchors=config.PRETRAIN_DDM_ANCHORS,
            ddm_partners=config.PRETRAIN_DDM_PARTNERS,
            dde_pairs=config.PRETRAIN_DDE_PAIRS,
            dde_threshold=config.PRETRAIN_DDE_THRESHOLD,
            dde_ratio=config.PRETRAIN_DDE_RATIO,
            cit_triplets=config.PRETRAIN_CIT_TRIPLETS,
            mask_rate=config.PRETRAIN_MASK_RATE,
            max_tokens=config.MODEL_MAX_TOKENS,
        )


def document_key(doc_id: str) -> int:
    """Stable integer for a document id, used to derive its random streams"""
    return int(stable_hash(doc_id)[:8], 16)


def sample_ddm(document: Document, rng: np.random.Generator, anchors: int = 16,
               partners: int = 32) -> List[Tuple[int, int, int, int]]:
    """(anchor, partner, direction, nearest) for up to anchors x partners pairs"""
    n = len(document)
    if n < 2:
        return []
    boxes = document.boxes
    directions = direction_matrix(boxes)
    nearest = nearest_matrix(boxes, directions)
    pairs = []
    for i in rng.choice(n, size=min(anchors, n), replace=False):
        others = np.delete(np.arange(n), i)
        for j in rng.choice(others, size=min(partners, n - 1), replace=False):
            pairs.append((int(i), int(j), int(directions[i, j]), int(nearest[i, j])))
    return pairs


def build_dde(document: Document, rng: np.random.Generator, pairs: int = 40, threshold: float = 0.6,
              ratio: float = 0.7) -> Tuple[List[Tuple[int, int]], List[Tuple[int, int, int]], Optional[int]]:
    """(positive set, labelled sample set, dominant direction); empty sets when skipped"""
    n = len(document)
    if n * (n - 1) < pairs:
        return [], [], None
    directions = direction_matrix(document.boxes)
    rows, cols = np.nonzero(~np.eye(n, dtype=bool) & (directions != OVERLAP))
    if rows.size < pairs:
        return [], [], None
    candidate_dirs = directions[rows, cols]

    n_positive = pairs // 2
    n_sample = pairs - n_positive
    needed = math.ceil(threshold * n_positive)
    counts = np.bincount(candidate_dirs, minlength=8)[:8]
    qualifying = np.flatnonzero(counts >= needed)
    if qualifying.size == 0:
        return [], [], None
    dominant = int(rng.choice(qualifying))

    dominant_idx = rng.permutation(np.flatnonzero(candidate_dirs == dominant))
    other_idx = rng.permutation(np.flatnonzero(candidate_dirs != dominant))
    n_dominant = min(math.ceil(ratio * n_positive), dominant_idx.size)
    n_other = min(n_positive - n_dominant, other_idx.size)
    n_dominant = n_positive - n_other
    positive = np.concatenate([dominant_idx[:n_dominant], other_idx[:n_other]])
    dominant_left, other_left = dominant_idx[n_dominant:], other_idx[n_other:]

    take_dominant = min(n_sample // 2, dominant_left.size)
    take_other = min(n_sample - take_dominant, other_left.size)
    take_dominant = min(n_sample - take_other, dominant_left.size)
    sample = rng.permutation(np.concatenate([dominant_left[:take_dominant], other_left[:take_other]]))

    positive_pairs = [(int(rows[k]), int(cols[k])) for k in rng.permutation(positive)]
    sample_pairs = [(int(rows[k]), int(cols[k]), int(candidate_dirs[k] == dominant)) for k in sample]
    return positive_pairs, sample_pairs, dominant


def _collinear_candidates(directions: np.ndarray) -> Dict[int, Tuple[np.ndarray, np.ndarray]]:
    """Per collinear class: pairs (i < j) that have at least one consistent third segment"""
    candidates = {}
    for cls in list(CollinearClass)[:4]:
        mask = collinear_mask(directions, cls)
        shared = mask.astype(np.int64) @ mask.astype(np.int64)
        valid = np.triu(mask & (shared > 0), k=1)
        if valid.any():
            candidates[int(cls)] = (mask, np.argwhere(valid))
    return candidates


def sample_cit(document: Document, rng: np.random.Generator, triplets: int = 16) -> List[Tuple[int, int, int, int]]:
    """Half the slots from collinear triplets (class drawn uniformly), half uniformly at random"""
    n = len(document)
    if n < 3:
        return []
    boxes = document.boxes
    candidates = _collinear_candidates(direction_matrix(boxes))
    classes = sorted(candidates)
    n_collinear = triplets // 2 if classes else 0

    drawn = []
    for _ in range(n_collinear):
        mask, pairs = candidates[classes[int(rng.integers(len(classes)))]]
        i, j = pairs[int(rng.integers(len(pairs)))]
        thirds = np.flatnonzero(mask[i] & mask[j])
        k = int(rng.choice(thirds))
        drawn.append(tuple(int(v) for v in rng.permutation([i, j, k])))
    for _ in range(triplets - n_collinear):
        drawn.append(tuple(int(v) for v in rng.choice(n, size=3, replace=False)))

    return [(i, j, k, int(collinearity(boxes[i], boxes[j], boxes[k]))) for i, j, k in drawn]


def mask_tokens(inputs: TokenizedInput, vocabulary: Vocabulary, rng: np.random.Generator,
                rate: float = 0.15) -> List[Tuple[int, int, int]]:
    """(position, original id, input id) under the 15% / 80-10-10 recipe over segment tokens"""
    masked = []
    regular = np.arange(vocabulary.num_special, len(vocabulary))
    for position in inputs.content_positions:
        if rng.random() >= rate:
            continue
        original = int(inputs.input_ids[position])
        roll = rng.random()
        if roll < 0.8 or regular.size == 0:
            replacement = vocabulary.mask_id
        elif roll < 0.9:
            replacement = int(rng.choice(regular))
        else:
            replacement = original
        masked.append((int(position), original, replacement))
    return masked


def build_label_set(document: Document, vocabulary: Vocabulary, settings: LabelSettings, seed: int) -> GeoLabelSet:
    """Every task drawn from its own stream of (seed, document), so toggles stay independent"""
    key = document_key(document.id)
    positive, sample, dominant = build_dde(document, rng_stream(seed, key, STREAM_DDE), settings.dde_pairs,
                                           settings.dde_threshold, settings.dde_ratio)
    inputs = tokenize_document(document, vocabulary, settings.max_tokens)
    return GeoLabelSet(
        doc_id=document.id,
        seed=seed,
        ddm_pairs=sample_ddm(document, rng_stream(seed, key, STREAM_DDM), settings.ddm_anchors,
                             settings.ddm_partners),
        dde_positive=positive,
        dde_sample=sample,
        dde_direction=dominant,
        cit_triplets=sample_cit(document, rng_stream(seed, key, STREAM_CIT), settings.cit_triplets),
        mvlm_mask=mask_tokens(inputs, vocabulary, rng_stream(seed, key, STREAM_MVLM), settings.mask_rate),
    )


def check_label_set(labels: GeoLabelSet, document: Document, threshold: float = 0.6) -> List[str]:
    """Oracle cross-check plus the dominance rule of the positive set"""
    problems = labels.verify(document)
    if labels.dde_positive:
        directions = direction_matrix(document.boxes)
        share = sum(int(directions[i, j]) == labels.dde_direction for i, j in labels.dde_positive)
        if share < math.ceil(threshold * len(labels.dde_positive)):
            problems.append(f"dde positive set has {share}/{len(labels.dde_positive)} dominant pairs")
    return problems


class LabelService:
    """Label cache under labels/<doc_id>-<seed>-<hash12>.json"""

    def cache_path(self, artifacts, doc_id: str) -> str:
        return os.path.join(artifacts.labels_dir, f'{doc_id}-{artifacts.seed}-{artifacts.config_hash[:12]}.json')

    def prepare(self, documents: Sequence[Document], vocabulary: Vocabulary, config, artifacts) -> Dict:
        settings = LabelSettings.from_config(config)
        label_sets = map_documents(partial(build_label_set, vocabulary=vocabulary, settings=settings,
                                           seed=config.SEED), documents, config.JOBS)
        meta = artifacts.metadata({'settings': asdict(settings)})
        skipped = 0
        for labels in label_sets:
            skipped += labels.dde_skipped
            with open(self.cache_path(artifacts, labels.doc_id), 'w', encoding='utf-8') as fh:
                json.dump({'labels': labels.to_dict(), 'meta': meta}, fh, sort_keys=True)
        if skipped:
            logger.warning(f"DDE skipped for {skipped}/{len(label_sets)} documents (no dominant direction)")
        totals = {}
        for labels in label_sets:
            for task, count in labels.counts().items():
                totals[task] = totals.get(task, 0) + count
        logger.info(f"Prepared labels for {len(label_sets)} documents: {totals}")
        return {'outputs': {'labels': artifacts.labels_dir}, 'documents': len(label_sets),
                'dde_skipped': int(skipped), 'counts': totals}

    def load(self, artifacts, documents: Sequence[Document]) -> List[GeoLabelSet]:
        label_sets = []
        for document in documents:
            path = artifacts.require(self.cache_path(artifacts, document.id), 'prepare-labels')
            with open(path, encoding='utf-8') as fh:
                label_sets.append(GeoLabelSet.from_dict(json.load(fh)['labels']))
        return label_sets


# Create singleton instance
label_service = LabelService()
