"""
GeoLab - Label Models
Geometric pre-training label sets and the SER tag scheme
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from geolab.models.document import Document
from geolab.models.geometry import (Direction, collinearity, direction,
                                    nearest_in_direction)

logger = logging.getLogger(__name__)

ENTITY_TAG_TYPES = ('header', 'question', 'answer')
SER_TAGS = ('O',) + tuple(f'{prefix}-{kind.upper()}' for kind in ENTITY_TAG_TYPES for prefix in ('B', 'I'))
TAG_INDEX = {tag: i for i, tag in enumerate(SER_TAGS)}


@dataclass
class GeoLabelSet:
    """Labels for one document under one seed"""
    doc_id: str
    seed: int
    ddm_pairs: List[Tuple[int, int, int, int]] = field(default_factory=list)     # (i, j, direction, nearest)
    dde_positive: List[Tuple[int, int]] = field(default_factory=list)
    dde_sample: List[Tuple[int, int, int]] = field(default_factory=list)         # (i, j, label)
    dde_direction: Optional[int] = None
    cit_triplets: List[Tuple[int, int, int, int]] = field(default_factory=list)  # (i, j, k, class)
    mvlm_mask: List[Tuple[int, int, int]] = field(default_factory=list)          # (position, original, input)

    @property
    def dde_skipped(self) -> bool:
        return not self.dde_positive

    def masked_input_ids(self, input_ids: np.ndarray) -> np.ndarray:
        ids = np.array(input_ids, copy=True)
        for position, _, replacement in self.mvlm_mask:
            ids[position] = replacement
        return ids

    def counts(self) -> Dict[str, int]:
        return {
            'ddm': len(self.ddm_pairs),
            'dde': len(self.dde_sample),
            'cit': len(self.cit_triplets),
            'mvlm': len(self.mvlm_mask),
        }

    def to_dict(self) -> Dict[str, Any]:
        return {
            'doc_id': self.doc_id,
            'seed': int(self.seed),
            'ddm_pairs': [list(map(int, p)) for p in self.ddm_pairs],
            'dde_positive': [list(map(int, p)) for p in self.dde_positive],
            'dde_sample': [list(map(int, p)) for p in self.dde_sample],
            'dde_direction': None if self.dde_direction is None else int(self.dde_direction),
            'cit_triplets': [list(map(int, t)) for t in self.cit_triplets],
            'mvlm_mask': [list(map(int, m)) for m in self.mvlm_mask],
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> 'GeoLabelSet':
        return cls(
            doc_id=payload['doc_id'],
            seed=payload['seed'],
            ddm_pairs=[tuple(p) for p in payload['ddm_pairs']],
            dde_positive=[tuple(p) for p in payload['dde_positive']],
            dde_sample=[tuple(p) for p in payload['dde_sample']],
            dde_direction=payload.get('dde_direction'),
            cit_triplets=[tuple(t) for t in payload['cit_triplets']],
            mvlm_mask=[tuple(m) for m in payload['mvlm_mask']],
        )

    def verify(self, document: Document) -> List[str]:
        """Disagreements with the geometry oracle; empty when every label checks out"""
        boxes = document.boxes
        problems = []
        for i, j, label, nearest in self.ddm_pairs:
            expected = direction(boxes[i], boxes[j])
            if label != int(expected):
                problems.append(f"ddm ({i},{j}) direction {label} != {int(expected)}")
            is_nearest = (expected is not Direction.OVERLAP
                          and nearest_in_direction(i, boxes).get(expected) == j)
            if bool(nearest) != is_nearest:
                problems.append(f"ddm ({i},{j}) nearest {nearest} != {int(is_nearest)}")
        for i, j, label in self.dde_sample:
            if label != int(int(direction(boxes[i], boxes[j])) == self.dde_direction):
                problems.append(f"dde ({i},{j}) label {label}")
        for i, j, k, label in self.cit_triplets:
            expected = collinearity(boxes[i], boxes[j], boxes[k])
            if label != int(expected):
                problems.append(f"cit ({i},{j},{k}) class {label} != {int(expected)}")
        return problems


def segment_tag_ids(document: Document, token_segment: np.ndarray) -> np.ndarray:
    """BIO tag id per token position; -1 for [CLS] and padding"""
    tags = np.full(token_segment.shape, -1, dtype=np.int64)
    previous = -1
    for position, index in enumerate(token_segment):
        if index < 0:
            previous = -1
            continue
        label = document.segments[index].entity_label
        if label not in ENTITY_TAG_TYPES:
            tags[position] = TAG_INDEX['O']
        elif index != previous:
            tags[position] = TAG_INDEX[f'B-{label.upper()}']
        else:
            tags[position] = TAG_INDEX[f'I-{label.upper()}']
        previous = index
    return tags


def bio_spans(tags: List[str]) -> List[Tuple[str, int, int]]:
    """Entity spans (type, start, end inclusive) from a BIO sequence; stray I- starts a span"""
    spans = []
    kind, start = None, -1
    for position, tag in enumerate(list(tags) + ['O']):
        prefix, _, label = tag.partition('-')
        continues = prefix == 'I' and label == kind
        if kind is not None and not continues:
            spans.append((kind, start, position - 1))
            kind = None
        if prefix == 'B' or (prefix == 'I' and not continues):
            kind, start = label, position
    return spans
