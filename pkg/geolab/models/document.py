"""
GeoLab - Document Models
Words, text segments, documents with father->son links, and the token vocabulary
"""
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Dict, FrozenSet, Iterable, List, Optional, Tuple

import numpy as np

from geolab.models.geometry import BBox
from geolab.utils.errors import ParseError

logger = logging.getLogger(__name__)

ENTITY_LABELS = ('header', 'question', 'answer', 'other')
MAX_SEGMENTS = 256
DEFAULT_PAGE_SIZE = (1000.0, 1000.0)


@dataclass(frozen=True)
class Word:
    text: str
    box: BBox

    def __post_init__(self):
        if not self.text:
            raise ParseError('words.text', 'word text must be non-empty')

    def to_dict(self) -> Dict[str, Any]:
        return {'text': self.text, 'box': self.box.to_list()}


@dataclass(frozen=True)
class TextSegment:
    id: int
    words: Tuple[Word, ...]
    entity_label: str = 'other'
    token_ids: Tuple[int, ...] = ()
    box: Optional[BBox] = None

    def __post_init__(self):
        if not self.words:
            raise ParseError('words', f'segment {self.id} has no words')
        if self.entity_label not in ENTITY_LABELS:
            raise ParseError('label', f'unknown entity label {self.entity_label!r}')
        hull = BBox.hull(w.box for w in self.words)
        if self.box is None:
            object.__setattr__(self, 'box', hull)
        elif not self.box.contains(hull):
            raise ParseError('box', f'segment {self.id} box does not contain its words')
        if self.token_ids and len(self.token_ids) != len(self.words):
            raise ParseError('token_ids', f'segment {self.id} has {len(self.token_ids)} ids '
                                          f'for {len(self.words)} tokens')

    @property
    def text(self) -> str:
        return ' '.join(w.text for w in self.words)

    @property
    def tokens(self) -> List[str]:
        return [tokenize(w.text) for w in self.words]

    def with_tokens(self, vocabulary: 'Vocabulary') -> 'TextSegment':
        return TextSegment(self.id, self.words, self.entity_label,
                           tuple(vocabulary.encode(self.tokens)), self.box)


def tokenize(word_text: str) -> str:
    """One token per word"""
    return word_text.lower()


@dataclass(frozen=True)
class Document:
    id: str
    segments: Tuple[TextSegment, ...]
    links: FrozenSet[Tuple[int, int]] = frozenset()
    page_size: Tuple[float, float] = DEFAULT_PAGE_SIZE
    meta: Dict[str, Any] = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        ids = [s.id for s in self.segments]
        if len(set(ids)) != len(ids):
            raise ParseError('form.id', f'document {self.id} has duplicate segment ids')
        if len(self.segments) > MAX_SEGMENTS:
            raise ParseError('form', f'document {self.id} has {len(self.segments)} segments '
                                     f'(max {MAX_SEGMENTS})')
        known = set(ids)
        for father, son in self.links:
            if father == son:
                raise ParseError('linking', f'self-link on segment {father}')
            if father not in known or son not in known:
                raise ParseError('linking', f'link [{father}, {son}] references a missing segment')

    def __len__(self):
        return len(self.segments)

    @property
    def boxes(self) -> List[BBox]:
        return [s.box for s in self.segments]

    @property
    def index_of(self) -> Dict[int, int]:
        return {s.id: i for i, s in enumerate(self.segments)}

    def link_indices(self) -> List[Tuple[int, int]]:
        """Links as (father index, son index), sorted"""
        index = self.index_of
        return sorted((index[f], index[s]) for f, s in self.links)

    def gold_relation_matrix(self):
        """Y[i, j] = 1 iff segment j is a father of segment i"""
        n = len(self.segments)
        gold = np.zeros((n, n), dtype=np.float64)
        for father, son in self.link_indices():
            gold[son, father] = 1.0
        return gold

    def with_tokens(self, vocabulary: 'Vocabulary') -> 'Document':
        return Document(self.id, tuple(s.with_tokens(vocabulary) for s in self.segments),
                        self.links, self.page_size, self.meta)

    def to_dict(self) -> Dict[str, Any]:
        links_by_segment: Dict[int, List[List[int]]] = {s.id: [] for s in self.segments}
        for father, son in sorted(self.links):
            links_by_segment[father].append([father, son])
            links_by_segment[son].append([father, son])
        return {
            'form': [
                {
                    'id': s.id,
                    'text': s.text,
                    'box': s.box.to_list(),
                    'label': s.entity_label,
                    'words': [w.to_dict() for w in s.words],
                    'linking': links_by_segment[s.id],
                }
                for s in self.segments
            ],
            'meta': {**self.meta, 'doc_id': self.id, 'page_size': list(self.page_size)},
        }


class Vocabulary:
    """Token <-> id map with reserved specials"""

    PAD, MASK, UNK, CLS = '[PAD]', '[MASK]', '[UNK]', '[CLS]'
    SPECIALS = (PAD, MASK, UNK, CLS)

    def __init__(self, tokens: Iterable[str] = ()):
        self._itos: List[str] = list(self.SPECIALS)
        self._stoi: Dict[str, int] = {t: i for i, t in enumerate(self._itos)}
        for token in tokens:
            self.add(token)

    def add(self, token: str) -> int:
        if token not in self._stoi:
            self._stoi[token] = len(self._itos)
            self._itos.append(token)
        return self._stoi[token]

    def __len__(self):
        return len(self._itos)

    def __contains__(self, token):
        return token in self._stoi

    @property
    def pad_id(self) -> int:
        return self._stoi[self.PAD]

    @property
    def mask_id(self) -> int:
        return self._stoi[self.MASK]

    @property
    def unk_id(self) -> int:
        return self._stoi[self.UNK]

    @property
    def cls_id(self) -> int:
        return self._stoi[self.CLS]

    @property
    def num_special(self) -> int:
        return len(self.SPECIALS)

    def encode(self, tokens: Iterable[str]) -> List[int]:
        return [self._stoi.get(t, self.unk_id) for t in tokens]

    def decode(self, ids: Iterable[int]) -> List[str]:
        return [self._itos[i] for i in ids]

    @classmethod
    def build(cls, documents: Iterable[Document], min_count: int = 1) -> 'Vocabulary':
        counts = Counter(tok for doc in documents for seg in doc.segments for tok in seg.tokens)
        # count-descending then alphabetical keeps ids stable across runs
        ordered = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
        vocabulary = cls(ordered)
        logger.info(f"Built vocabulary with {len(vocabulary)} entries from {len(counts)} distinct tokens")
        return vocabulary

    def to_dict(self) -> Dict[str, Any]:
        return {'tokens': self._itos}

    def save(self, path, meta: Optional[Dict[str, Any]] = None) -> None:
        payload = self.to_dict()
        if meta:
            payload['meta'] = meta
        with open(path, 'w', encoding='utf-8') as fh:
            json.dump(payload, fh, ensure_ascii=False, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path) -> 'Vocabulary':
        with open(path, encoding='utf-8') as fh:
            tokens = json.load(fh)['tokens']
        if tuple(tokens[:len(cls.SPECIALS)]) != cls.SPECIALS:
            raise ParseError('tokens', 'vocabulary does not start with the reserved tokens')
        return cls(tokens[len(cls.SPECIALS):])
