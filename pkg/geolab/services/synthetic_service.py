"""
GeoLab - Synthetic Form Generator
Key/value/header forms laid out in columns, with links that follow geometric adjacency.

Key and value texts come from overlapping pseudo-word pools, so text alone cannot tell
which key a value belongs to.
"""
import logging
from dataclasses import asdict, dataclass, field
from functools import partial
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from geolab.models.document import MAX_SEGMENTS, Document, TextSegment, Word
from geolab.models.geometry import BBox
from geolab.utils.errors import GenerationError
from geolab.utils.helpers import map_documents, rng_stream, spawn_seeds

logger = logging.getLogger(__name__)

SYLLABLES = ('ka', 'lo', 'mi', 'ta', 're', 'su', 'no', 'vi', 'da', 'pe', 'zu', 'ro',
             'fa', 'ne', 'hi', 'bo', 'ke', 'ju', 'ma', 'si')
POOL_SEED = 7331
MARGIN = 40.0
STYLES = ('right', 'below')


@dataclass(frozen=True)
class GeneratorSpec:
    n_docs: int = 1
    columns: int = 2
    rows: int = 5
    jitter: float = 3.0
    multi_father_rate: float = 0.0
    multi_son_rate: float = 0.0
    header_rate: float = 0.0
    noise_rate: float = 0.0
    vocabulary_size: int = 80
    vocabulary_overlap: float = 0.8
    page_width: float = 1000.0
    page_height: float = 1000.0
    char_width: float = 7.0
    line_height: float = 12.0
    line_level: bool = False
    vocabulary: Tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.columns < 1 or self.rows < 1 or self.n_docs < 0:
            raise GenerationError(f"columns/rows must be >= 1 and n_docs >= 0, got "
                                  f"{self.columns}/{self.rows}/{self.n_docs}")
        for name in ('multi_father_rate', 'multi_son_rate', 'header_rate', 'noise_rate', 'vocabulary_overlap'):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise GenerationError(f"{name} must lie in [0, 1]")

    @classmethod
    def from_config(cls, config, n_docs: int, line_level: bool = False) -> 'GeneratorSpec':
        return cls(
            n_docs=n_docs,
            columns=config.CORPUS_COLUMNS,
            rows=config.CORPUS_ROWS,
            jitter=config.CORPUS_JITTER,
            multi_father_rate=config.CORPUS_MULTI_FATHER_RATE,
            multi_son_rate=config.CORPUS_MULTI_SON_RATE,
            header_rate=config.CORPUS_HEADER_RATE,
            noise_rate=config.CORPUS_NOISE_RATE,
            vocabulary_size=config.CORPUS_VOCABULARY_SIZE,
            vocabulary_overlap=config.CORPUS_VOCABULARY_OVERLAP,
            page_width=config.CORPUS_PAGE_WIDTH,
            page_height=config.CORPUS_PAGE_HEIGHT,
            line_level=line_level,
        )

    def to_dict(self) -> Dict[str, Any]:
        payload = asdict(self)
        payload['vocabulary'] = list(self.vocabulary)
        return payload


@dataclass
class WordPools:
    keys: List[str]
    values: List[str]


def _pseudo_words(rng: np.random.Generator, count: int) -> List[str]:
    words, seen = [], set()
    while len(words) < count:
        length = int(rng.integers(2, 4))
        word = ''.join(SYLLABLES[int(i)] for i in rng.integers(0, len(SYLLABLES), size=length))
        if word not in seen:
            seen.add(word)
            words.append(word)
    return words


def build_pools(spec: GeneratorSpec) -> WordPools:
    """Key and value pools sharing round(overlap * size) words"""
    if spec.vocabulary:
        words = list(spec.vocabulary)
        return WordPools(keys=words, values=words)
    size = max(int(spec.vocabulary_size), 1)
    shared = int(round(spec.vocabulary_overlap * size))
    rng = rng_stream(POOL_SEED, size)
    words = _pseudo_words(rng, shared + 2 * (size - shared))
    common, rest = words[:shared], words[shared:]
    return WordPools(keys=common + rest[:size - shared], values=common + rest[size - shared:])


@dataclass
class _Cell:
    """One segment under construction; `line` groups cells sharing a text line"""
    role: str
    words: List[Word]
    line: Tuple[int, int]


class _Layout:
    def __init__(self, spec: GeneratorSpec, pools: WordPools, rng: np.random.Generator, doc_id: str):
        self.spec = spec
        self.pools = pools
        self.rng = rng
        self.doc_id = doc_id
        self.cells: List[_Cell] = []
        self.links: List[Tuple[int, int]] = []
        self.column_width = (spec.page_width - 2 * MARGIN) / spec.columns
        self.gap = 12.0 + 2 * spec.jitter
        self.line_step = spec.line_height + 6.0 + 2 * spec.jitter

    def _draw(self, pool: Sequence[str], low: int, high: int) -> List[str]:
        count = int(self.rng.integers(low, high + 1))
        return [pool[int(i)] for i in self.rng.integers(0, len(pool), size=count)]

    def _width(self, texts: Sequence[str]) -> float:
        cw = self.spec.char_width
        return sum(len(t) * cw for t in texts) + cw * max(len(texts) - 1, 0)

    def _fit(self, texts: List[str], available: float) -> List[str]:
        """Drop trailing words until the text fits; at least one word must fit"""
        while texts and self._width(texts) > available:
            texts = texts[:-1]
        if not texts:
            raise GenerationError(f"{self.doc_id}: no room for a word in {available:.0f}px")
        return texts

    def _place(self, role: str, texts: List[str], x: float, y: float, line: Tuple[int, int]) -> int:
        jitter = self.spec.jitter
        dx, dy = (self.rng.uniform(-jitter, jitter, size=2) if jitter > 0 else (0.0, 0.0))
        x, y = max(x + dx, 0.0), max(y + dy, 0.0)
        cw, lh = self.spec.char_width, self.spec.line_height
        words = []
        for text in texts:
            width = len(text) * cw
            words.append(Word(text, BBox(x, y, x + width, y + lh)))
            x += width + cw
        if x > self.spec.page_width or y + lh > self.spec.page_height:
            raise GenerationError(f"{self.doc_id}: segment at ({x:.0f}, {y:.0f}) leaves the page")
        self.cells.append(_Cell(role, words, line))
        return len(self.cells) - 1

    def _link(self, father: int, son: int):
        self.links.append((father, son))

    def column(self, c: int):
        spec, rng = self.spec, self.rng
        x0 = MARGIN + c * self.column_width
        right_edge = x0 + self.column_width - self.gap
        style = STYLES[int(rng.integers(0, len(STYLES)))]
        line = 0

        def y_of(k):
            return MARGIN + k * self.line_step

        header = None
        if rng.random() < spec.header_rate:
            texts = self._fit([t.upper() for t in self._draw(self.pools.keys, 2, 3)], right_edge - x0)
            header = self._place('header', texts, x0, y_of(line), (c, line))
            line += 1

        for _ in range(spec.rows):
            multi_father = rng.random() < spec.multi_father_rate
            multi_son = rng.random() < spec.multi_son_rate
            key_texts = self._fit(self._draw(self.pools.keys, 1, 3), (right_edge - x0) / 2)
            extra_texts = self._fit(self._draw(self.pools.keys, 1, 2), (right_edge - x0) / 2) if multi_father else None

            if style == 'right':
                value_x = x0 + self._width(key_texts) + self.gap
                extra = None
                if multi_father:
                    extra = self._place('question', extra_texts, value_x, y_of(line), (c, line))
                    line += 1
                key = self._place('question', key_texts, x0, y_of(line), (c, line))
                value_lines = [line] + ([line + 1] if multi_son else [])
            else:
                key = self._place('question', key_texts, x0, y_of(line), (c, line))
                line += 1
                extra = None
                value_x = x0 + 20.0
                if multi_father:
                    extra = self._place('question', extra_texts, x0, y_of(line), (c, line))
                    value_x = x0 + self._width(extra_texts) + self.gap
                value_lines = [line] + ([line + 1] if multi_son else [])

            for k in value_lines:
                texts = self._fit(self._draw(self.pools.values, 1, 4), right_edge - value_x)
                value = self._place('answer', texts, value_x, y_of(k), (c, k))
                self._link(key, value)
                if extra is not None:
                    self._link(extra, value)
            line = value_lines[-1] + 1

            if header is not None:
                self._link(header, key)
                if extra is not None:
                    self._link(header, extra)

            if rng.random() < spec.noise_rate:
                texts = self._fit(self._draw(self.pools.values + self.pools.keys, 2, 5), right_edge - x0)
                self._place('other', texts, x0, y_of(line), (c, line))
                line += 1

        bottom = y_of(line) - self.line_step + spec.line_height
        if bottom > spec.page_height - MARGIN / 2:
            raise GenerationError(f"{self.doc_id}: column {c} needs {bottom:.0f}px of a "
                                  f"{spec.page_height:.0f}px page")


def _merge_lines(cells: List[_Cell]) -> List[_Cell]:
    """One OCR-style line per (column, line), words left to right, no labels"""
    merged: Dict[Tuple[int, int], List[Word]] = {}
    for cell in cells:
        merged.setdefault(cell.line, []).extend(cell.words)
    return [_Cell('other', sorted(words, key=lambda w: w.box.x1), line) for line, words in merged.items()]


def generate_document(spec: GeneratorSpec, seed: int, doc_id: str,
                      pools: Optional[WordPools] = None) -> Document:
    """One form from one seed; equal (spec, seed) give equal documents"""
    rng = np.random.default_rng(int(seed))
    layout = _Layout(spec, pools or build_pools(spec), rng, doc_id)
    for c in range(spec.columns):
        layout.column(c)

    cells, links = layout.cells, layout.links
    if spec.line_level:
        cells, links = _merge_lines(cells), []
    if len(cells) > MAX_SEGMENTS:
        raise GenerationError(f"{doc_id}: {len(cells)} segments exceed {MAX_SEGMENTS}")

    segments = tuple(TextSegment(k, tuple(cell.words), cell.role) for k, cell in enumerate(cells))
    meta = {'seed': int(seed), 'generator_spec': spec.to_dict()}
    return Document(doc_id, segments, frozenset(links), (spec.page_width, spec.page_height), meta)


def _generate_one(item, spec: GeneratorSpec, pools: WordPools) -> Document:
    seed, doc_id = item
    return generate_document(spec, seed, doc_id, pools)


def generate_synthetic_corpus(spec: GeneratorSpec, rng: Optional[np.random.Generator] = None,
                              prefix: str = 'doc', jobs: int = 1) -> List[Document]:
    """spec.n_docs documents, each from its own seed drawn from rng"""
    rng = rng or np.random.default_rng(0)
    seeds = spawn_seeds(rng, spec.n_docs)
    items = [(int(seed), f'{prefix}-{k:05d}') for k, seed in enumerate(seeds)]
    documents = map_documents(partial(_generate_one, spec=spec, pools=build_pools(spec)), items, jobs)
    total_links = sum(len(d.links) for d in documents)
    logger.info(f"Generated {len(documents)} {prefix} documents "
                f"({sum(len(d) for d in documents)} segments, {total_links} links)")
    return documents
