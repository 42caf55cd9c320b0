"""
GeoLab - Corpus Service
FUNSD-style ingestion and serialization, Poisson line segmentation, and corpus assembly
"""
import json
import logging
import os
from functools import partial
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from jsonschema import Draft7Validator

from geolab.models.document import (DEFAULT_PAGE_SIZE, ENTITY_LABELS, MAX_SEGMENTS, Document, TextSegment,
                                    Vocabulary, Word)
from geolab.models.geometry import BBox
from geolab.services.synthetic_service import GeneratorSpec, generate_synthetic_corpus
from geolab.utils.errors import InvalidBoxError, ParseError
from geolab.utils.helpers import map_documents, rng_stream, spawn_seeds

logger = logging.getLogger(__name__)

POISSON_LAMBDA_CAP = 7.0

_BOX_SCHEMA = {'type': 'array', 'items': {'type': 'number'}, 'minItems': 4, 'maxItems': 4}

FUNSD_SCHEMA = {
    'type': 'object',
    'required': ['form'],
    'properties': {
        'form': {
            'type': 'array',
            'items': {
                'type': 'object',
                'required': ['id', 'words'],
                'properties': {
                    'id': {'type': 'integer'},
                    'text': {'type': 'string'},
                    'box': _BOX_SCHEMA,
                    'label': {'type': 'string', 'enum': list(ENTITY_LABELS)},
                    'words': {
                        'type': 'array',
                        'items': {
                            'type': 'object',
                            'required': ['text', 'box'],
                            'properties': {'text': {'type': 'string'}, 'box': _BOX_SCHEMA},
                        },
                    },
                    'linking': {
                        'type': 'array',
                        'items': {'type': 'array', 'items': {'type': 'integer'}, 'minItems': 2, 'maxItems': 2},
                    },
                },
            },
        },
        'meta': {'type': 'object'},
    },
}

_validator = Draft7Validator(FUNSD_SCHEMA)


def _field_path(path: Sequence[Any]) -> str:
    text = ''
    for part in path:
        text += f'[{part}]' if isinstance(part, int) else (f'.{part}' if text else str(part))
    return text or '<root>'


def _word_box(coords: Sequence[float], where: str) -> BBox:
    x1, y1, x2, y2 = (float(c) for c in coords)
    if min(x1, y1, x2, y2) < 0 or x2 < x1 or y2 < y1:
        raise ParseError(where, f'invalid box {[x1, y1, x2, y2]}')
    if x2 == x1 or y2 == y1:
        logger.warning(f"{where}: zero-extent box {[x1, y1, x2, y2]} widened by 1px")
        x2, y2 = max(x2, x1 + 1.0), max(y2, y1 + 1.0)
    try:
        return BBox(x1, y1, x2, y2)
    except InvalidBoxError as e:
        raise ParseError(where, str(e))


def parse_funsd(payload: Dict[str, Any], doc_id: str, link_order: str = 'father-son') -> Document:
    """One FUNSD-style annotation object -> Document"""
    errors = sorted(_validator.iter_errors(payload), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        first = errors[0]
        raise ParseError(_field_path(first.absolute_path), first.message)

    meta = payload.get('meta', {})
    doc_id = meta.get('doc_id', doc_id)
    segments: List[TextSegment] = []
    raw_links = set()
    for k, entity in enumerate(payload['form']):
        where = f'form[{k}]'
        words = []
        for w, word in enumerate(entity['words']):
            if not word['text'].strip():
                logger.warning(f"{doc_id} {where}.words[{w}]: empty word dropped")
                continue
            words.append(Word(word['text'], _word_box(word['box'], f'{where}.words[{w}].box')))
        for pair in entity.get('linking', []):
            raw_links.add(tuple(pair))
        if not words:
            logger.warning(f"{doc_id} {where}: entity {entity['id']} has no words, dropped")
            continue
        segments.append(TextSegment(entity['id'], tuple(words), entity.get('label', 'other')))

    ids = [s.id for s in segments]
    if len(set(ids)) != len(ids):
        raise ParseError('form.id', f'duplicate entity ids in {doc_id}')
    all_ids = {e['id'] for e in payload['form']}
    kept_ids = set(ids)

    if len(segments) > MAX_SEGMENTS:
        logger.warning(f"{doc_id}: {len(segments)} segments, keeping the first {MAX_SEGMENTS} in reading order")
        reading = sorted(range(len(segments)), key=lambda i: (segments[i].box.y1, segments[i].box.x1, i))
        keep = set(reading[:MAX_SEGMENTS])
        segments = [s for i, s in enumerate(segments) if i in keep]
        kept_ids = {s.id for s in segments}

    links = set()
    for a, b in sorted(raw_links):
        father, son = (a, b) if link_order == 'father-son' else (b, a)
        if father not in all_ids or son not in all_ids:
            raise ParseError('form.linking', f'link [{a}, {b}] references a missing entity')
        if father == son:
            logger.warning(f"{doc_id}: self-link on entity {father} dropped")
            continue
        if father in kept_ids and son in kept_ids:
            links.add((father, son))

    page_size = tuple(float(v) for v in meta.get('page_size', DEFAULT_PAGE_SIZE))
    extra = {k: v for k, v in meta.items() if k not in ('doc_id', 'page_size')}
    return Document(doc_id, tuple(segments), frozenset(links), page_size, extra)


def load_funsd(path: str, link_order: str = 'father-son') -> Document:
    doc_id = os.path.splitext(os.path.basename(path))[0]
    try:
        with open(path, encoding='utf-8') as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as e:
        raise ParseError('<root>', f'{path} is not valid JSON ({e.msg} at line {e.lineno})')
    return parse_funsd(payload, doc_id, link_order)


def document_to_funsd(document: Document) -> Dict[str, Any]:
    return document.to_dict()


def save_document(document: Document, path: str) -> str:
    with open(path, 'w', encoding='utf-8') as fh:
        json.dump(document_to_funsd(document), fh, ensure_ascii=False, sort_keys=True, indent=1)
    return path


def save_corpus_dir(documents: Sequence[Document], directory: str) -> List[str]:
    os.makedirs(directory, exist_ok=True)
    return [save_document(doc, os.path.join(directory, f'{doc.id}.json')) for doc in documents]


def load_corpus_dir(directory: str, link_order: str = 'father-son') -> List[Document]:
    """Every *.json file of a directory, in file-name order"""
    names = sorted(n for n in os.listdir(directory) if n.endswith('.json'))
    return [load_funsd(os.path.join(directory, n), link_order) for n in names]


def split_probability(word_count: int) -> float:
    """p_l = 1 - 1/(N_w - 0.5)"""
    return 1.0 - 1.0 / (word_count - 0.5)


def poisson_line_segmentation(line: TextSegment, rng: np.random.Generator) -> List[TextSegment]:
    """Split one line into Poisson-many contiguous, near-equal word groups"""
    n_words = len(line.words)
    if n_words < 2 or rng.random() > split_probability(n_words):
        return [line]
    lam = min(n_words / 3.0, POISSON_LAMBDA_CAP)
    n_pieces = int(np.clip(rng.poisson(lam), 1, n_words))
    if n_pieces == 1:
        return [line]
    pieces = np.array_split(np.arange(n_words), n_pieces)
    return [TextSegment(line.id, tuple(line.words[i] for i in piece), line.entity_label) for piece in pieces]


def segment_document(document: Document, rng: np.random.Generator) -> Document:
    """Run every segment through Poisson line segmentation and renumber 0..n-1"""
    new_segments, first_piece = [], {}
    for segment in document.segments:
        pieces = poisson_line_segmentation(segment, rng)
        first_piece[segment.id] = len(new_segments)
        for piece in pieces:
            new_segments.append(TextSegment(len(new_segments), piece.words, piece.entity_label))
    if len(new_segments) > MAX_SEGMENTS:
        logger.warning(f"{document.id}: segmentation produced {len(new_segments)} segments, kept unsplit")
        return document
    links = frozenset((first_piece[f], first_piece[s]) for f, s in document.links)
    return Document(document.id, tuple(new_segments), links, document.page_size, document.meta)


def _maybe_segment(pair, prob: float) -> Document:
    document, seed = pair
    rng = np.random.default_rng(int(seed))
    if rng.random() < prob:
        return segment_document(document, rng)
    return document


def apply_segmentation(corpus: Sequence[Document], prob: float = 0.9,
                       rng: Optional[np.random.Generator] = None, jobs: int = 1) -> List[Document]:
    """Re-segment each document independently with probability `prob`"""
    rng = rng or np.random.default_rng(0)
    seeds = spawn_seeds(rng, len(corpus))
    result = map_documents(partial(_maybe_segment, prob=prob), list(zip(corpus, seeds)), jobs)
    changed = sum(1 for a, b in zip(corpus, result) if a is not b)
    logger.info(f"Poisson line segmentation touched {changed}/{len(corpus)} documents (p={prob})")
    return result


class CorpusService:
    """Builds and stores the pretrain / finetune / test splits and the vocabulary"""

    SPLITS = ('pretrain', 'finetune', 'test')
    STREAMS = {'pretrain': 1, 'finetune': 2, 'test': 3, 'segmentation': 4}

    def build(self, config, artifacts, funsd_dir: Optional[str] = None,
              link_order: Optional[str] = None) -> Dict[str, Any]:
        seed, jobs = config.SEED, config.JOBS
        pretrain_spec = GeneratorSpec.from_config(config, config.CORPUS_PRETRAIN_DOCS,
                                                  line_level=config.CORPUS_PRETRAIN_LINE_LEVEL)
        pretrain = generate_synthetic_corpus(pretrain_spec, rng_stream(seed, self.STREAMS['pretrain']),
                                             prefix='pretrain', jobs=jobs)
        pretrain = apply_segmentation(pretrain, config.CORPUS_SEGMENT_PROB,
                                      rng_stream(seed, self.STREAMS['segmentation']), jobs)

        if funsd_dir:
            link_order = link_order or config.FUNSD_LINK_ORDER
            finetune = self._load_funsd_split(funsd_dir, 'training_data', link_order)
            test = self._load_funsd_split(funsd_dir, 'testing_data', link_order)
        else:
            finetune = generate_synthetic_corpus(GeneratorSpec.from_config(config, config.CORPUS_FINETUNE_DOCS),
                                                 rng_stream(seed, self.STREAMS['finetune']),
                                                 prefix='finetune', jobs=jobs)
            test = generate_synthetic_corpus(GeneratorSpec.from_config(config, config.CORPUS_TEST_DOCS),
                                             rng_stream(seed, self.STREAMS['test']), prefix='test', jobs=jobs)

        vocabulary = Vocabulary.build(pretrain + finetune, config.CORPUS_MIN_COUNT)
        run_meta = artifacts.metadata()
        outputs = {}
        for split, documents in zip(self.SPLITS, (pretrain, finetune, test)):
            for document in documents:
                document.meta['run'] = run_meta
            directory = artifacts.corpus_dir(split)
            save_corpus_dir(documents, directory)
            outputs[split] = directory
            logger.info(f"Saved {len(documents)} {split} documents to {directory}")
        vocabulary.save(artifacts.vocab_path, run_meta)
        outputs['vocabulary'] = artifacts.vocab_path
        return {
            'outputs': outputs,
            'counts': {split: len(docs) for split, docs in zip(self.SPLITS, (pretrain, finetune, test))},
            'vocabulary_size': len(vocabulary),
        }

    def _load_funsd_split(self, funsd_dir: str, split: str, link_order: str) -> List[Document]:
        directory = os.path.join(funsd_dir, split, 'annotations')
        if not os.path.isdir(directory):
            directory = os.path.join(funsd_dir, split)
        if not os.path.isdir(directory):
            raise ParseError('funsd', f'{funsd_dir} has no {split} directory')
        documents = load_corpus_dir(directory, link_order)
        logger.info(f"Loaded {len(documents)} FUNSD documents from {directory}")
        return documents

    def load_split(self, artifacts, split: str) -> List[Document]:
        directory = artifacts.require(artifacts.corpus_dir(split), 'gen-corpus')
        return load_corpus_dir(directory)

    def load_vocabulary(self, artifacts) -> Vocabulary:
        return Vocabulary.load(artifacts.require(artifacts.vocab_path, 'gen-corpus'))


# Create singleton instance
corpus_service = CorpusService()
