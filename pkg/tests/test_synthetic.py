"""
GeoLab - Synthetic Generator Tests
"""
from collections import Counter

import numpy as np
import pytest

from geolab.models.geometry import Direction, direction
from geolab.services.synthetic_service import (GeneratorSpec, build_pools, generate_document,
                                               generate_synthetic_corpus)
from geolab.utils.errors import GenerationError


def test_single_key_value_pair():
    spec = GeneratorSpec(columns=1, rows=1, jitter=0.0)
    document = generate_document(spec, seed=0, doc_id='kv')
    assert len(document) == 2
    assert document.links == frozenset({(0, 1)})
    assert [s.entity_label for s in document.segments] == ['question', 'answer']


def test_sons_never_sit_above_fathers():
    spec = GeneratorSpec(columns=2, rows=4, jitter=0.0, header_rate=1.0)
    upward = (Direction.TOP_LEFT, Direction.TOP, Direction.TOP_RIGHT, Direction.OVERLAP)
    for seed in range(5):
        document = generate_document(spec, seed=seed, doc_id=f'd{seed}')
        boxes = document.boxes
        for father, son in document.link_indices():
            assert direction(boxes[father], boxes[son]) not in upward


def test_multi_father_rate_one_gives_every_value_two_keys():
    spec = GeneratorSpec(columns=1, rows=2, jitter=0.0, multi_father_rate=1.0)
    document = generate_document(spec, seed=3, doc_id='mf')
    fathers = Counter(son for _, son in document.links)
    answers = [s.id for s in document.segments if s.entity_label == 'answer']
    assert answers
    assert all(fathers[a] >= 2 for a in answers)


def test_headers_father_their_keys():
    spec = GeneratorSpec(columns=1, rows=3, jitter=0.0, header_rate=1.0)
    document = generate_document(spec, seed=1, doc_id='hdr')
    header = document.segments[0]
    assert header.entity_label == 'header'
    questions = {s.id for s in document.segments if s.entity_label == 'question'}
    assert {son for father, son in document.links if father == header.id} == questions


def test_same_seed_same_document():
    spec = GeneratorSpec(columns=2, rows=3, jitter=3.0, multi_father_rate=0.3, noise_rate=0.3)
    assert generate_document(spec, 11, 'a') == generate_document(spec, 11, 'a')
    assert generate_document(spec, 11, 'a') != generate_document(spec, 12, 'a')


def test_line_level_pages_have_no_links_or_labels():
    spec = GeneratorSpec(columns=1, rows=3, jitter=0.0, line_level=True)
    document = generate_document(spec, seed=0, doc_id='lines')
    assert document.links == frozenset()
    assert {s.entity_label for s in document.segments} == {'other'}


def test_segments_stay_on_page():
    spec = GeneratorSpec(n_docs=4, columns=2, rows=5, jitter=3.0, multi_father_rate=0.3, multi_son_rate=0.3,
                         header_rate=0.5, noise_rate=0.2)
    for document in generate_synthetic_corpus(spec, np.random.default_rng(0)):
        for box in document.boxes:
            assert box.x2 <= spec.page_width and box.y2 <= spec.page_height


def test_corpus_ids_and_determinism():
    spec = GeneratorSpec(n_docs=3, columns=1, rows=2)
    first = generate_synthetic_corpus(spec, np.random.default_rng(9), prefix='pre')
    second = generate_synthetic_corpus(spec, np.random.default_rng(9), prefix='pre')
    assert [d.id for d in first] == ['pre-00000', 'pre-00001', 'pre-00002']
    assert first == second


def test_key_and_value_pools_overlap():
    pools = build_pools(GeneratorSpec(vocabulary_size=50, vocabulary_overlap=0.8))
    shared = set(pools.keys) & set(pools.values)
    assert len(pools.keys) == len(pools.values) == 50
    assert len(shared) == 40


@pytest.mark.parametrize('field, value', [('multi_father_rate', 1.5), ('rows', 0), ('noise_rate', -0.1)])
def test_invalid_spec(field, value):
    with pytest.raises(GenerationError):
        GeneratorSpec(**{field: value})


def test_page_too_small():
    spec = GeneratorSpec(columns=1, rows=40, page_height=300.0)
    with pytest.raises(GenerationError):
        generate_document(spec, seed=0, doc_id='overflow')
