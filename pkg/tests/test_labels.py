"""
GeoLab - Label Tests
"""
import math

import numpy as np
import pytest

from geolab.models.document import Document, TextSegment, Vocabulary, Word
from geolab.models.geometry import BBox, CollinearClass, direction, direction_matrix, nearest_in_direction
from geolab.models.labels import SER_TAGS, TAG_INDEX, GeoLabelSet, bio_spans, segment_tag_ids
from geolab.network.encoder import tokenize_document
from geolab.services.label_service import (LabelSettings, build_dde, build_label_set, check_label_set,
                                           label_service, mask_tokens, sample_cit, sample_ddm)
from geolab.utils.errors import MissingArtifactError


def segment(index, box, text='cell'):
    x1, y1, x2, y2 = box
    return TextSegment(index, (Word(text, BBox(x1, y1, x2, y2)),))


def grid_document(rows=6, columns=3, doc_id='grid'):
    segments = []
    for r in range(rows):
        for c in range(columns):
            x, y = 10 + 100 * c, 10 + 40 * r
            segments.append(segment(len(segments), (x, y, x + 40, y + 12)))
    return Document(doc_id, tuple(segments))


def wordy_document(lines=40, words=10):
    segments = []
    for r in range(lines):
        line_words = tuple(Word(f'w{k}', BBox(10 + 30 * k, 10 + 20 * r, 35 + 30 * k, 22 + 20 * r))
                           for k in range(words))
        segments.append(TextSegment(r, line_words))
    return Document('wordy', tuple(segments), page_size=(1000.0, 1000.0))


class TestDirectionDistanceLabels:
    def test_pairs_match_geometry(self, rng):
        document = grid_document()
        pairs = sample_ddm(document, rng, anchors=5, partners=6)
        assert len(pairs) == 30
        boxes = document.boxes
        for i, j, label, nearest in pairs:
            assert i != j
            expected = direction(boxes[i], boxes[j])
            assert label == int(expected)
            assert nearest == int(nearest_in_direction(i, boxes).get(expected) == j)

    def test_anchors_capped_by_document(self, key_value_document, rng):
        pairs = sample_ddm(key_value_document, rng, anchors=16, partners=32)
        assert len(pairs) == 5 * 4
        assert len({(i, j) for i, j, _, _ in pairs}) == 20

    def test_single_segment_has_no_pairs(self, rng):
        assert sample_ddm(grid_document(rows=1, columns=1), rng) == []


class TestDirectionExceptionLabels:
    def test_small_document_is_skipped(self, key_value_document, rng):
        assert build_dde(key_value_document, rng) == ([], [], None)

    def test_positive_set_is_dominated(self, rng):
        document = grid_document()
        positive, sample, dominant = build_dde(document, rng, pairs=40, threshold=0.6, ratio=0.7)
        assert len(positive) == 20 and len(sample) == 20
        directions = direction_matrix(document.boxes)
        share = sum(int(directions[i, j]) == dominant for i, j in positive)
        assert share >= math.ceil(0.6 * 20)
        assert not set(positive) & {(i, j) for i, j, _ in sample}

    def test_sample_labels_and_balance(self, rng):
        document = grid_document()
        _, sample, dominant = build_dde(document, rng)
        directions = direction_matrix(document.boxes)
        for i, j, label in sample:
            assert label == int(int(directions[i, j]) == dominant)
        assert sum(label for _, _, label in sample) == 10

    def test_check_label_set_flags_weak_dominance(self, rng):
        document = grid_document()
        labels = build_label_set(document, Vocabulary.build([document]), LabelSettings(), seed=0)
        assert check_label_set(labels, document) == []
        directions = direction_matrix(document.boxes)
        labels.dde_positive = [(i, j) for i, j in labels.dde_positive
                               if int(directions[i, j]) != labels.dde_direction]
        assert check_label_set(labels, document)


class TestCollinearityLabels:
    def test_vertical_stack(self, rng):
        document = Document('stack', tuple(segment(k, (10, 10 + 30 * k, 60, 22 + 30 * k)) for k in range(3)))
        triplets = sample_cit(document, rng, triplets=6)
        assert len(triplets) == 6
        assert {label for *_, label in triplets} == {int(CollinearClass.VERTICAL)}

    def test_labels_agree_with_oracle(self, rng):
        document = grid_document()
        triplets = sample_cit(document, rng, triplets=16)
        assert len(triplets) == 16
        assert all(len({i, j, k}) == 3 for i, j, k, _ in triplets)
        assert GeoLabelSet('grid', 0, cit_triplets=triplets).verify(document) == []

    def test_half_the_slots_are_collinear(self, rng):
        triplets = sample_cit(grid_document(), rng, triplets=16)
        collinear = [t for t in triplets if t[3] != int(CollinearClass.NONE)]
        assert len(collinear) >= 8

    def test_two_segments_have_no_triplets(self, rng):
        assert sample_cit(grid_document(rows=1, columns=2), rng) == []


class TestMasking:
    def test_rate_and_replacement_mix(self):
        document = wordy_document()
        vocabulary = Vocabulary.build([document])
        inputs = tokenize_document(document, vocabulary, max_tokens=512)
        masked = []
        for seed in range(25):
            masked += mask_tokens(inputs, vocabulary, np.random.default_rng(seed), rate=0.15)
        total = 25 * 400
        assert abs(len(masked) / total - 0.15) < 4 * math.sqrt(0.15 * 0.85 / total)
        share = sum(m[2] == vocabulary.mask_id for m in masked) / len(masked)
        assert 0.76 < share < 0.84

    def test_cls_is_never_masked(self, key_value_document, vocabulary):
        inputs = tokenize_document(key_value_document, vocabulary)
        masked = mask_tokens(inputs, vocabulary, np.random.default_rng(0), rate=1.0)
        assert [m[0] for m in masked] == list(range(1, 8))
        assert all(m[1] == inputs.input_ids[m[0]] for m in masked)

    def test_masked_input_ids(self, key_value_document, vocabulary):
        inputs = tokenize_document(key_value_document, vocabulary)
        labels = GeoLabelSet('form-a', 0, mvlm_mask=[(2, int(inputs.input_ids[2]), vocabulary.mask_id)])
        ids = labels.masked_input_ids(inputs.input_ids)
        assert ids[2] == vocabulary.mask_id
        assert inputs.input_ids[2] != vocabulary.mask_id

    def test_empty_document(self):
        document = Document('blank', ())
        labels = build_label_set(document, Vocabulary(), LabelSettings(), seed=0)
        assert labels.counts() == {'ddm': 0, 'dde': 0, 'cit': 0, 'mvlm': 0}
        assert labels.dde_skipped


class TestLabelSets:
    def test_same_seed_same_labels(self, vocabulary):
        document = grid_document()
        first = build_label_set(document, vocabulary, LabelSettings(), seed=3)
        assert build_label_set(document, vocabulary, LabelSettings(), seed=3) == first
        assert build_label_set(document, vocabulary, LabelSettings(), seed=4) != first

    def test_verify_reports_bad_direction(self, key_value_document):
        labels = GeoLabelSet('form-a', 0, ddm_pairs=[(1, 2, 4, 1)])
        assert labels.verify(key_value_document) == ['ddm (1,2) direction 4 != 0']

    def test_cache_round_trip(self, synthetic_documents, vocabulary, config, artifacts):
        result = label_service.prepare(synthetic_documents, vocabulary, config, artifacts)
        assert result['documents'] == len(synthetic_documents)
        loaded = label_service.load(artifacts, synthetic_documents)
        settings = LabelSettings.from_config(config)
        expected = [build_label_set(d, vocabulary, settings, config.SEED) for d in synthetic_documents]
        assert loaded == expected

    def test_missing_cache_names_producer(self, key_value_document, artifacts):
        with pytest.raises(MissingArtifactError) as excinfo:
            label_service.load(artifacts, [key_value_document])
        assert excinfo.value.producer == 'prepare-labels'


class TestSerTags:
    def test_tag_scheme(self):
        assert len(SER_TAGS) == 7
        assert SER_TAGS[0] == 'O'

    def test_segment_tag_ids(self, key_value_document, vocabulary):
        inputs = tokenize_document(key_value_document, vocabulary)
        tags = segment_tag_ids(key_value_document, inputs.token_segment)
        expected = [-1] + [TAG_INDEX[t] for t in ('B-HEADER', 'I-HEADER', 'B-QUESTION', 'B-ANSWER',
                                                  'I-ANSWER', 'B-QUESTION', 'B-ANSWER')]
        assert tags.tolist() == expected

    def test_other_segments_are_outside(self):
        document = Document('o', (segment(0, (10, 10, 50, 20)),))
        assert segment_tag_ids(document, np.array([-1, 0])).tolist() == [-1, TAG_INDEX['O']]

    def test_bio_spans(self):
        tags = ['B-QUESTION', 'I-QUESTION', 'O', 'B-ANSWER', 'B-ANSWER', 'I-ANSWER']
        assert bio_spans(tags) == [('QUESTION', 0, 1), ('ANSWER', 3, 3), ('ANSWER', 4, 5)]

    def test_stray_inside_tag_starts_span(self):
        tags = ['O', 'I-ANSWER', 'I-ANSWER', 'B-QUESTION', 'I-HEADER']
        assert bio_spans(tags) == [('ANSWER', 1, 2), ('QUESTION', 3, 3), ('HEADER', 4, 4)]
