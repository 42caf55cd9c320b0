"""
GeoLab - Encoder, Head and Model Tests
"""
import math

import numpy as np
import pytest

from geolab.models.document import Document, TextSegment, Vocabulary, Word
from geolab.models.geometry import BBox
from geolab.network.encoder import (BIE_BEGIN, BIE_END, BIE_INSIDE, BIE_SPECIAL, LayoutEncoder, bucketize,
                                    tokenize_document)
from geolab.network.heads import (CoarseRelationHead, PairFeatureExtractor, RelationMatrix, refine_relations,
                                  select_positive_pairs)
from geolab.network.model import CRP_PREFIXES, GeoLayoutModel
from geolab.nn import ops
from geolab.nn.params import ParameterStore
from geolab.nn.tensor import Tensor
from geolab.utils.errors import CheckpointError, DimensionError


def zero_all(store):
    for _, param in store.items():
        param.data[...] = 0.0


@pytest.fixture
def features(rng):
    return Tensor(rng.normal(size=(5, 8)))


class TestTokenize:
    def test_layout_of_inputs(self, key_value_document, vocabulary):
        inputs = tokenize_document(key_value_document, vocabulary)
        # [CLS] personal details | name | john smith | city | paris
        assert inputs.length == 8
        assert inputs.input_ids[0] == vocabulary.cls_id
        assert inputs.first_token.tolist() == [1, 3, 4, 6, 7]
        assert inputs.ranks.tolist() == [0, 1, 1, 2, 3, 3, 4, 5]
        assert inputs.token_segment.tolist() == [-1, 0, 0, 1, 2, 2, 3, 4]
        assert inputs.bie[0] == BIE_SPECIAL
        assert inputs.bie[4] == BIE_BEGIN and inputs.bie[5] == BIE_END
        assert inputs.valid.all()

    def test_tokens_of_one_segment_share_rank_and_box(self, key_value_document, vocabulary):
        inputs = tokenize_document(key_value_document, vocabulary)
        assert inputs.ranks[4] == inputs.ranks[5]
        np.testing.assert_array_equal(inputs.boxes[4], inputs.boxes[5])
        assert inputs.bie[4] != inputs.bie[5]

    def test_middle_tokens_are_inside(self, vocabulary):
        words = tuple(Word(t, BBox(10 + 20 * k, 10, 30 + 20 * k, 20)) for k, t in enumerate('abcd'))
        document = Document('long', (TextSegment(0, words),))
        inputs = tokenize_document(document, vocabulary)
        assert inputs.bie[1:].tolist() == [BIE_BEGIN, BIE_INSIDE, BIE_INSIDE, BIE_END]

    def test_unknown_tokens_map_to_unk(self, key_value_document):
        inputs = tokenize_document(key_value_document, Vocabulary())
        assert set(inputs.input_ids[1:].tolist()) == {Vocabulary().unk_id}

    def test_truncation_trims_longest_segment(self, key_value_document, vocabulary):
        inputs = tokenize_document(key_value_document, vocabulary, max_tokens=7)
        assert inputs.truncated == 1
        assert inputs.length == 7
        assert inputs.num_segments == 5
        # the two-token header loses its second token first
        assert inputs.token_segment.tolist() == [-1, 0, 1, 2, 2, 3, 4]

    def test_too_many_segments_for_max_tokens(self, key_value_document, vocabulary):
        with pytest.raises(DimensionError):
            tokenize_document(key_value_document, vocabulary, max_tokens=5)

    def test_padding(self, key_value_document, vocabulary):
        inputs = tokenize_document(key_value_document, vocabulary, max_tokens=16, pad_to=12)
        assert inputs.length == 12
        assert inputs.valid.tolist() == [True] * 8 + [False] * 4
        assert (inputs.input_ids[8:] == vocabulary.pad_id).all()

    def test_bucketize_grid(self):
        assert bucketize(0.0, 1000.0) == 0
        assert bucketize(999.9, 1000.0) == 999
        assert bucketize(1000.0, 1000.0) == 1000
        assert bucketize(250.0, 500.0) == 500


class TestEncoder:
    def test_output_shapes(self, tiny_model, key_value_document):
        encoded = tiny_model.encode(key_value_document)
        assert encoded.token_features.shape == (8, 8)
        assert encoded.segment_features.shape == (5, 8)
        assert np.isfinite(encoded.token_features.data).all()

    def test_zero_layers_returns_embedded_first_tokens(self, key_value_document, vocabulary, rng):
        encoder = LayoutEncoder(ParameterStore(np.float64), vocabulary, rng, hidden=8, layers=0, heads=2, ffn=16,
                                max_tokens=32)
        inputs = encoder.prepare(key_value_document)
        encoded = encoder.encode(inputs)
        np.testing.assert_array_equal(encoded.segment_features.data, encoder.embed(inputs).data[inputs.first_token])

    def test_zero_tables_give_zero_embeddings(self, key_value_document, vocabulary, rng):
        store = ParameterStore(np.float64)
        encoder = LayoutEncoder(store, vocabulary, rng, hidden=8, layers=1, heads=2, ffn=16, max_tokens=32)
        zero_all(store)
        assert not encoder.embed(key_value_document).data.any()

    def test_padding_never_reaches_real_tokens(self, tiny_model, key_value_document, vocabulary):
        inputs = tokenize_document(key_value_document, vocabulary, max_tokens=96, pad_to=12)
        plain = tiny_model.encode(key_value_document).token_features.data
        padded = tiny_model.encode(inputs).token_features.data
        np.testing.assert_allclose(padded[:8], plain, atol=1e-10)

        inputs.input_ids[8:] = vocabulary.cls_id
        inputs.boxes[8:] = 500
        perturbed = tiny_model.encode(inputs).token_features.data
        np.testing.assert_allclose(perturbed[:8], padded[:8], atol=1e-10)

    def test_deterministic(self, model_spec, vocabulary, key_value_document):
        a = GeoLayoutModel(model_spec, vocabulary, seed=3, dtype=np.float64)
        b = GeoLayoutModel(model_spec, vocabulary, seed=3, dtype=np.float64)
        np.testing.assert_array_equal(a.encode(key_value_document).token_features.data,
                                      b.encode(key_value_document).token_features.data)


class TestRelationHeads:
    def test_zero_weights_give_one_half(self, rng, features):
        store = ParameterStore(np.float64)
        head = CoarseRelationHead(store, 8, rng)
        zero_all(store)
        np.testing.assert_allclose(head(features).data, 0.5)

    def test_single_segment(self, rng):
        head = CoarseRelationHead(ParameterStore(np.float64), 8, rng)
        assert head.relation_matrix(Tensor(rng.normal(size=(1, 8)))).probs.shape == (1, 1)

    def test_symmetric_weight_and_equal_features(self, rng):
        store = ParameterStore(np.float64)
        head = CoarseRelationHead(store, 8, rng)
        w = rng.normal(size=(8, 8))
        head.weight.data[...] = w + w.T
        row = rng.normal(size=(1, 8))
        probs = head(Tensor(np.repeat(row, 3, axis=0))).data
        np.testing.assert_allclose(probs, probs.T)

    def test_logits_at_matches_full_grid(self, rng, features):
        head = CoarseRelationHead(ParameterStore(np.float64), 8, rng, std=0.5)
        full = head.logits(features).data
        rows, cols = [0, 3, 4], [1, 1, 2]
        np.testing.assert_allclose(head.logits_at(features, rows, cols).data, full[rows, cols])

    def test_pair_features_shape_and_order(self, rng, features):
        pair = PairFeatureExtractor(ParameterStore(np.float64), 8, 6, rng, std=0.5)
        grid = pair(features).data
        assert grid.shape == (5, 5, 6)
        np.testing.assert_allclose(pair.at(features, [1, 3], [3, 1]).data, grid[[1, 3], [3, 1]])
        assert not np.allclose(grid[1, 3], grid[3, 1])

    def test_pair_features_zero_weights(self, rng, features):
        store = ParameterStore(np.float64)
        pair = PairFeatureExtractor(store, 8, 6, rng)
        zero_all(store)
        assert not pair(features).data.any()

    def test_relation_matrix_range_checked(self):
        with pytest.raises(ValueError):
            RelationMatrix(np.array([[0.2, 1.5], [0.0, 0.1]]))
        with pytest.raises(DimensionError):
            RelationMatrix(np.zeros((2, 3)))


class TestPositiveSelection:
    def test_threshold_and_order(self):
        r0 = np.array([[0.9, 0.6, 0.2],
                       [0.7, 0.9, 0.95],
                       [0.1, 0.1, 0.9]])
        assert select_positive_pairs(r0).tolist() == [5, 3, 1]

    def test_cap_keeps_highest(self):
        r0 = np.array([[0.0, 0.6, 0.7],
                       [0.8, 0.0, 0.9],
                       [0.55, 0.65, 0.0]])
        assert select_positive_pairs(r0, cap=2).tolist() == [5, 3]

    def test_fallback_single_top_pair(self):
        r0 = np.full((3, 3), 0.1)
        r0[1, 2] = 0.3
        r0[0, 0] = 0.45
        assert select_positive_pairs(r0).tolist() == [5]

    def test_refine_relations_output(self, tiny_model, features):
        r0 = np.full((5, 5), 0.2)
        logits, positives = refine_relations(tiny_model.pair, tiny_model.rfe, features, r0)
        probs = ops.sigmoid(logits).data
        assert positives.size == 1
        assert probs.shape == (5, 5)
        assert ((probs > 0) & (probs < 1)).all()

    def test_positive_set_changes_refined_scores(self, model_spec, vocabulary, features):
        model = GeoLayoutModel(model_spec, vocabulary, seed=1, dtype=np.float64)
        for name in model.store.names('rfe.'):
            model.store[name].data *= 25.0
        r0 = np.full((5, 5), 0.9)
        np.fill_diagonal(r0, 0.0)
        with_all, _ = refine_relations(model.pair, model.rfe, features, r0)
        r0[0, 1] = 0.1
        without_one, _ = refine_relations(model.pair, model.rfe, features, r0)
        assert not np.allclose(with_all.data, without_one.data)


class TestRfe:
    def test_outputs_in_open_interval(self, tiny_model, rng):
        probs = tiny_model.rfe(Tensor(rng.normal(size=(3, 8))), Tensor(rng.normal(size=(7, 8)))).data
        assert probs.shape == (7,)
        assert ((probs > 0) & (probs < 1)).all()

    def test_empty_positive_set_rejected(self, tiny_model, rng):
        with pytest.raises(DimensionError):
            tiny_model.rfe(Tensor(np.zeros((0, 8))), Tensor(rng.normal(size=(2, 8))))

    def test_one_step_on_label_one_raises_score(self, tiny_model, rng):
        from geolab.nn.optim import adam_step
        feature = Tensor(rng.normal(size=(1, 8)))
        before = tiny_model.rfe(feature, feature).item()
        tiny_model.store.zero_grad()
        ops.binary_cross_entropy_with_logits(tiny_model.rfe.logits(feature, feature), np.ones(1)).backward()
        adam_step(tiny_model.store, lr=0.05)
        assert tiny_model.rfe(feature, feature).item() > before


class TestClassificationHeads:
    def test_zero_weights_give_uniform_distributions(self, tiny_model, features):
        zero_all(tiny_model.store)
        np.testing.assert_allclose(tiny_model.direction(features, [0, 1], [2, 3]).data, 1 / 9)
        np.testing.assert_allclose(tiny_model.cit(features, np.array([[0, 1, 2]])).data, 1 / 5)
        np.testing.assert_allclose(tiny_model.ser(features).data, 1 / 7)

    def test_mvlm_loss_at_uniform_is_log_vocabulary(self, tiny_model, features, vocabulary):
        zero_all(tiny_model.store)
        loss = ops.cross_entropy(tiny_model.mvlm.logits(features, [0, 2]), [5, 6])
        assert loss.item() == pytest.approx(math.log(len(vocabulary)))

    def test_cit_is_permutation_invariant(self, tiny_model, features):
        base = tiny_model.cit(features, np.array([[0, 1, 4]])).data
        for triplet in ([4, 0, 1], [1, 4, 0], [4, 1, 0]):
            np.testing.assert_array_equal(tiny_model.cit(features, np.array([triplet])).data, base)

    def test_rows_sum_to_one(self, tiny_model, features):
        for probs in (tiny_model.direction(features, [0, 1, 2], [3, 4, 0]).data,
                      tiny_model.ser(features).data,
                      tiny_model.mvlm(features).data):
            np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-6)


class TestModel:
    def test_relation_matrices(self, tiny_model, key_value_document):
        r0, r1 = tiny_model.relation_matrices(key_value_document)
        assert r0.probs.shape == r1.probs.shape == (5, 5)
        r0_only, none = tiny_model.relation_matrices(key_value_document, use_rfe=False)
        assert none is None
        np.testing.assert_allclose(r0_only.probs, r0.probs)

    def test_checkpoint_round_trip(self, tiny_model, tmp_path):
        path = tiny_model.save(str(tmp_path / 'model.geol'), {'stage': 'unit'})
        restored = GeoLayoutModel.from_checkpoint(path, np.float64)
        assert restored.spec == tiny_model.spec
        for name, param in tiny_model.store.items():
            np.testing.assert_array_equal(restored.store[name].data, param.data)

    def test_crp_weights_transfer_byte_identical(self, tiny_model, model_spec, vocabulary, tmp_path):
        path = tiny_model.save(str(tmp_path / 'model.geol'))
        fresh = GeoLayoutModel(model_spec, vocabulary, seed=9, dtype=np.float64)
        fresh.load_weights(path, CRP_PREFIXES)
        assert fresh.store['crp.W'].data.tobytes() == tiny_model.store['crp.W'].data.tobytes()
        assert not np.array_equal(fresh.store['embed.token'].data, tiny_model.store['embed.token'].data)

    def test_vocabulary_size_must_match(self, model_spec):
        with pytest.raises(CheckpointError):
            GeoLayoutModel(model_spec, Vocabulary(['only']), seed=0)
