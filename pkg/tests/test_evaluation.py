"""
GeoLab - Evaluation, Probe, Ablation and Report Tests
"""
import numpy as np
import pytest

import geolab.services.ablation_service as ablation_module
import geolab.services.evaluation_service as evaluation_module
from geolab.models.document import Document, TextSegment, Word
from geolab.models.geometry import BBox
from geolab.models.metrics import DecodedRelations, MetricsReport
from geolab.network.heads import RelationMatrix
from geolab.services.ablation_service import (HEAD_GRID, RSF_GRID, TASK_GRID, AblationRunner, summarize,
                                              summary_text)
from geolab.services.evaluation_service import (direction_probe, evaluate, few_shot_harness, gold_tags,
                                                relation_scores)
from geolab.services.finetune_service import Prediction, decode_rsf
from geolab.services.gradcheck_service import run_grad_checks
from geolab.services.report_service import check_hashes, collect_metrics, metrics_frame
from geolab.utils.errors import ConfigMismatchError, EvaluationError, HarnessError
from geolab.utils.helpers import harmonic_f1


def prediction(document, links=None, tags=None):
    if links is None:
        links = {(son, father) for father, son in document.link_indices()}
    if tags is None:
        tags = gold_tags(document)
    relation = RelationMatrix(document.gold_relation_matrix())
    decoded = DecodedRelations(document.id, frozenset(links))
    return Prediction(document.id, list(tags), relation, None, decoded, decoded)


class TestEvaluate:
    def test_gold_tags(self, key_value_document):
        assert gold_tags(key_value_document) == ['B-HEADER', 'I-HEADER', 'B-QUESTION', 'B-ANSWER',
                                                 'I-ANSWER', 'B-QUESTION', 'B-ANSWER']

    def test_perfect_predictions(self, key_value_document, synthetic_documents):
        documents = [key_value_document, *synthetic_documents]
        report = evaluate([prediction(d) for d in documents], documents)
        assert report.re_precision == report.re_recall == report.re_f1 == 1.0
        assert report.ser_f1 == 1.0
        assert report.counts['documents'] == 4

    def test_empty_predictions(self, key_value_document):
        empty = prediction(key_value_document, links=set(), tags=['O'] * 7)
        report = evaluate([empty], [key_value_document])
        assert report.re_precision == report.re_recall == report.re_f1 == 0.0
        assert report.ser_precision == report.ser_recall == 0.0

    def test_partial_relations(self, key_value_document):
        # one right, one reversed
        partial = prediction(key_value_document, links={(2, 1), (1, 2)})
        report = evaluate([partial], [key_value_document])
        assert report.re_precision == pytest.approx(0.5)
        assert report.re_recall == pytest.approx(0.25)
        assert report.re_f1 == pytest.approx(harmonic_f1(0.5, 0.25))

    def test_prediction_order_does_not_matter(self, synthetic_documents):
        predictions = [prediction(d) for d in reversed(synthetic_documents)]
        assert evaluate(predictions, synthetic_documents).re_f1 == 1.0

    def test_mismatched_ids(self, key_value_document, synthetic_documents):
        with pytest.raises(EvaluationError):
            evaluate([prediction(key_value_document)], synthetic_documents)

    def test_mismatched_tag_count(self, key_value_document):
        with pytest.raises(EvaluationError):
            evaluate([prediction(key_value_document, tags=['O'])], [key_value_document])

    def test_relation_scores_of_thresholded_field(self, key_value_document):
        p, r, f1 = relation_scores([prediction(key_value_document)], [key_value_document], 'thresholded')
        assert (p, r, f1) == (1.0, 1.0, 1.0)

    def test_harmonic_f1(self):
        assert harmonic_f1(0.8894, 0.8996) == pytest.approx(0.8945, abs=1e-4)
        assert harmonic_f1(0.0, 0.0) == 0.0


class TestDirectionProbe:
    def test_result_keys_and_ranges(self, config, tiny_model, synthetic_documents, key_value_document):
        result = direction_probe(tiny_model, synthetic_documents[:2], [synthetic_documents[2], key_value_document],
                                 config)
        assert set(result) == {'entropy', 'xent', 'acc', 'majority_acc', 'train_pairs', 'test_pairs'}
        assert 0.0 <= result['acc'] <= 1.0
        assert 0.0 <= result['entropy'] <= np.log(9) + 1e-9
        assert result['train_pairs'] > 0 and result['test_pairs'] > 0

    def test_probe_leaves_encoder_untouched(self, config, tiny_model, synthetic_documents):
        before = tiny_model.store.state_dict()
        direction_probe(tiny_model, synthetic_documents, synthetic_documents, config)
        for name, array in before.items():
            np.testing.assert_array_equal(tiny_model.store[name].data, array)

    def test_no_pairs(self, config, tiny_model):
        with pytest.raises(EvaluationError):
            direction_probe(tiny_model, [Document('blank', ())], [Document('blank2', ())], config)


class TestFewShot:
    @pytest.mark.parametrize('shots', [[], [0], [5]])
    def test_bad_shot_counts(self, config, vocabulary, synthetic_documents, shots):
        with pytest.raises(HarnessError):
            few_shot_harness(synthetic_documents, synthetic_documents, vocabulary, config, None, shots, [0])

    def test_rows_per_shot_and_variant_decoded_by_threshold(self, monkeypatch, config, vocabulary,
                                                            synthetic_documents):
        trained, decoded = [], []

        def fake_finetune(run_config, vocab, subset, checkpoint, plan):
            trained.append((len(subset), plan.crp, run_config.FINETUNE_VARIANCE_LOSS, run_config.RSF_ENABLED))
            return None, None

        def fake_predict(model, documents, run_config, use_rfe=True, rsf=None, constraint=None):
            decoded.append((rsf, constraint))
            return [prediction(d) for d in documents]

        monkeypatch.setattr(evaluation_module, 'finetune_model', fake_finetune)
        monkeypatch.setattr(evaluation_module, 'predict_corpus', fake_predict)
        curves = few_shot_harness(synthetic_documents, synthetic_documents, vocabulary, config, 'pretrain.geol',
                                  [1, 2], [0, 1])

        assert list(curves.columns) == ['shots', 'seed', 'variant', 'precision', 'recall', 'f1']
        assert len(curves) == 8
        assert (curves.groupby(['shots', 'variant']).size() == 2).all()
        assert set(curves['variant']) == {'pretrained-heads', 'random-heads'}
        assert (curves['f1'] == 1.0).all()
        assert [size for size, *_ in trained] == [1, 1, 1, 1, 2, 2, 2, 2]
        assert [crp for _, crp, *_ in trained] == ['pretrained', 'random'] * 4
        assert all(not variance and not rsf for _, _, variance, rsf in trained)
        assert set(decoded) == {(False, False)}


class TestHeadGrid:
    def test_head_rows_decoded_by_threshold(self, monkeypatch, config, vocabulary, synthetic_documents):
        decoded = []

        def fake_finetune(run_config, vocab, documents, checkpoint, plan):
            assert not run_config.FINETUNE_VARIANCE_LOSS and not run_config.RSF_ENABLED
            return None, None

        def fake_predict(model, documents, run_config, use_rfe=True, rsf=None, constraint=None):
            decoded.append((run_config.FINETUNE_RFE_INIT, use_rfe, rsf, constraint))
            return [prediction(d) for d in documents]

        monkeypatch.setattr(ablation_module, 'finetune_model', fake_finetune)
        monkeypatch.setattr(ablation_module, 'predict_corpus', fake_predict)
        runner = AblationRunner(config, vocabulary, [], synthetic_documents, synthetic_documents)
        monkeypatch.setattr(runner, 'pretrained', lambda tasks, seed: 'pretrain.geol')
        runner.run_heads([0, 1])

        table = summarize(runner.rows)
        assert table['setting'].tolist() == [f'crp={crp} rfe={rfe}' for crp, rfe in HEAD_GRID]
        assert (table['seeds'] == 2).all()
        assert len(decoded) == 12
        assert all(rsf is False and constraint is False for _, _, rsf, constraint in decoded)
        assert all(use_rfe == (rfe != 'none') for rfe, use_rfe, _, _ in decoded)


class TestRestrictedFatherPrecision:
    def test_not_below_threshold_only_on_multi_father_son(self):
        # son 3 has gold fathers 0 and 1; 2 is a wrong father above 0.5
        segments = tuple(TextSegment(k, (Word('field', BBox(10 + 80 * k, 10, 70 + 80 * k, 22)),)) for k in range(4))
        document = Document('multi', segments, frozenset({(0, 3), (1, 3)}))
        r1 = np.full((4, 4), 0.1)
        r1[3, :3] = [0.9, 0.8995, 0.6]
        rsf, threshold = decode_rsf(r1, doc_id='multi'), decode_rsf(r1, enabled=False, doc_id='multi')
        predicted = Prediction('multi', gold_tags(document), RelationMatrix(r1), None, rsf, threshold)

        report = evaluate([predicted], [document])
        p, r, f1 = relation_scores([predicted], [document], 'thresholded')
        assert rsf.links <= threshold.links
        assert report.re_precision == 1.0
        assert p == pytest.approx(2 / 3)
        assert report.re_f1 >= f1


class TestAblationTables:
    def test_grid_sizes(self):
        assert len(TASK_GRID) == 8
        assert all(t.mvlm for t in TASK_GRID)
        assert len(HEAD_GRID) == 6
        assert len(RSF_GRID) == 4

    def test_summarize(self):
        rows = [
            {'table': 'rsf', 'setting': 'on', 'seed': 0, 'precision': 0.8, 'recall': 0.6, 'f1': 0.7},
            {'table': 'rsf', 'setting': 'on', 'seed': 1, 'precision': 0.6, 'recall': 0.6, 'f1': 0.5},
            {'table': 'rsf', 'setting': 'off', 'seed': 0, 'precision': 0.5, 'recall': 0.5, 'f1': 0.5},
        ]
        table = summarize(rows)
        assert table['setting'].tolist() == ['on', 'off']
        on = table.iloc[0]
        assert on['seeds'] == 2
        assert on['f1_mean'] == pytest.approx(0.6)
        assert on['precision_std'] == pytest.approx(np.std([0.8, 0.6], ddof=1))
        assert table.iloc[1]['f1_std'] == 0.0
        assert '[rsf]' in summary_text(table)

    def test_summarize_empty(self):
        assert summarize([]).empty


class TestReport:
    def test_metrics_file_round_trip(self, tmp_path):
        report = MetricsReport(re_precision=0.5, re_recall=0.25, extra={'re_threshold.f1': 0.3},
                               counts={'documents': 3}, metadata={'config_hash': 'abc', 'seed': 0})
        path = report.save(str(tmp_path / 'evaluate.txt'))
        loaded = MetricsReport.load(path)
        assert loaded.re_f1 == pytest.approx(harmonic_f1(0.5, 0.25), abs=1e-6)
        assert loaded.extra == {'re_threshold.f1': pytest.approx(0.3)}
        assert loaded.counts == {'documents': 3}
        assert loaded.metadata['config_hash'] == 'abc'

    def test_text_is_sorted_and_stable(self):
        text = MetricsReport(re_precision=1.0, re_recall=0.5).to_text()
        assert text == MetricsReport(re_precision=1.0, re_recall=0.5).to_text()
        keys = [line.split('=')[0] for line in text.strip().splitlines()]
        assert keys == sorted(keys)

    def test_mixed_hashes_refused(self):
        reports = {'a': MetricsReport(metadata={'config_hash': 'aaa'}),
                   'b': MetricsReport(metadata={'config_hash': 'bbb'})}
        with pytest.raises(ConfigMismatchError):
            check_hashes(reports)

    def test_single_hash(self):
        reports = {'a': MetricsReport(metadata={'config_hash': 'aaa'}), 'b': MetricsReport()}
        assert check_hashes(reports, 'aaa') == 'aaa'
        with pytest.raises(ConfigMismatchError):
            check_hashes(reports, 'zzz')

    def test_collect_and_frame(self, tmp_path):
        MetricsReport(re_precision=1.0, re_recall=1.0, counts={'documents': 2}).save(str(tmp_path / 'evaluate.txt'))
        MetricsReport(probe_acc=0.4).save(str(tmp_path / 'probe.txt'))
        reports = collect_metrics(str(tmp_path))
        assert list(reports) == ['evaluate', 'probe']
        frame = metrics_frame(reports)
        assert set(frame['source']) == {'evaluate', 'probe'}
        assert frame.loc[frame['key'] == 'count.documents', 'value'].item() == 2.0


class TestGradientChecks:
    def test_every_component_passes(self):
        results = run_grad_checks(eps=1e-5, max_coords=40, seed=0)
        failing = {name: error for name, error in results.items() if error >= 1e-4}
        assert not failing
        assert {'op.cross_entropy', 'head.rfe', 'layer.layout_encoder'} <= set(results)
        assert {'op.sigmoid', 'op.mean', 'op.concat', 'op.attention', 'loss.variance'} <= set(results)
