"""
GeoLab - Configuration and Run Artifact Tests
"""
import json

import numpy as np
import pandas as pd
import pytest

from config.config import DeskConfig, get_config, load_config
from geolab.services.artifact_service import RunArtifacts
from geolab.utils.errors import ConfigError, ConfigMismatchError, LabelError, MissingArtifactError
from geolab.utils.helpers import FORMAT_VERSION


class TestLoadConfig:
    def test_testing_profile(self, config):
        assert config.profile == 'testing'
        assert config.dtype is np.float64
        assert config.fewshot_shots == [1, 2]

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            load_config(profile='testing', overrides={'PRETRAIN_EPOCH': 3})

    def test_unknown_profile(self):
        with pytest.raises(ConfigError):
            load_config(profile='laptop')

    def test_values_coerced_by_default_type(self):
        config = load_config(profile='testing', overrides={'pretrain-epochs': '4', 'RSF_TAU': '0.01'})
        assert config.PRETRAIN_EPOCHS == 4
        assert config.RSF_TAU == pytest.approx(0.01)

    @pytest.mark.parametrize('raw, expected', [('off', False), ('TRUE', True), ('1', True), ('no', False)])
    def test_booleans(self, raw, expected):
        assert load_config(profile='testing', overrides={'PRETRAIN_DDE': raw}).PRETRAIN_DDE is expected

    @pytest.mark.parametrize('key, raw', [('PRETRAIN_DDE', 'maybe'), ('PRETRAIN_EPOCHS', 'three'),
                                          ('FINETUNE_INIT', 'warm'), ('MODEL_HEADS', '3'),
                                          ('GRADCHECK_EPS', '0.01'), ('FEWSHOT_SHOTS', '1,x')])
    def test_invalid_values(self, key, raw):
        with pytest.raises(ConfigError):
            load_config(profile='testing', overrides={key: raw})

    def test_file_then_overrides(self, tmp_path):
        path = tmp_path / 'experiment.env'
        path.write_text('# desk run\nMODEL_HIDDEN=16\nPRETRAIN_EPOCHS=5\n')
        config = load_config(str(path), 'testing', {'PRETRAIN_EPOCHS': 7})
        assert config.MODEL_HIDDEN == 16
        assert config.PRETRAIN_EPOCHS == 7

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(str(tmp_path / 'absent.env'), 'testing')

    def test_hash_ignores_plumbing_keys(self, config):
        plumbing = config.replace(JOBS=4, OUT_DIR='elsewhere', LOG_LEVEL='DEBUG')
        assert plumbing.config_hash() == config.config_hash()
        assert config.replace(SEED=1).config_hash() != config.config_hash()
        assert config.replace(PRETRAIN_LR=1e-4).config_hash() != config.config_hash()

    def test_unknown_name_falls_back_to_desk(self):
        assert get_config('nonexistent') is DeskConfig


class TestRunStages:
    def test_completed_stage_is_skipped(self, artifacts):
        calls = []

        def produce():
            calls.append(1)
            return {'outputs': {'thing': 'a.txt'}, 'count': 3}

        first = artifacts.run_stage('corpus', produce)
        second = artifacts.run_stage('corpus', produce)
        assert len(calls) == 1
        assert first['skipped'] is False and second['skipped'] is True
        assert second['result'] == {'count': 3}
        assert second['outputs'] == {'thing': 'a.txt'}

    def test_force_and_rerun(self, artifacts, config):
        calls = []
        artifacts.run_stage('report', lambda: calls.append(1))
        artifacts.run_stage('report', lambda: calls.append(1), rerun=True)
        RunArtifacts(artifacts.root, config, force=True).run_stage('report', lambda: calls.append(1))
        assert len(calls) == 3

    def test_other_config_refused_without_force(self, artifacts, config):
        artifacts.run_stage('corpus', lambda: {})
        changed = config.replace(SEED=5)
        with pytest.raises(ConfigMismatchError):
            RunArtifacts(artifacts.root, changed).run_stage('corpus', lambda: {})
        payload = RunArtifacts(artifacts.root, changed, force=True).run_stage('corpus', lambda: {})
        assert payload['config_hash'] == changed.config_hash()

    def test_failed_stage_is_recorded_and_retried(self, artifacts):
        def broken():
            raise LabelError('bad labels')

        with pytest.raises(LabelError):
            artifacts.run_stage('labels', broken)
        with open(artifacts.stage_path('labels')) as fh:
            record = json.load(fh)
        assert record['status'] == 'error'
        assert record['error_details'] == 'bad labels'
        assert artifacts.run_stage('labels', lambda: {})['skipped'] is False

    def test_require_stage(self, artifacts, config):
        with pytest.raises(MissingArtifactError) as excinfo:
            artifacts.require_stage('pretrain')
        assert excinfo.value.producer == 'pretrain'
        artifacts.run_stage('labels', lambda: {})
        assert artifacts.require_stage('labels').completed
        with pytest.raises(ConfigMismatchError):
            RunArtifacts(artifacts.root, config.replace(PRETRAIN_DDE=False)).require_stage('labels')

    def test_require_names_producer(self, artifacts):
        with pytest.raises(MissingArtifactError) as excinfo:
            artifacts.require(artifacts.vocab_path, 'gen-corpus')
        assert '`geolab gen-corpus`' in str(excinfo.value)
        assert excinfo.value.artifact == 'vocab.json'

    def test_completed_stages(self, artifacts):
        artifacts.run_stage('corpus', lambda: {})
        artifacts.run_stage('labels', lambda: {})
        assert [r.stage for r in artifacts.completed_stages()] == ['corpus', 'labels']

    def test_metadata(self, artifacts, config):
        meta = artifacts.metadata({'stage': 'unit'})
        assert meta['config_hash'] == config.config_hash()
        assert meta['seed'] == config.SEED
        assert meta['stage'] == 'unit'

    def test_unexpected_failure_is_recorded(self, artifacts):
        def broken():
            raise ValueError('labels out of shape')

        with pytest.raises(ValueError):
            artifacts.run_stage('labels', broken)
        record = artifacts.load_record('labels')
        assert record.status == 'error'
        assert 'labels out of shape' in record.error_details
        assert artifacts.run_stage('labels', lambda: {})['skipped'] is False

    def test_stamp_adds_metadata_columns(self, artifacts, config):
        frame = artifacts.stamp(pd.DataFrame({'seed': [0, 1], 'f1': [0.5, 0.25]}))
        assert list(frame.columns) == ['seed', 'f1', 'config_hash', 'master_seed', 'format_version']
        assert frame['seed'].tolist() == [0, 1]
        assert set(frame['config_hash']) == {config.config_hash()}
        assert set(frame['master_seed']) == {config.SEED}
        assert set(frame['format_version']) == {FORMAT_VERSION}
