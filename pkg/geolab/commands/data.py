"""
GeoLab - Data Commands
Corpus generation and label preparation
"""
import logging

import click

from config.config import LINK_ORDER_CHOICES
from geolab.services.corpus_service import corpus_service
from geolab.services.label_service import label_service
from geolab.utils.decorators import cli_response, log_stage

logger = logging.getLogger(__name__)


@click.command('gen-corpus')
@click.option('--funsd', 'funsd_dir', type=click.Path(exists=True, file_okay=False), default=None,
              help='FUNSD root; its training/testing data replace the synthetic fine-tune and test splits')
@click.option('--link-order', type=click.Choice(LINK_ORDER_CHOICES), default=None,
              help='Orientation of FUNSD linking pairs (default FUNSD_LINK_ORDER)')
@click.pass_obj
@cli_response
@log_stage('gen-corpus')
def gen_corpus(run, funsd_dir, link_order):
    """Generate the pre-training, fine-tuning and test corpora and the vocabulary"""
    config, artifacts = run.config, run.artifacts
    return artifacts.run_stage('corpus', lambda: corpus_service.build(config, artifacts, funsd_dir, link_order))


@click.command('prepare-labels')
@click.pass_obj
@cli_response
@log_stage('prepare-labels')
def prepare_labels(run):
    """Sample and label the pre-training tasks for every pre-training document"""
    config, artifacts = run.config, run.artifacts

    def prepare():
        artifacts.require_stage('corpus')
        documents = corpus_service.load_split(artifacts, 'pretrain')
        vocabulary = corpus_service.load_vocabulary(artifacts)
        return label_service.prepare(documents, vocabulary, config, artifacts)

    return artifacts.run_stage('labels', prepare)


commands = [gen_corpus, prepare_labels]
