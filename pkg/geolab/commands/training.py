"""
GeoLab - Training Commands
Pre-training, fine-tuning and gradient verification
"""
import logging

import click

from config.config import INIT_CHOICES
from geolab.services.finetune_service import finetune_service
from geolab.services.gradcheck_service import gradcheck_service
from geolab.services.pretrain_service import pretrain_service
from geolab.utils.decorators import cli_response, log_stage
from geolab.utils.errors import NumericError

logger = logging.getLogger(__name__)


@click.command('pretrain')
@click.pass_obj
@cli_response
@log_stage('pretrain')
def pretrain(run):
    """Pre-train the encoder and heads on the enabled geometric tasks"""
    config, artifacts = run.config, run.artifacts
    return artifacts.run_stage('pretrain', lambda: pretrain_service.run(config, artifacts))


@click.command('finetune')
@click.option('--init', 'init_flag', type=click.Choice(INIT_CHOICES), default=None,
              help='Initialization of encoder and relation heads (default FINETUNE_INIT)')
@click.pass_obj
@cli_response
@log_stage('finetune')
def finetune(run, init_flag):
    """Fine-tune entity labelling and relation extraction on the fine-tune split"""
    config, artifacts = run.config, run.artifacts
    return artifacts.run_stage('finetune', lambda: finetune_service.run(config, artifacts, init_flag))


@click.command('grad-check')
@click.pass_obj
@cli_response
@log_stage('grad-check')
def grad_check(run):
    """Finite-difference check of every layer and head in float64"""
    config, artifacts = run.config, run.artifacts
    record = artifacts.run_stage('grad-check', lambda: gradcheck_service.run(config, artifacts), rerun=True)
    failed = record['result'].get('failed') or []
    if failed:
        raise NumericError(f"gradient check above {config.GRADCHECK_TOLERANCE} for {', '.join(failed)}",
                           record['outputs'].get('metrics'))
    return record


commands = [pretrain, finetune, grad_check]
