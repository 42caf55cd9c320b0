"""
GeoLab - Analysis Commands
Evaluation, probing, ablations, few-shot curves and the run report
"""
import logging

import click

from geolab.services.ablation_service import GRIDS, ablation_service
from geolab.services.evaluation_service import evaluation_service
from geolab.services.report_service import report_service
from geolab.utils.decorators import cli_response, log_stage

logger = logging.getLogger(__name__)


@click.command('evaluate')
@click.option('--no-rsf', is_flag=True, help='Plain 0.5 threshold instead of relation score filtering')
@click.option('--constraint', is_flag=True, help='Apply the geometric constraint filter after decoding')
@click.pass_obj
@cli_response
@log_stage('evaluate')
def evaluate(run, no_rsf, constraint):
    """Decode the test split with the fine-tuned model and score it"""
    config, artifacts = run.config, run.artifacts
    rsf = False if no_rsf else None
    constraint = True if constraint else None
    name = '-'.join(['evaluate'] + (['no-rsf'] if no_rsf else []) + (['constraint'] if constraint else []))
    return artifacts.run_stage(name, lambda: evaluation_service.run_evaluate(config, artifacts, rsf, constraint,
                                                                             name=name))


@click.command('probe')
@click.pass_obj
@cli_response
@log_stage('probe')
def probe(run):
    """Linear direction probe on the frozen pre-trained encoder against a random encoder"""
    config, artifacts = run.config, run.artifacts
    return artifacts.run_stage('probe', lambda: evaluation_service.run_probe(config, artifacts))


@click.command('ablate')
@click.option('--grid', type=click.Choice(GRIDS), default='all', show_default=True)
@click.pass_obj
@cli_response
@log_stage('ablate')
def ablate(run, grid):
    """Task, head-initialization and decoding ablations averaged over ABLATE_SEEDS"""
    config, artifacts = run.config, run.artifacts
    stage = 'ablate' if grid == 'all' else f'ablate-{grid}'
    return artifacts.run_stage(stage, lambda: ablation_service.run(config, artifacts, grid))


@click.command('few-shot')
@click.pass_obj
@cli_response
@log_stage('few-shot')
def few_shot(run):
    """Relation F1 against the number of fine-tuning documents"""
    config, artifacts = run.config, run.artifacts
    return artifacts.run_stage('few-shot', lambda: evaluation_service.run_few_shot(config, artifacts))


@click.command('report')
@click.pass_obj
@cli_response
def report(run):
    """Collect metrics, curves and tables into report/"""
    config, artifacts = run.config, run.artifacts
    return artifacts.run_stage('report', lambda: report_service.run(config, artifacts), rerun=True)


commands = [evaluate, probe, ablate, few_shot, report]
