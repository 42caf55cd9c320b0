"""
GeoLab - geometric pre-training laboratory
"""
import logging
import os
import sys
from logging.handlers import RotatingFileHandler
from typing import Optional

import click

__version__ = '0.1.0'

LOG_FORMAT = '%(asctime)s %(levelname)s: %(message)s [in %(pathname)s:%(lineno)d]'


def configure_logging(level: str = 'INFO', log_dir: Optional[str] = None) -> logging.Logger:
    """Console handler on stderr plus, when a run directory is known, logs/geolab.log"""
    logger = logging.getLogger('geolab')
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()
    level = getattr(logging, str(level).upper(), logging.INFO)
    logger.setLevel(level)
    logger.propagate = False

    console = logging.StreamHandler(sys.stderr)
    console.setFormatter(logging.Formatter('%(levelname)s %(name)s: %(message)s'))
    console.setLevel(level)
    logger.addHandler(console)

    if log_dir:
        os.makedirs(log_dir, exist_ok=True)
        file_handler = RotatingFileHandler(os.path.join(log_dir, 'geolab.log'),
                                           maxBytes=10240000, backupCount=10)
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        file_handler.setLevel(level)
        logger.addHandler(file_handler)
    return logger


def create_cli() -> click.Group:
    """Create the command-line interface with factory pattern"""
    from geolab.commands.context import RunContext

    @click.group(context_settings={'help_option_names': ['-h', '--help']})
    @click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None,
                  help='KEY=value experiment file')
    @click.option('--profile', default='desk', show_default=True,
                  type=click.Choice(['desk', 'smoke', 'testing', 'default']), help='Built-in defaults')
    @click.option('--seed', type=int, default=None, help='Master seed (SEED)')
    @click.option('--jobs', type=int, default=None, help='Worker processes for per-document work (JOBS)')
    @click.option('--out', 'out_dir', type=click.Path(file_okay=False), default=None, help='Run directory (OUT_DIR)')
    @click.option('--force', is_flag=True, help='Rerun completed stages and accept config mismatches')
    @click.option('--log-level', default=None, type=click.Choice(['DEBUG', 'INFO', 'WARNING', 'ERROR'],
                                                                  case_sensitive=False))
    @click.option('--set', 'settings', multiple=True, metavar='KEY=VALUE', help='Override one config key')
    @click.version_option(__version__, prog_name='geolab')
    @click.pass_context
    def cli(ctx, config_path, profile, seed, jobs, out_dir, force, log_level, settings):
        """Geometric pre-training lab for document relation extraction"""
        ctx.obj = RunContext(config_path, profile, seed, jobs, out_dir, force, log_level, settings)

    # Register command groups
    from geolab.commands.analysis import commands as analysis_commands
    from geolab.commands.data import commands as data_commands
    from geolab.commands.training import commands as training_commands

    for command in data_commands + training_commands + analysis_commands:
        cli.add_command(command)

    return cli
