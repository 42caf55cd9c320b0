"""
GeoLab - Command Context
Resolves global flags into one experiment config and run directory per invocation
"""
import logging
from typing import Optional, Sequence

from config.config import load_config
from geolab import configure_logging
from geolab.services.artifact_service import RunArtifacts
from geolab.utils.errors import ConfigError

logger = logging.getLogger(__name__)


def parse_settings(settings: Sequence[str]) -> dict:
    overrides = {}
    for item in settings:
        key, sep, value = item.partition('=')
        if not sep or not key.strip():
            raise ConfigError(f"--set {item!r}: expected KEY=VALUE")
        overrides[key.strip()] = value.strip()
    return overrides


class RunContext:
    """Lazily loaded (config, artifacts); errors surface inside the wrapped subcommand"""

    def __init__(self, config_path: Optional[str], profile: str, seed: Optional[int], jobs: Optional[int],
                 out_dir: Optional[str], force: bool, log_level: Optional[str], settings: Sequence[str] = ()):
        self.config_path = config_path
        self.profile = profile
        self.force = force
        self.settings = tuple(settings)
        self.flags = {'SEED': seed, 'JOBS': jobs, 'OUT_DIR': out_dir, 'LOG_LEVEL': log_level}
        self._config = None
        self._artifacts = None

    @property
    def config(self):
        if self._config is None:
            overrides = parse_settings(self.settings)
            overrides.update({k: v for k, v in self.flags.items() if v is not None})
            self._config = load_config(self.config_path, self.profile, overrides)
        return self._config

    @property
    def artifacts(self) -> RunArtifacts:
        if self._artifacts is None:
            config = self.config
            self._artifacts = RunArtifacts(config.OUT_DIR, config, self.force)
            configure_logging(config.LOG_LEVEL, self._artifacts.logs_dir)
            logger.info(f"Run {self._artifacts.root} config {self._artifacts.config_hash[:12]} seed {config.SEED}")
        return self._artifacts
