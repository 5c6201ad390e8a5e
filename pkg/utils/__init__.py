from .config import RunConfig, RmseSettings, load_run_config
from .logger import setup_logging

__all__ = [
    'RunConfig',
    'RmseSettings',
    'load_run_config',
    'setup_logging'
]
