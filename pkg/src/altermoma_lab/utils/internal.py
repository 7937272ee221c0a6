"""Internal module
Mainly used for generating the configuration and logger objects.

The name of the environment variables are defined here (See `AlterMomaEnvironmentVariables`)
"""
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple


@dataclass
class AlterMomaEnvironmentVariables:
    log_level: str = 'ALTERMOMA_LAB_LOG_LEVEL'
    workers: str = 'ALTERMOMA_LAB_WORKERS'


@dataclass
class AlterMomaLogging:
    level: str


@dataclass
class AlterMomaRuntime:
    workers: int  # worker threads used by seed sweeps


@dataclass
class AlterMomaConfig:
    env: AlterMomaEnvironmentVariables
    log: AlterMomaLogging
    runtime: AlterMomaRuntime


def init_config_and_logger() -> Tuple[AlterMomaConfig, logging.Logger]:
    environment_variables = AlterMomaEnvironmentVariables()
    workers = int(os.getenv(environment_variables.workers, 1))
    if workers < 1:
        raise ValueError(f'{environment_variables.workers} must be at least 1 ({workers} given).')

    config = AlterMomaConfig(
        env=environment_variables,
        log=AlterMomaLogging(level=os.getenv(environment_variables.log_level, 'info').upper()),
        runtime=AlterMomaRuntime(workers=workers),
    )

    logger = logging.getLogger('altermoma_lab')
    if logger.handlers:
        return config, logger

    fmt = "%(asctime)s %(name)s [%(levelname)s] %(message)s"

    formatter = logging.Formatter(fmt)
    console_handler = logging.StreamHandler()
    console_handler.setFormatter(formatter)

    logger.setLevel(config.log.level)
    logger.addHandler(console_handler)

    return config, logger


def add_file_handler(logger: logging.Logger, file: Path, level: str) -> logging.FileHandler:
    """Duplicate the console output of the package logger into a file.

    Parameters
    ----------
    logger : logging.Logger
        The package logger, its first handler provides the formatter.
    file : Path
        The log file, created with its parent folders when missing.
    level : str
        The level of the new handler.

    Returns
    -------
    logging.FileHandler
        The handler that has been attached.
    """
    file.parent.mkdir(parents=True, exist_ok=True)
    file_handler = logging.FileHandler(file, encoding='utf-8')
    file_handler.setFormatter(logger.handlers[0].formatter)
    file_handler.setLevel(level.upper())
    logger.addHandler(file_handler)
    return file_handler
