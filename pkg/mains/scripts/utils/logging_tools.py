"""
Functions that implement and moderate logging throughout filter runs and flows.
"""

import os
import psutil
import logging
import warnings
from prefect import get_run_logger
from prefect.exceptions import MissingContextError

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(message)s"

def logging_setup(silence_packages: list[str] = None):
    """
    This FX is a boilerplate for setting up logging at the top 
    of all flows, tasks and numerical routines that require it.
    Inside a prefect flow/task the run logger is returned, 
    otherwise a plain 'mains' logger.
    """
    try:
        logger = get_run_logger()
    except MissingContextError:
        logging.basicConfig(level=logging.INFO, format=LOG_FORMAT)
        logger = logging.getLogger("mains")

    # redirect all warnings to the logger
    logging.captureWarnings(True)
    warnings.filterwarnings("ignore", category=UserWarning)

    # silence noisy packages
    silence_packages = silence_packages or ["matplotlib", "numba", "asyncio"]
    for pkg in silence_packages:
        logging.getLogger(pkg).setLevel(logging.WARNING)

    return logger

def log_memory_usage(stage: str):
    """
    Logs the RAM usage (RSS Memory) at its position in the pipeline.
    
    input:
        stage (str): A label for the stage in execution where memory is measured.
    """
    logger = logging_setup()
    process = psutil.Process(os.getpid())
    mem = process.memory_info().rss / (1024 ** 2)  # Convert bytes to MB
    logger.info(f"[MEMORY] RSS memory usage at {stage}: {mem:.2f} MB")
