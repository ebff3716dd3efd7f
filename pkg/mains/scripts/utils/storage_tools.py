"""
Here are functions for saving and loading run artifacts (xarray datasets as
zarr stores, tables as CSV) with fail-proof safety nets: everything is written
into a temporary directory first and moved into place only once complete.
"""

import os
import time
import shutil
import tempfile
from pathlib import Path

import pandas as pd
import xarray as xr
# custom fxs
from scripts.utils.errors import DatasetError
from scripts.utils.logging_tools import logging_setup

MAX_RETRIES = 3
DELAY_BETWEEN_RETRIES = 1  # seconds


def _move_into_place(tmp_path: Path, target: Path):
    """ replaces target with tmp_path, retrying transient filesystem errors """
    logger = logging_setup()
    for attempt in range(1, MAX_RETRIES + 1):
        try:
            if target.is_dir():
                shutil.rmtree(target)
            elif target.exists():
                target.unlink()
            shutil.move(str(tmp_path), str(target))
            return target
        except OSError as e:
            logger.warning(f"Moving {tmp_path.name} to {target} failed (attempt {attempt}): {e}")
            if attempt == MAX_RETRIES:
                logger.error(f"Final failure writing {target}")
                raise
            time.sleep(DELAY_BETWEEN_RETRIES)


def save_zarr_dataset(ds: xr.Dataset, path):
    """
    Saves an xarray Dataset as a consolidated zarr store at path.

    Parameters:
    - ds (xr.Dataset): dataset to store (loaded into memory first)
    - path (str | Path): target directory, replaced if it exists
    """
    logger = logging_setup()
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    tmpdir = tempfile.mkdtemp(dir=target.parent)
    try:
        zarr_path = Path(tmpdir) / target.name
        ds.load().to_zarr(zarr_path, mode="w", consolidated=True)
        _move_into_place(zarr_path, target)
        logger.info(f"Zarr dataset written to {target}")
    finally:
        try:
            shutil.rmtree(tmpdir, ignore_errors=True)
        except Exception as e:
            logger.warning(f"Tmpdir cleanup failed: {e}")
    return target


def load_zarr_dataset(path) -> xr.Dataset:
    """ opens a zarr store written by save_zarr_dataset and loads it into memory """
    path = Path(path)
    if not path.exists():
        raise DatasetError("zarr store not found", path)
    try:
        with xr.open_zarr(path, consolidated=True) as ds:
            return ds.load()
    except (ValueError, KeyError, OSError) as e:
        raise DatasetError(f"not a readable zarr store: {e}", path) from e


def save_table(table: pd.DataFrame, path):
    """ writes a CSV table atomically (temporary file in the same directory, then moved) """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(suffix=".csv", dir=target.parent)
    os.close(fd)
    try:
        table.to_csv(tmp_name, index=False)
        _move_into_place(Path(tmp_name), target)
    finally:
        if os.path.exists(tmp_name):
            os.remove(tmp_name)
    return target
