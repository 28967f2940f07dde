"""
Deterministic result emission.

CSV files start with a ``#`` header block holding the package version, the
master seed and the full config as YAML; the numeric table follows. A JSON
sidecar carries the same config plus a summary. Nothing time-dependent is
written, so identical config and seed give byte-identical files.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import pandas as pd

from modules import __version__
from utils.error_handler import FileError
from utils.validator import ExperimentConfig, config_to_dict, dump_config, validate_file_path

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.10g"


def header_block(cfg: ExperimentConfig) -> str:
    lines = [f"zakdd {__version__}", f"experiment: {cfg.experiment}", f"seed: {cfg.seed}", "config:"]
    lines.extend("  " + line for line in dump_config(cfg).splitlines())
    return "".join(f"# {line}\n" for line in lines)


def _plain(value: Any) -> Any:
    """JSON-safe view of numpy scalars and arrays."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, complex):
        return {'re': value.real, 'im': value.imag}
    if isinstance(value, float) and not np.isfinite(value):
        return str(value)
    return value


def write_csv(frame: pd.DataFrame, path: Union[str, Path], cfg: ExperimentConfig) -> Path:
    """
    Write a result table with the config header.

    Raises:
        FileError: If the path cannot be written
    """
    p = validate_file_path(str(path))
    try:
        with open(p, 'w', encoding='utf-8', newline='') as f:
            f.write(header_block(cfg))
            frame.to_csv(f, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
    except OSError as e:
        raise FileError(f"Cannot write results to {p}: {e}", stage="output") from e
    logger.info(f"Wrote {len(frame)} rows to {p}")
    return p


def write_metadata(path: Union[str, Path], cfg: ExperimentConfig,
                   summary: Optional[Dict[str, Any]] = None) -> Path:
    """
    JSON sidecar with sorted keys: version, config and summary.

    Raises:
        FileError: If the path cannot be written
    """
    p = validate_file_path(str(path))
    document = {
        'version': __version__,
        'config': config_to_dict(cfg),
        'summary': _plain(summary or {}),
    }
    try:
        with open(p, 'w', encoding='utf-8', newline='') as f:
            json.dump(document, f, ensure_ascii=False, indent=2, sort_keys=True)
            f.write('\n')
    except OSError as e:
        raise FileError(f"Cannot write metadata to {p}: {e}", stage="output") from e
    return p


def metadata_path(csv_path: Union[str, Path]) -> Path:
    return Path(csv_path).with_suffix('.json')


def read_results(path: Union[str, Path]) -> pd.DataFrame:
    """Read a result CSV, skipping the header block."""
    try:
        return pd.read_csv(path, comment='#')
    except OSError as e:
        raise FileError(f"Cannot read results from {path}: {e}") from e
