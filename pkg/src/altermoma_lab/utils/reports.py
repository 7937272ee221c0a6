"""Tabular outputs

Every CSV ends with a `# config-hash: <md5>` line so that a table can be traced back to the configuration that
produced it. Floats are written with 17 significant digits, which round-trips float64 exactly.
"""
import json
from pathlib import Path
from typing import Optional

import pandas as pd
from tabulate import tabulate

from altermoma_lab import log

FLOAT_FORMAT = '%.17g'
HASH_PREFIX = '# config-hash: '


def write_csv(df: pd.DataFrame, path: Path, cfg_hash: str) -> None:
    if path.exists():
        log.warning(f'Overwriting {path}.')
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', encoding='utf-8', newline='') as f:
        df.to_csv(f, index=False, float_format=FLOAT_FORMAT)
        f.write(f'{HASH_PREFIX}{cfg_hash}\n')
    log.debug(f'{len(df)} rows written to {path}.')


def read_csv(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, comment='#')


def read_config_hash(path: Path) -> Optional[str]:
    """The configuration hash of a CSV written by `write_csv`, None if the file has none."""
    last = path.read_text(encoding='utf-8').rstrip('\n').rsplit('\n', 1)[-1]
    return last[len(HASH_PREFIX):] if last.startswith(HASH_PREFIX) else None


def write_json(df: pd.DataFrame, path: Path) -> None:
    """One JSON record per row, missing values as null."""
    path.parent.mkdir(parents=True, exist_ok=True)
    records = df.astype(object).where(df.notna(), None).to_dict(orient='records')
    path.write_text(json.dumps(records, indent=1), encoding='utf-8')


def pretty_table(df: pd.DataFrame) -> str:
    return tabulate(df, headers='keys', tablefmt='rounded_outline', showindex=False)
