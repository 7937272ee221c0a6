from __future__ import annotations

from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd

from altermoma_lab.fusion_model.models.partition import Partition
from altermoma_lab.utils.exceptions import LedgerError
from altermoma_lab.utils.reports import write_csv, write_json

# signed first-order terms and the indicators derived from them
SIGNED = ['deci_term', 'reri_term', 'reri_mu_l0_term', 'reri_mu_c0_term']
INDICATORS = ['deci', 'reri', 'reri_mu_l0', 'reri_mu_c0']
COLUMNS = ['id', 'partition'] + INDICATORS + SIGNED + ['score', 'kept', 'method']


class ImportanceLedger:
    """Per-entry importance bookkeeping of a pruning run.

    An entry is a parameter element (`<parameter id>[<flat index>]`) or, in structured mode, an output channel
    (`<layer>/ch<index>`). Backbone entries carry one redundancy indicator (`reri`), fusion entries two
    (`reri_mu_l0` measured with the LiDAR masked, `reri_mu_c0` with the camera masked). Unused columns are NaN.
    """

    def __init__(self, table: pd.DataFrame, method: str = 'altermoma', structured: bool = False):
        missing = [c for c in ['id', 'partition'] if c not in table.columns]
        if missing:
            raise LedgerError(f'A ledger table needs the columns {missing}.')
        if table['id'].duplicated().any():
            raise LedgerError(f'Duplicated ledger ids: {table.loc[table["id"].duplicated(), "id"].tolist()[:10]}.')
        table = table.copy()
        for column in COLUMNS:
            if column not in table.columns:
                table[column] = np.nan
        table['method'] = method
        table['kept'] = table['kept'].astype(object)
        self.table = table[COLUMNS].set_index('id', drop=False).rename_axis(None)
        self.method = method
        self.structured = structured

    @classmethod
    def from_terms(
        cls,
        partitions: pd.Series,
        deci_terms: pd.Series,
        reri_mu_l0_terms: Optional[pd.Series] = None,
        reri_mu_c0_terms: Optional[pd.Series] = None,
        method: str = 'altermoma',
    ) -> ImportanceLedger:
        """Build an unstructured ledger from signed terms indexed by element id.

        `reri_mu_l0_terms` (LiDAR masked) feed the camera and fusion entries, `reri_mu_c0_terms` (camera masked)
        the LiDAR and fusion entries.
        """
        table = pd.DataFrame({'id': partitions.index, 'partition': partitions.values})
        table['deci_term'] = deci_terms.reindex(partitions.index).values
        if reri_mu_l0_terms is not None and reri_mu_c0_terms is not None:
            from_l0 = reri_mu_l0_terms.reindex(partitions.index).values
            from_c0 = reri_mu_c0_terms.reindex(partitions.index).values
            part = table['partition']
            table['reri_term'] = np.where(part == Partition.CAMERA.value, from_l0,
                                          np.where(part == Partition.LIDAR.value, from_c0, np.nan))
            fusion = part == Partition.FUSION.value
            table['reri_mu_l0_term'] = np.where(fusion, from_l0, np.nan)
            table['reri_mu_c0_term'] = np.where(fusion, from_c0, np.nan)
        ledger = cls(table, method)
        ledger.refresh_indicators()
        return ledger

    def refresh_indicators(self) -> None:
        """Indicators are the absolute values of the signed terms."""
        for signed, indicator in zip(SIGNED, INDICATORS):
            self.table[indicator] = self.table[signed].abs()

    @property
    def ids(self) -> pd.Index:
        return self.table.index

    def __len__(self) -> int:
        return len(self.table)

    def scores(self) -> pd.Series:
        return self.table['score'].astype(float)

    def set_scores(self, scores: pd.Series) -> None:
        missing = self.table.index.difference(scores.index)
        if len(missing):
            raise LedgerError(f'No score for the ids {missing.tolist()[:10]} ({len(missing)} in total).')
        self.table['score'] = scores.reindex(self.table.index).astype(float)

    def set_kept(self, keep: pd.Series) -> None:
        self.table['kept'] = keep.reindex(self.table.index).astype(bool)

    def kept_ids(self) -> List[str]:
        return self.table.index[self.table['kept'] == True].tolist()  # noqa: E712

    def to_frame(self) -> pd.DataFrame:
        return self.table.reset_index(drop=True)

    def write(self, csv_path: Path, json_path: Path, cfg_hash: str) -> None:
        frame = self.to_frame()
        write_csv(frame, csv_path, cfg_hash)
        write_json(frame, json_path)
