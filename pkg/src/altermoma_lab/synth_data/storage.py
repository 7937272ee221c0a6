"""Dataset file format

    magic "AMDS" | version u16 | n, d_l, d_c, d_y, d_l_aux, d_c_aux, d_shared, d_cam_only (u32 each)
    | metadata (u32 length + UTF-8 JSON: generation parameters and seed)
    | x_l, x_c, y, y_l_aux, y_c_aux, z_s, z_c (little-endian float64, row-major)
"""
import dataclasses
import json
from pathlib import Path

from dataclass_wizard import fromdict
from dataclass_wizard.errors import JSONWizardError

from altermoma_lab import log
from altermoma_lab.synth_data import DATASET_MAGIC, DATASET_VERSION
from altermoma_lab.synth_data.models.config import GenConfig
from altermoma_lab.synth_data.models.dataset import ARRAYS, MultiModalDataset
from altermoma_lab.utils.binary import BinaryReader, BinaryWriter
from altermoma_lab.utils.exceptions import CorruptFileError


def dumps(ds: MultiModalDataset) -> bytes:
    writer = BinaryWriter()
    writer.raw(DATASET_MAGIC)
    writer.u16(DATASET_VERSION)
    for dim in [ds.n, ds.x_l.shape[1], ds.x_c.shape[1], ds.y.shape[1], ds.y_l_aux.shape[1], ds.y_c_aux.shape[1],
                ds.z_s.shape[1], ds.z_c.shape[1]]:
        writer.u32(dim)
    metadata = {
        'gen_config': None if ds.gen_config is None else dataclasses.asdict(ds.gen_config),
        'seed': ds.seed,
    }
    writer.text(json.dumps(metadata, sort_keys=True))
    for name in ARRAYS:
        writer.floats(getattr(ds, name))
    return writer.getvalue()


def loads(data: bytes) -> MultiModalDataset:
    reader = BinaryReader(data)
    reader.magic(DATASET_MAGIC)
    version = reader.u16('the version')
    if version != DATASET_VERSION:
        raise CorruptFileError(f'Unsupported dataset version {version}', reader.offset - 2)
    n, *widths = [reader.u32(f'dimension {i}') for i in range(8)]

    start = reader.offset
    try:
        metadata = json.loads(reader.text('the metadata'))
        gen_config = None if metadata['gen_config'] is None else fromdict(GenConfig, metadata['gen_config'])
        seed = metadata['seed']
    except CorruptFileError:
        raise
    except (ValueError, KeyError, TypeError, JSONWizardError) as e:
        raise CorruptFileError(f'Invalid dataset metadata ({e})', start)

    arrays = {name: reader.floats((n, width), name) for name, width in zip(ARRAYS, widths)}
    reader.finish()
    return MultiModalDataset(**arrays, gen_config=gen_config, seed=seed)


def save_dataset(ds: MultiModalDataset, path: Path) -> None:
    if path.exists():
        log.warning(f'Overwriting the dataset file {path}.')
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(ds))
    log.info(f'Dataset of {ds.n} samples written to {path}.')


def load_dataset(path: Path) -> MultiModalDataset:
    """Read a dataset file.

    Raises
    ------
    CorruptFileError
        If the magic number or version is wrong or the file is truncated; the message gives the byte offset.
    """
    return loads(path.read_bytes())
