"""Model checkpoint file format

    magic "AMML" | version u16 | loss u8 (index in `LOSSES`) | parameter count u32
    | per parameter: id (u32 length + UTF-8) | partition u8 | rank u32 | dims u32 each
      | values (little-endian float64, row-major) | mask (packed bits, big bit order, zero padded)
"""
from pathlib import Path

import numpy as np

from altermoma_lab import log
from altermoma_lab.fusion_model import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from altermoma_lab.fusion_model.models.arch import LOSSES, ArchConfig
from altermoma_lab.fusion_model.models.model import FusionModel
from altermoma_lab.fusion_model.models.parameter import Parameter
from altermoma_lab.fusion_model.models.partition import Partition
from altermoma_lab.tensor_core.models.tensor import Tensor
from altermoma_lab.utils.binary import BinaryReader, BinaryWriter
from altermoma_lab.utils.exceptions import CorruptFileError


def dumps(model: FusionModel) -> bytes:
    writer = BinaryWriter()
    writer.raw(CHECKPOINT_MAGIC)
    writer.u16(CHECKPOINT_VERSION)
    writer.u8(LOSSES.index(model.loss_kind))
    writer.u32(len(model.parameters))
    for parameter in model.parameters.values():
        writer.text(parameter.id)
        writer.u8(parameter.partition.code)
        writer.u32(len(parameter.values.shape))
        for dim in parameter.values.shape:
            writer.u32(dim)
        writer.floats(parameter.values.data)
        writer.raw(np.packbits(parameter.mask.reshape(-1).astype(np.uint8)).tobytes())
    return writer.getvalue()


def loads(data: bytes) -> FusionModel:
    reader = BinaryReader(data)
    reader.magic(CHECKPOINT_MAGIC)
    version = reader.u16('the version')
    if version != CHECKPOINT_VERSION:
        raise CorruptFileError(f'Unsupported checkpoint version {version}', reader.offset - 2)
    loss_code = reader.u8('the loss')
    if loss_code >= len(LOSSES):
        raise CorruptFileError(f'Unknown loss code {loss_code}', reader.offset - 1)

    parameters = []
    for i in range(reader.u32('the parameter count')):
        start = reader.offset
        parameter_id = reader.text(f'the id of parameter {i}')
        code = reader.u8(f'the partition of {parameter_id}')
        if code >= len(Partition):
            raise CorruptFileError(f'Unknown partition code {code} for {parameter_id}', reader.offset - 1)
        rank = reader.u32(f'the rank of {parameter_id}')
        shape = tuple(reader.u32(f'the shape of {parameter_id}') for _ in range(rank))
        if not shape or any(d == 0 for d in shape):
            raise CorruptFileError(f'Invalid shape {shape} for {parameter_id}', start)
        values = reader.floats(shape, f'the values of {parameter_id}')
        size = values.size
        packed = np.frombuffer(reader.take((size + 7) // 8, f'the mask of {parameter_id}'), dtype=np.uint8)
        mask = np.unpackbits(packed, count=size).astype(np.float64).reshape(shape)
        parameters.append(Parameter(parameter_id, Partition.from_code(code), Tensor(values), mask))
    reader.finish()

    try:
        model = FusionModel(parameters, LOSSES[loss_code])
        log.debug(f'Checkpoint architecture: {infer_arch(model)}.')
    except ValueError as e:
        raise CorruptFileError(f'The checkpoint does not describe a fusion model: {e}')
    return model


def save_checkpoint(model: FusionModel, path: Path) -> None:
    if path.exists():
        log.warning(f'Overwriting the checkpoint {path}.')
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(model))
    log.info(f'Checkpoint of {model.n_parameters()} parameters written to {path}.')


def load_checkpoint(path: Path) -> FusionModel:
    """Read a checkpoint written by `save_checkpoint`. Values, masks and the loss are restored bit for bit.

    Raises
    ------
    CorruptFileError
        If the file is not a valid checkpoint, or its layers do not form the default fusion architecture; the
        message gives the byte offset when it is known.
    """
    return loads(path.read_bytes())


def infer_arch(model: FusionModel, seed: int = ArchConfig.seed) -> ArchConfig:
    """The `ArchConfig` whose build has the shapes of the given model.

    Raises
    ------
    ValueError
        If the two backbones do not share their hidden widths or the fusion head is not a 2-layer MLP.
    """
    lidar, camera, fusion = (model.layers(p) for p in Partition)
    hidden = [layer.fan_out for layer in lidar[:-1]]
    if [layer.fan_out for layer in camera[:-1]] != hidden or len(set(hidden)) > 1:
        raise ValueError('The backbones do not share a constant hidden width.')
    if not hidden or lidar[-1].fan_out != camera[-1].fan_out or len(fusion) != 2:
        raise ValueError('The model does not follow the default fusion architecture.')
    return ArchConfig(
        in_l=lidar[0].fan_in,
        in_c=camera[0].fan_in,
        hidden=hidden[0],
        n_hidden=len(hidden),
        feat=lidar[-1].fan_out,
        fusion_hidden=fusion[0].fan_out,
        out=fusion[1].fan_out,
        seed=seed,
        loss=model.loss_kind,
    )
