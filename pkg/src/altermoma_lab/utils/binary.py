"""Little-endian primitives shared by the checkpoint and dataset file formats."""
import struct
from typing import List, Tuple

import numpy as np

from altermoma_lab.utils.exceptions import CorruptFileError


class BinaryWriter:
    def __init__(self):
        self._chunks: List[bytes] = []

    def raw(self, data: bytes) -> None:
        self._chunks.append(data)

    def u8(self, value: int) -> None:
        self._chunks.append(struct.pack('<B', value))

    def u16(self, value: int) -> None:
        self._chunks.append(struct.pack('<H', value))

    def u32(self, value: int) -> None:
        self._chunks.append(struct.pack('<I', value))

    def text(self, value: str) -> None:
        """UTF-8 string preceded by its byte length (u32)."""
        encoded = value.encode('utf-8')
        self.u32(len(encoded))
        self.raw(encoded)

    def floats(self, values: np.ndarray) -> None:
        self.raw(np.ascontiguousarray(values, dtype='<f8').tobytes())

    def getvalue(self) -> bytes:
        return b''.join(self._chunks)


class BinaryReader:
    """Sequential reader raising `CorruptFileError` with the byte offset of the first unreadable field."""

    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.data):
            raise CorruptFileError(f'Truncated file while reading {what}', self.offset)
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def u8(self, what: str) -> int:
        return struct.unpack('<B', self.take(1, what))[0]

    def u16(self, what: str) -> int:
        return struct.unpack('<H', self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack('<I', self.take(4, what))[0]

    def text(self, what: str) -> str:
        start = self.offset
        raw = self.take(self.u32(f'the length of {what}'), what)
        try:
            return raw.decode('utf-8')
        except UnicodeDecodeError:
            raise CorruptFileError(f'Invalid UTF-8 in {what}', start)

    def floats(self, shape: Tuple[int, ...], what: str) -> np.ndarray:
        count = int(np.prod(shape, dtype=np.int64))
        raw = self.take(8 * count, what)
        return np.frombuffer(raw, dtype='<f8').astype(np.float64).reshape(shape)

    def magic(self, expected: bytes) -> None:
        found = self.take(len(expected), 'the magic number')
        if found != expected:
            raise CorruptFileError(f'Bad magic number {found!r}, expected {expected!r}', 0)

    def finish(self) -> None:
        if self.offset != len(self.data):
            raise CorruptFileError(f'{len(self.data) - self.offset} unexpected trailing bytes', self.offset)
