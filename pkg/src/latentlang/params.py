"""Named parameter collections and their on-disk checkpoint format.

Checkpoints are written as a flat little-endian binary stream:

    magic b"L3CK" | u32 version | repeated records
    record = u32 name_len | name utf-8 | u32 rank | u32 dims[rank] | f64 data

Loading restores arrays by name and fails loudly on magic/version
mismatch or trailing garbage.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .errors import ContractError

__all__ = ["ParameterStore", "save_params", "load_params", "MAGIC", "VERSION"]

MAGIC = b"L3CK"
VERSION = 1


class ParameterStore:
    """Ordered name -> ndarray map with uniform fan-in initialisation."""

    def __init__(self, rng: np.random.Generator | None = None):
        self.arrays: dict[str, np.ndarray] = {}
        self.rng = rng

    def add(self, name: str, shape: tuple[int, ...], fan_in: int | None = None,
            zero: bool = False) -> np.ndarray:
        """Create a parameter. Weights draw U(-1/sqrt(fan_in), 1/sqrt(fan_in))
        with fan_in defaulting to the first dimension; biases pass zero=True."""
        if name in self.arrays:
            raise ContractError(f"duplicate parameter '{name}'")
        if zero:
            arr = np.zeros(shape, dtype=np.float64)
        else:
            if self.rng is None:
                raise ContractError("ParameterStore needs an rng to initialise weights")
            if fan_in is None:
                fan_in = shape[0]
            bound = 1.0 / np.sqrt(fan_in)
            arr = self.rng.uniform(-bound, bound, size=shape)
        self.arrays[name] = arr
        return arr

    def tensors(self) -> dict[str, Tensor]:
        """Trainable Tensor views aliasing the stored arrays (float64 passes
        through np.asarray uncopied), so adam_step updates are visible."""
        return {name: Tensor(arr, requires_grad=True, op=f"param:{name}")
                for name, arr in self.arrays.items()}

    def clone(self) -> "ParameterStore":
        dup = ParameterStore()
        dup.arrays = {k: v.copy() for k, v in self.arrays.items()}
        return dup

    def __contains__(self, name: str) -> bool:
        return name in self.arrays

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]


def save_params(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        for name, arr in arrays.items():
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_params(path: str | Path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise ContractError(f"{path}: bad checkpoint magic {blob[:4]!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise ContractError(f"{path}: unsupported checkpoint version {version}")
    pos = 8
    out: dict[str, np.ndarray] = {}

    def need(nbytes: int) -> None:
        if pos + nbytes > len(blob):
            raise ContractError(f"{path}: truncated or trailing bytes at offset {pos}")

    while pos < len(blob):
        need(4)
        (nlen,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        need(nlen)
        name = blob[pos:pos + nlen].decode("utf-8")
        pos += nlen
        need(4)
        (rank,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        need(4 * rank)
        shape = struct.unpack_from(f"<{rank}I", blob, pos)
        pos += 4 * rank
        count = int(np.prod(shape)) if rank else 1
        need(8 * count)
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=pos)
        pos += 8 * count
        out[name] = arr.reshape(shape).astype(np.float64)
    return out
