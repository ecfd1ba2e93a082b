"""Binary field and kernel dumps.

Field layout (little-endian): magic b"GPKF", uint32 version (1), uint32 dim,
uint32 points per axis, float64 box length, float64 snapshot time, then the
field values in C order as interleaved re/im float64 pairs.

Kernel layout: magic b"GPKK", uint32 version (1), uint32 dim, uint32 points
per axis, uint32 scale parameter N, float64 box length, then the dense
M x M kernel values (M = points^dim) row-major as interleaved re/im doubles.
"""

from __future__ import annotations

import struct

import numpy as np

from .dynamics import GridSpec, WaveFunction
from .errors import ConfigurationError

_MAGIC = b"GPKF"
_KERNEL_MAGIC = b"GPKK"
_VERSION = 1
_HEADER = struct.Struct("<4sIII d d")
_KERNEL_HEADER = struct.Struct("<4sIIII d")


def write_field(path, psi: WaveFunction, t: float = 0.0) -> None:
    grid = psi.grid
    header = _HEADER.pack(
        _MAGIC, _VERSION, grid.dim, grid.points_per_axis, grid.box_length, t
    )
    flat = np.ascontiguousarray(psi.values, dtype=np.complex128).reshape(-1)
    interleaved = np.empty(2 * flat.size, dtype="<f8")
    interleaved[0::2] = flat.real
    interleaved[1::2] = flat.imag
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(interleaved.tobytes())


def read_field(path, dt: float = 1e-3, t_final: float = 0.0):
    """Returns (WaveFunction, snapshot_time); dt/t_final seed the GridSpec."""
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        if len(raw) < _HEADER.size:
            raise ConfigurationError(f"{path} is not a gpk field dump")
        magic, version, dim, n, L, t = _HEADER.unpack(raw)
        if magic != _MAGIC or version != _VERSION:
            raise ConfigurationError(f"{path} is not a gpk field dump")
        data = np.frombuffer(fh.read(), dtype="<f8")
    M = n**dim
    if data.size != 2 * M:
        raise ConfigurationError(f"{path}: expected {2 * M} doubles, got {data.size}")
    vals = (data[0::2] + 1j * data[1::2]).reshape((n,) * dim)
    grid = GridSpec(dim=dim, box_length=L, points_per_axis=n, dt=dt,
                    t_final=t_final)
    return WaveFunction(values=vals, grid=grid), t


def write_kernel(path, kernel, N: int) -> None:
    grid = kernel.grid
    header = _KERNEL_HEADER.pack(
        _KERNEL_MAGIC, _VERSION, grid.dim, grid.points_per_axis, int(N),
        grid.box_length,
    )
    flat = np.ascontiguousarray(kernel.values, dtype=np.complex128).reshape(-1)
    interleaved = np.empty(2 * flat.size, dtype="<f8")
    interleaved[0::2] = flat.real
    interleaved[1::2] = flat.imag
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(interleaved.tobytes())


def read_kernel(path):
    """Returns (values as an (M, M) complex array, dim, n, N, box_length)."""
    with open(path, "rb") as fh:
        raw = fh.read(_KERNEL_HEADER.size)
        if len(raw) < _KERNEL_HEADER.size:
            raise ConfigurationError(f"{path} is not a gpk kernel dump")
        magic, version, dim, n, N, L = _KERNEL_HEADER.unpack(raw)
        if magic != _KERNEL_MAGIC or version != _VERSION:
            raise ConfigurationError(f"{path} is not a gpk kernel dump")
        data = np.frombuffer(fh.read(), dtype="<f8")
    M = n**dim
    if data.size != 2 * M * M:
        raise ConfigurationError(f"{path}: truncated kernel dump")
    vals = (data[0::2] + 1j * data[1::2]).reshape(M, M)
    return vals, dim, n, N, L
